//! Experiment catalogue and the code that runs each one.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::bail;
use dfrc_core::eval::{
    ber, binomial_sigma, constellation_points, log_pfa_grid, monte_carlo_roc, roc_over_channels, sum_rate_at_snr,
};
use dfrc_core::model::derive_seed;
use dfrc_core::objective::ObjectiveContext;
use dfrc_core::{
    admm_design, mm_design, mui_energy, radar_only_design, relative_entropy, ConstraintMode, InnerSolver, MmOptions,
    OuterAdmmOptions, Scenario, ScenarioConfig, SolverReport, Waveform,
};
use rayon::prelude::*;

use crate::output::{config_hash, ArtifactRecord, Output, RunInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Convergence,
    MuiTrace,
    Constellation,
    Roc,
    RocChannels,
    EntropyVsEnergy,
    Ber,
    SumRate,
    EntropyVsEps,
    EntropyVsEc,
    EntropyVsUsers,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Convergence,
        Experiment::MuiTrace,
        Experiment::Constellation,
        Experiment::Roc,
        Experiment::RocChannels,
        Experiment::EntropyVsEnergy,
        Experiment::Ber,
        Experiment::SumRate,
        Experiment::EntropyVsEps,
        Experiment::EntropyVsEc,
        Experiment::EntropyVsUsers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::MuiTrace => "mui-trace",
            Experiment::Constellation => "constellation",
            Experiment::Roc => "roc",
            Experiment::RocChannels => "roc-channels",
            Experiment::EntropyVsEnergy => "entropy-vs-energy",
            Experiment::Ber => "ber",
            Experiment::SumRate => "sum-rate",
            Experiment::EntropyVsEps => "entropy-vs-eps",
            Experiment::EntropyVsEc => "entropy-vs-ec",
            Experiment::EntropyVsUsers => "entropy-vs-users",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn default_algorithms(self) -> &'static [Algorithm] {
        use Algorithm::*;
        match self {
            Experiment::Convergence | Experiment::MuiTrace => &[MmSdr, MmAdmm, Admm],
            Experiment::Constellation | Experiment::RocChannels | Experiment::Ber | Experiment::SumRate => &[Admm],
            Experiment::Roc => &[RadarOnly, Admm, QuasiOrthogonal],
            Experiment::EntropyVsEnergy => &[MmAdmm, Admm, RadarOnly],
            Experiment::EntropyVsEps | Experiment::EntropyVsEc | Experiment::EntropyVsUsers => &[MmAdmm, Admm],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    MmSdr,
    MmAdmm,
    Admm,
    RadarOnly,
    QuasiOrthogonal,
}

impl Algorithm {
    const ALL: [Algorithm; 5] = [
        Algorithm::MmSdr,
        Algorithm::MmAdmm,
        Algorithm::Admm,
        Algorithm::RadarOnly,
        Algorithm::QuasiOrthogonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MmSdr => "mm-sdr",
            Algorithm::MmAdmm => "mm-admm",
            Algorithm::Admm => "admm",
            Algorithm::RadarOnly => "radar-only",
            Algorithm::QuasiOrthogonal => "quasi-orthogonal",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeChoice {
    Energy,
    Papr,
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub experiment: Experiment,
    pub scenario: ScenarioConfig,
    pub algorithms: Vec<Algorithm>,
    pub sweep: Option<Vec<f64>>,
    pub mode: Option<ModeChoice>,
    pub trials: usize,
    pub channels: usize,
    pub jobs: usize,
    pub small: bool,
    pub out: PathBuf,
}

impl RunSpec {
    fn modes(&self, both_by_default: bool) -> Vec<ConstraintMode<f64>> {
        let papr = ConstraintMode::Papr {
            limit: self.scenario.papr_limit,
        };
        match self.mode {
            Some(ModeChoice::Energy) => vec![ConstraintMode::Energy],
            Some(ModeChoice::Papr) => vec![papr],
            None if both_by_default => vec![ConstraintMode::Energy, papr],
            None => vec![ConstraintMode::Energy],
        }
    }

    fn monte_carlo_seed(&self) -> u64 {
        derive_seed(self.scenario.rng_seed, 0x4d43)
    }
}

struct Design {
    waveform: Waveform,
    report: Option<SolverReport<f64>>,
    entropy: f64,
    mui: f64,
}

fn design(algorithm: Algorithm, scenario: &Scenario<f64>, mode: ConstraintMode<f64>) -> anyhow::Result<Design> {
    let report = match algorithm {
        Algorithm::MmSdr => Some(mm_design(scenario, InnerSolver::Sdr, mode, &MmOptions::default())?),
        Algorithm::MmAdmm => Some(mm_design(scenario, InnerSolver::Admm, mode, &MmOptions::default())?),
        Algorithm::Admm => Some(admm_design(scenario, mode, &OuterAdmmOptions::default())?),
        Algorithm::RadarOnly => Some(radar_only_design(scenario, mode, &MmOptions::default())?),
        Algorithm::QuasiOrthogonal => None,
    };
    let waveform = match &report {
        Some(r) => r.final_waveform.clone(),
        None => scenario.initial.clone(),
    };
    let ctx = ObjectiveContext::new(scenario.target.clone(), scenario.noise_power())?;
    Ok(Design {
        entropy: relative_entropy(&waveform, &ctx)?,
        mui: mui_energy(&waveform, &scenario.comm)?,
        waveform,
        report,
    })
}

struct Task {
    point: usize,
    algorithm: Algorithm,
    mode: ConstraintMode<f64>,
}

struct Outcome {
    point: usize,
    algorithm: Algorithm,
    mode: ConstraintMode<f64>,
    scenario: Scenario<f64>,
    result: Result<Design, String>,
}

/// Runs every (point, algorithm, mode) design on the current pool, in task order.
fn run_designs(
    configs: &[ScenarioConfig],
    algorithms: &[Algorithm],
    modes: &[ConstraintMode<f64>],
) -> anyhow::Result<Vec<Outcome>> {
    let scenarios = configs
        .iter()
        .map(Scenario::<f64>::from_config)
        .collect::<Result<Vec<_>, _>>()?;
    let mut tasks = Vec::new();
    for point in 0..configs.len() {
        for &algorithm in algorithms {
            for &mode in modes {
                tasks.push(Task { point, algorithm, mode });
            }
        }
    }
    Ok(tasks
        .into_par_iter()
        .map(|t| {
            let scenario = scenarios[t.point].clone();
            let result = design(t.algorithm, &scenario, t.mode).map_err(|e| format!("{e:#}"));
            if let Err(e) = &result {
                log::warn!("{} ({}) at point {}: {e}", t.algorithm.name(), t.mode.name(), t.point);
            }
            Outcome {
                point: t.point,
                algorithm: t.algorithm,
                mode: t.mode,
                scenario,
                result,
            }
        })
        .collect())
}

fn base_record(o: &Outcome, file: String) -> ArtifactRecord {
    let mut rec = ArtifactRecord {
        file,
        algorithm: o.algorithm.name().into(),
        mode: o.mode.name().into(),
        ..Default::default()
    };
    match &o.result {
        Ok(d) => {
            rec.final_objective = Some(d.entropy);
            if let Some(r) = &d.report {
                rec.converged = Some(r.converged);
                rec.iterations = Some(r.iterations);
            }
        }
        Err(e) => rec.note = Some(e.clone()),
    }
    rec
}

/// Plain-text table with right-aligned columns.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn print(&self) {
        let mut width: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, w) in cells.iter().zip(&width) {
                let _ = write!(s, "{c:>w$}  ");
            }
            println!("{}", s.trim_end());
        };
        line(&self.header);
        for r in &self.rows {
            line(r);
        }
    }
}

fn status(o: &Outcome) -> String {
    match &o.result {
        Ok(d) => match &d.report {
            Some(r) if !r.converged => "max-iter".into(),
            _ => "ok".into(),
        },
        Err(_) => "failed".into(),
    }
}

fn check_grid(grid: &[f64]) -> anyhow::Result<()> {
    if grid.is_empty() {
        bail!("sweep grid is empty");
    }
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        bail!("sweep grid must be strictly monotone");
    }
    Ok(())
}

pub fn run(spec: &RunSpec) -> anyhow::Result<()> {
    spec.scenario.validate()?;
    let hash = config_hash(&spec.scenario);
    let out = Output::new(&spec.out, spec.experiment.name(), spec.scenario.rng_seed, &hash)?;
    match spec.experiment {
        Experiment::Convergence => convergence(spec, &out, false)?,
        Experiment::MuiTrace => convergence(spec, &out, true)?,
        Experiment::Constellation => constellation(spec, &out)?,
        Experiment::Roc => roc(spec, &out)?,
        Experiment::RocChannels => roc_channels(spec, &out)?,
        Experiment::EntropyVsEnergy => entropy_sweep(spec, &out, "transmit_energy", &[0.5, 1.0, 2.0])?,
        Experiment::EntropyVsEps => entropy_sweep(spec, &out, "mui_budget", &[1e-2, 1e-4, 1e-6])?,
        Experiment::EntropyVsEc => entropy_sweep(spec, &out, "symbol_energy", &[0.1, 0.4, 0.7])?,
        Experiment::EntropyVsUsers => entropy_sweep(spec, &out, "n_users", &[2.0, 4.0, 6.0])?,
        Experiment::Ber => communication(spec, &out, false)?,
        Experiment::SumRate => communication(spec, &out, true)?,
    }
    let run = RunInfo {
        experiment: spec.experiment.name().into(),
        algorithms: spec.algorithms.iter().map(|a| a.name().to_string()).collect(),
        mode: spec.mode.map(|m| format!("{m:?}").to_lowercase()),
        sweep: spec.sweep.clone(),
        trials: spec.trials,
        channels: spec.channels,
        seed: spec.scenario.rng_seed,
        monte_carlo_seed: spec.monte_carlo_seed(),
        jobs: spec.jobs,
        small: spec.small,
        config_hash: hash,
        dfrc_version: env!("CARGO_PKG_VERSION").into(),
        all_converged: true,
    };
    let path = out.finish(run, &spec.scenario)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn convergence(spec: &RunSpec, out: &Output, mui_only: bool) -> anyhow::Result<()> {
    let outcomes = run_designs(std::slice::from_ref(&spec.scenario), &spec.algorithms, &spec.modes(true))?;
    let mut table = Table::new(&["algorithm", "mode", "iterations", "entropy", "mui", "seconds", "status"]);
    for o in &outcomes {
        let prefix = if mui_only { "mui_trace" } else { "convergence" };
        let file = format!("{prefix}_{}_{}.csv", o.algorithm.name(), o.mode.name());
        let mut rec = base_record(o, file);
        let mut row = vec![o.algorithm.name().to_string(), o.mode.name().to_string()];
        match &o.result {
            Ok(d) => {
                if let Some(r) = &d.report {
                    let body = if mui_only {
                        match &r.mui_trace {
                            Some(t) => {
                                let mut s = String::from("iteration,time_s,mui\n");
                                for (k, (m, ts)) in t.iter().zip(&r.time_trace).enumerate() {
                                    let _ = writeln!(s, "{k},{ts:.6},{m:e}");
                                }
                                Some(s)
                            }
                            None => None,
                        }
                    } else {
                        Some(r.to_csv())
                    };
                    match body {
                        Some(b) => out.write(rec, &b)?,
                        None => log::info!("{}: no MUI trace (constraint off)", o.algorithm.name()),
                    }
                    row.extend([
                        r.iterations.to_string(),
                        format!("{:.6}", d.entropy),
                        format!("{:.3e}", d.mui),
                        format!("{:.2}", r.wall_time.as_secs_f64()),
                        status(o),
                    ]);
                } else {
                    row.extend(["-".into(), format!("{:.6}", d.entropy), format!("{:.3e}", d.mui), "-".into(), "ok".into()]);
                }
            }
            Err(e) => {
                rec.file = String::new();
                log::info!("skipped: {e}");
                out.record(rec);
                row.extend(["-".into(), "-".into(), "-".into(), "-".into(), "skipped".into()]);
            }
        }
        table.row(row);
    }
    table.print();
    Ok(())
}

fn constellation(spec: &RunSpec, out: &Output) -> anyhow::Result<()> {
    let outcomes = run_designs(std::slice::from_ref(&spec.scenario), &spec.algorithms, &spec.modes(false))?;
    let mut table = Table::new(&["algorithm", "mode", "mui", "max_deviation"]);
    for o in &outcomes {
        let Ok(d) = &o.result else {
            out.record(base_record(o, String::new()));
            continue;
        };
        let s = &o.scenario.comm.symbols;
        let pts = constellation_points(&d.waveform, &o.scenario.comm.channel)?;
        let mut body = String::from("user,symbol,re,im,desired_re,desired_im\n");
        let mut max_dev: f64 = 0.0;
        for m in 0..pts.nrows() {
            for l in 0..pts.ncols() {
                let p = pts[(m, l)];
                let q = s[(m, l)];
                max_dev = max_dev.max((p - q).norm());
                let _ = writeln!(body, "{m},{l},{:e},{:e},{:e},{:e}", p.re, p.im, q.re, q.im);
            }
        }
        let file = format!("constellation_{}_{}.csv", o.algorithm.name(), o.mode.name());
        out.write(base_record(o, file), &body)?;
        table.row(vec![
            o.algorithm.name().into(),
            o.mode.name().into(),
            format!("{:.3e}", d.mui),
            format!("{max_dev:.3e}"),
        ]);
    }
    table.print();
    Ok(())
}

/// False-alarm grid down to the rate that still has 100 H₀ exceedances.
fn pfa_grid(trials: usize) -> Vec<f64> {
    let lo = -((trials as f64 / 100.0).log10().floor() as i32).clamp(1, 6);
    log_pfa_grid(lo, 4)
}

fn roc(spec: &RunSpec, out: &Output) -> anyhow::Result<()> {
    let outcomes = run_designs(std::slice::from_ref(&spec.scenario), &spec.algorithms, &spec.modes(false))?;
    let grid = pfa_grid(spec.trials);
    let mut table = Table::new(&["algorithm", "mode", "entropy", "pd@1e-2", "3sigma"]);
    for o in &outcomes {
        let Ok(d) = &o.result else {
            out.record(base_record(o, String::new()));
            continue;
        };
        let curve = monte_carlo_roc(
            &d.waveform,
            &o.scenario.target,
            o.scenario.noise_power(),
            &grid,
            spec.trials,
            spec.monte_carlo_seed(),
        )?;
        let file = format!("roc_{}_{}.csv", o.algorithm.name(), o.mode.name());
        out.write(base_record(o, file), &curve.to_csv())?;
        let pd = curve.pd_at(1e-2);
        table.row(vec![
            o.algorithm.name().into(),
            o.mode.name().into(),
            format!("{:.5}", d.entropy),
            format!("{pd:.5}"),
            format!("{:.5}", 3.0 * binomial_sigma(pd, spec.trials)),
        ]);
    }
    table.print();
    Ok(())
}

fn roc_channels(spec: &RunSpec, out: &Output) -> anyhow::Result<()> {
    let grid = pfa_grid(spec.trials);
    let modes = spec.modes(false);
    let mut jobs = Vec::new();
    for &a in &spec.algorithms {
        for &m in &modes {
            jobs.push((a, m));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(alg, mode)| {
            let curve = roc_over_channels(
                &spec.scenario,
                |sc: &Scenario<f64>| design(alg, sc, mode).map(|d| d.waveform).map_err(|e| dfrc_core::DfrcError::Config(format!("{e:#}"))),
                spec.channels,
                &grid,
                spec.trials,
                spec.monte_carlo_seed(),
            );
            (alg, mode, curve)
        })
        .collect();
    let mut table = Table::new(&["algorithm", "mode", "channels", "mean pd@1e-2", "min", "max"]);
    for (alg, mode, curve) in results {
        let curve = curve?;
        let rec = |file: String| ArtifactRecord {
            file,
            algorithm: alg.name().into(),
            mode: mode.name().into(),
            ..Default::default()
        };
        out.write(rec(format!("roc_channels_{}_{}.csv", alg.name(), mode.name())), &curve.mean.to_csv())?;
        for (c, r) in curve.per_channel.iter().enumerate() {
            let mut record = rec(format!("roc_channels_{}_{}_ch{c}.csv", alg.name(), mode.name()));
            record.sweep_key = Some("channel".into());
            record.sweep_value = Some(c as f64);
            out.write(record, &r.to_csv())?;
        }
        let at: Vec<f64> = curve.per_channel.iter().map(|r| r.pd_at(1e-2)).collect();
        table.row(vec![
            alg.name().into(),
            mode.name().into(),
            spec.channels.to_string(),
            format!("{:.5}", curve.mean.pd_at(1e-2)),
            format!("{:.5}", at.iter().cloned().fold(f64::INFINITY, f64::min)),
            format!("{:.5}", at.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        ]);
    }
    table.print();
    Ok(())
}

fn apply_sweep(cfg: &ScenarioConfig, key: &str, v: f64) -> anyhow::Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match key {
        "transmit_energy" => c.transmit_energy = v,
        "mui_budget" => c.mui_budget = v,
        "symbol_energy" => c.symbol_energy = v,
        "n_users" => {
            if v < 1.0 || v.fract() != 0.0 {
                bail!("n_users sweep values must be positive integers, got {v}");
            }
            c.n_users = v as usize;
        }
        other => bail!("unknown sweep key {other}"),
    }
    c.validate()?;
    Ok(c)
}

fn sweep_configs(spec: &RunSpec, key: &str, default: &[f64]) -> anyhow::Result<(Vec<f64>, Vec<ScenarioConfig>)> {
    let grid = spec.sweep.clone().unwrap_or_else(|| default.to_vec());
    check_grid(&grid)?;
    let configs = grid
        .iter()
        .map(|&v| apply_sweep(&spec.scenario, key, v))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((grid, configs))
}

fn entropy_sweep(spec: &RunSpec, out: &Output, key: &str, default: &[f64]) -> anyhow::Result<()> {
    let (grid, configs) = sweep_configs(spec, key, default)?;
    let outcomes = run_designs(&configs, &spec.algorithms, &spec.modes(false))?;
    let mut summary = format!("{key},algorithm,mode,entropy,mui,iterations,converged\n");
    let mut table = Table::new(&[key, "algorithm", "mode", "entropy", "mui", "status"]);
    for o in &outcomes {
        let v = grid[o.point];
        let mut row = vec![format!("{v}"), o.algorithm.name().into(), o.mode.name().into()];
        match &o.result {
            Ok(d) => {
                let (iters, conv) = match &d.report {
                    Some(r) => (r.iterations.to_string(), r.converged.to_string()),
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(
                    summary,
                    "{v},{},{},{:.12},{:e},{iters},{conv}",
                    o.algorithm.name(),
                    o.mode.name(),
                    d.entropy,
                    d.mui
                );
                if let Some(r) = &d.report {
                    let file = format!("{}_{}_{}_{v:e}.csv", spec.experiment.name().replace('-', "_"), o.algorithm.name(), o.mode.name());
                    let mut rec = base_record(o, file);
                    rec.sweep_key = Some(key.into());
                    rec.sweep_value = Some(v);
                    out.write(rec, &r.to_csv())?;
                }
                row.extend([format!("{:.6}", d.entropy), format!("{:.3e}", d.mui), status(o)]);
            }
            Err(e) => {
                out.record(base_record(o, String::new()));
                let _ = writeln!(summary, "{v},{},{},,,,", o.algorithm.name(), o.mode.name());
                row.extend(["-".into(), "-".into(), format!("failed: {e}")]);
            }
        }
        table.row(row);
    }
    let summary_rec = ArtifactRecord {
        file: format!("{}.csv", spec.experiment.name().replace('-', "_")),
        algorithm: spec.algorithms.iter().map(|a| a.name()).collect::<Vec<_>>().join(","),
        mode: spec.modes(false).iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        sweep_key: Some(key.into()),
        ..Default::default()
    };
    out.write(summary_rec, &summary)?;
    table.print();
    Ok(())
}

const SNR_GRID_DB: [f64; 8] = [-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];

fn communication(spec: &RunSpec, out: &Output, rate: bool) -> anyhow::Result<()> {
    let (grid, configs) = sweep_configs(spec, "mui_budget", &[1e-2, 1e-4, 1e-6])?;
    let outcomes = run_designs(&configs, &spec.algorithms, &spec.modes(false))?;
    let metric = if rate { "sum_rate@10dB" } else { "ber@10dB" };
    let mut table = Table::new(&["mui_budget", "algorithm", "mode", "mui", metric]);
    for o in &outcomes {
        let eps = grid[o.point];
        let Ok(d) = &o.result else {
            out.record(base_record(o, String::new()));
            continue;
        };
        let comm = &o.scenario.comm;
        let (body, at10) = if rate {
            let mut body = String::from("snr_db,sum_rate\n");
            let mut at10 = f64::NAN;
            for &snr in &SNR_GRID_DB {
                let r = sum_rate_at_snr(&d.waveform, &comm.channel, &comm.symbols, snr)?;
                let _ = writeln!(body, "{snr},{r:.10}");
                if snr == 10.0 {
                    at10 = r;
                }
            }
            (body, at10)
        } else {
            let curve = ber(&d.waveform, &comm.channel, &comm.symbols, &SNR_GRID_DB, spec.trials, spec.monte_carlo_seed())?;
            let at10 = SNR_GRID_DB.iter().position(|&s| s == 10.0).map(|i| curve.ber[i]).unwrap_or(f64::NAN);
            (curve.to_csv(), at10)
        };
        let prefix = if rate { "sum_rate" } else { "ber" };
        let file = format!("{prefix}_{}_{}_eps{eps:e}.csv", o.algorithm.name(), o.mode.name());
        let mut rec = base_record(o, file);
        rec.sweep_key = Some("mui_budget".into());
        rec.sweep_value = Some(eps);
        out.write(rec, &body)?;
        table.row(vec![
            format!("{eps:e}"),
            o.algorithm.name().into(),
            o.mode.name().into(),
            format!("{:.3e}", d.mui),
            format!("{at10:.6e}"),
        ]);
    }
    table.print();
    Ok(())
}
