//! `dfrc`: runs the waveform-design experiments and writes their curves.

mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use dfrc_core::ScenarioConfig;

use crate::experiments::{Algorithm, Experiment, RunSpec};

#[derive(Parser, Debug)]
#[command(name = "dfrc", version, about = "Waveform design experiments for MIMO DFRC transmitters")]
struct Args {
    /// Scenario file (TOML); keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name; run with an unknown name to list them.
    #[arg(long)]
    experiment: String,
    /// Comma-separated algorithms (mm-sdr, mm-admm, admm, radar-only, quasi-orthogonal).
    #[arg(long)]
    algorithms: Option<String>,
    /// Monte-Carlo trials for ROC and BER.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Scenario seed; defaults to `rng_seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points and Monte-Carlo blocks.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Start from the reduced preset (N_T = N_R = 4, L = 8, M = 2).
    #[arg(long)]
    small: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated sweep grid replacing the experiment default.
    #[arg(long)]
    sweep: Option<String>,
    /// Constraint set: energy or papr (convergence and mui-trace run both by default).
    #[arg(long)]
    mode: Option<String>,
    /// Channel draws for roc-channels.
    #[arg(long, default_value_t = 5)]
    channels: usize,
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).with_context(|| format!("invalid {what} '{s}'")))
        .collect()
}

fn build_spec(args: &Args, experiment: Experiment) -> anyhow::Result<RunSpec> {
    let base = if args.small { ScenarioConfig::small() } else { ScenarioConfig::default() };
    let mut scenario = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            base.overlay_toml_str(&text)
                .with_context(|| format!("invalid configuration {}", path.display()))?
        }
        None => base,
    };
    if let Some(seed) = args.seed {
        scenario.rng_seed = seed;
    }
    let algorithms = match &args.algorithms {
        Some(text) => {
            let list = parse_list(text, "algorithm", Algorithm::parse)?;
            if list.is_empty() {
                bail!("--algorithms is empty");
            }
            list
        }
        None => experiment.default_algorithms().to_vec(),
    };
    let sweep = match &args.sweep {
        Some(text) => Some(parse_list(text, "sweep value", |s| s.parse::<f64>().ok())?),
        None => None,
    };
    let modes = match args.mode.as_deref() {
        None => None,
        Some("energy") => Some(experiments::ModeChoice::Energy),
        Some("papr") => Some(experiments::ModeChoice::Papr),
        Some(other) => bail!("invalid mode '{other}' (expected energy or papr)"),
    };
    if args.trials == 0 {
        bail!("--trials must be positive");
    }
    if args.channels == 0 {
        bail!("--channels must be positive");
    }
    Ok(RunSpec {
        experiment,
        scenario,
        algorithms,
        sweep,
        mode: modes,
        trials: args.trials,
        channels: args.channels,
        jobs: args.jobs.max(1),
        small: args.small,
        out: args.out.clone(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let Some(experiment) = Experiment::parse(&args.experiment) else {
        eprintln!(
            "unknown experiment '{}'; valid names: {}",
            args.experiment,
            Experiment::ALL.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
        );
        return ExitCode::from(2);
    };
    let spec = match build_spec(&args, experiment) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| experiments::run(&spec)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
