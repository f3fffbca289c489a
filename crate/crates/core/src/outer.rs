//! Top-level designers: MM over the per-iteration QCQP, the direct outer ADMM,
//! and the radar-only variant without the MUI constraint.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{DfrcError, Result};
use crate::linalg::norm_sq;
use crate::minorize::{surrogate_at, Surrogate};
use crate::model::{Scenario, WaveformMatrix};
use crate::objective::{check_feasibility, mui_energy, relative_entropy, ConstraintMode, ObjectiveContext};
use crate::papr::{solve_papr_qp, PaprQpOptions, PaprSet};
use crate::qcqp::{
    admm_qcqp, admm_qcqp_papr, homogenize, project_ball, rank_one_extract, restore_energy_mui, solve_norm_ball_quadratic,
    solve_sdr, InnerAdmmOptions, RankOneOptions, SdrOptions,
};
use crate::scalar::{re, CMat, CVec, Real};

/// QCQP solver used inside each MM iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerSolver {
    Sdr,
    Admm,
}

#[derive(Clone, Debug)]
pub struct MmOptions<T> {
    /// Stop when `|D_k − D_{k−1}| / D_k < xi`.
    pub xi: T,
    pub max_iter: usize,
    pub inner_admm: InnerAdmmOptions<T>,
    pub sdr: SdrOptions<T>,
    pub rank_one: RankOneOptions<T>,
    /// Radar-only inner solve in PAPR mode.
    pub papr: PaprQpOptions<T>,
}

impl<T: Real> Default for MmOptions<T> {
    fn default() -> Self {
        Self {
            xi: T::lit(1e-4),
            max_iter: 500,
            inner_admm: InnerAdmmOptions::default(),
            sdr: SdrOptions::default(),
            rank_one: RankOneOptions::default(),
            papr: PaprQpOptions {
                tol: T::lit(1e-8),
                max_iter: 500,
                ..PaprQpOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct OuterAdmmOptions<T> {
    /// Initial penalty `ν`.
    pub nu: T,
    pub adaptive_nu: bool,
    pub tol_primal: T,
    pub tol_dual: T,
    pub max_iter: usize,
    /// Surrogate iterations per X-update.
    pub inner_mm_iters: usize,
    /// Relative improvement below which the X-update stops early.
    pub xi: T,
    pub papr: PaprQpOptions<T>,
}

impl<T: Real> Default for OuterAdmmOptions<T> {
    fn default() -> Self {
        Self {
            nu: T::one(),
            adaptive_nu: true,
            tol_primal: T::lit(1e-6),
            tol_dual: T::lit(1e-3),
            max_iter: 3000,
            inner_mm_iters: 20,
            xi: T::lit(1e-4),
            papr: PaprQpOptions {
                tol: T::lit(1e-8),
                max_iter: 200,
                ..PaprQpOptions::default()
            },
        }
    }
}

/// Auxiliary state of the outer ADMM, in vectorized form
/// (`u = vec(U)`, `λ = vec(Λ)`, both indexed `m·L + l`).
#[derive(Clone, Debug)]
pub struct OuterAdmmState<T: Real> {
    pub x: WaveformMatrix<T>,
    pub u: CVec<T>,
    pub lambda: CVec<T>,
    pub nu: T,
    pub primal_residual: T,
    pub dual_residual: T,
}

#[derive(Clone, Debug)]
pub struct SolverReport<T: Real> {
    pub algorithm: &'static str,
    pub constraint_mode: ConstraintMode<T>,
    /// Relative entropy of the start point followed by one value per outer iteration.
    pub objective_trace: Vec<T>,
    /// MUI energy per entry of `objective_trace`; `None` when the MUI constraint is off.
    pub mui_trace: Option<Vec<T>>,
    /// `(primal, dual)` residuals per outer iteration (inner ADMM, SDP, or outer ADMM).
    pub residual_trace: Vec<(T, T)>,
    /// Seconds since the start for every entry of `objective_trace`.
    pub time_trace: Vec<f64>,
    pub final_waveform: WaveformMatrix<T>,
    pub iterations: usize,
    pub wall_time: Duration,
    pub converged: bool,
}

impl<T: Real> SolverReport<T> {
    pub fn final_objective(&self) -> T {
        *self.objective_trace.last().expect("trace holds at least the start point")
    }

    /// One row per trace entry; residual columns are empty for the start point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,time_s,objective,mui,primal_residual,dual_residual\n");
        for (k, d) in self.objective_trace.iter().enumerate() {
            let mui = match &self.mui_trace {
                Some(t) => format!("{:e}", t[k].as_f64()),
                None => String::new(),
            };
            let (p, q) = match k.checked_sub(1).and_then(|i| self.residual_trace.get(i)) {
                Some((p, q)) => (format!("{:e}", p.as_f64()), format!("{:e}", q.as_f64())),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{k},{:.6},{:.12},{mui},{p},{q}", self.time_trace[k], d.as_f64());
        }
        out
    }
}

fn context<T: Real>(scenario: &Scenario<T>) -> Result<ObjectiveContext<T>> {
    ObjectiveContext::new(scenario.target.clone(), scenario.noise_power())
}

fn papr_set<T: Real>(scenario: &Scenario<T>, limit: T) -> Result<PaprSet<T>> {
    PaprSet::for_budget(scenario.transmit_energy(), scenario.config.n_tx, limit, scenario.config.code_length)
}

/// Relative change with the zero-objective guard.
fn relative_change<T: Real>(new: T, old: T) -> T {
    let diff = (new - old).abs();
    if new.abs() < T::lit(1e-12) {
        diff
    } else {
        diff / new.abs()
    }
}

/// Quasi-orthogonal start moved onto the constraint set.
///
/// Energy mode uses the exact energy/MUI restoration. PAPR mode runs the
/// inner ADMM on the proximity objective `−‖x − x_qo‖²`.
pub fn feasible_start<T: Real>(scenario: &Scenario<T>, mode: ConstraintMode<T>, options: &InnerAdmmOptions<T>) -> Result<WaveformMatrix<T>> {
    let l = scenario.config.code_length;
    let n_tx = scenario.config.n_tx;
    let x0 = scenario.initial.to_vec();
    let comm = &scenario.comm;
    let x = match mode {
        ConstraintMode::Energy => {
            restore_energy_mui(&x0, &comm.channel_op(), &comm.symbol_vec(), comm.mui_budget, scenario.transmit_energy())?.x
        }
        ConstraintMode::Papr { limit } => {
            let set = papr_set(scenario, limit)?;
            let n = x0.len();
            let proximity = Surrogate {
                quad: -CMat::identity(n, n),
                lin: x0.clone(),
                anchor: x0.clone(),
                anchor_objective: T::zero(),
            };
            admm_qcqp_papr(&proximity, comm, &set, options)?.x
        }
    };
    Ok(WaveformMatrix::from_vec(&x, l, n_tx))
}

fn is_feasible<T: Real>(x: &WaveformMatrix<T>, scenario: &Scenario<T>, mode: ConstraintMode<T>, with_mui: bool) -> Result<bool> {
    let f = check_feasibility(x, &scenario.comm, scenario.transmit_energy(), mode)?;
    Ok(f.energy_ok && f.papr_ok && (!with_mui || f.mui_ok))
}

struct Recorder<T: Real> {
    start: Instant,
    objective: Vec<T>,
    mui: Option<Vec<T>>,
    residual: Vec<(T, T)>,
    time: Vec<f64>,
}

impl<T: Real> Recorder<T> {
    fn new(track_mui: bool) -> Self {
        Self {
            start: Instant::now(),
            objective: Vec::new(),
            mui: track_mui.then(Vec::new),
            residual: Vec::new(),
            time: Vec::new(),
        }
    }

    fn push(&mut self, x: &WaveformMatrix<T>, d: T, scenario: &Scenario<T>) -> Result<()> {
        self.objective.push(d);
        if let Some(m) = self.mui.as_mut() {
            m.push(mui_energy(x, &scenario.comm)?);
        }
        self.time.push(self.start.elapsed().as_secs_f64());
        Ok(())
    }

    fn finish(self, algorithm: &'static str, mode: ConstraintMode<T>, x: WaveformMatrix<T>, iterations: usize, converged: bool) -> SolverReport<T> {
        SolverReport {
            algorithm,
            constraint_mode: mode,
            objective_trace: self.objective,
            mui_trace: self.mui,
            residual_trace: self.residual,
            time_trace: self.time,
            final_waveform: x,
            iterations,
            wall_time: self.start.elapsed(),
            converged,
        }
    }
}

/// Which per-iteration subproblem an MM run solves.
enum MmStep {
    Sdr,
    Admm,
    /// No MUI constraint.
    RadarOnly,
}

fn run_mm<T: Real>(
    scenario: &Scenario<T>,
    step: MmStep,
    mode: ConstraintMode<T>,
    options: &MmOptions<T>,
    algorithm: &'static str,
) -> Result<SolverReport<T>> {
    let ctx = context(scenario)?;
    let (l, n_tx) = (scenario.config.code_length, scenario.config.n_tx);
    let p_t = scenario.transmit_energy();
    let comm = &scenario.comm;
    let with_mui = !matches!(step, MmStep::RadarOnly);
    let set = match mode {
        ConstraintMode::Papr { limit } => Some(papr_set(scenario, limit)?),
        ConstraintMode::Energy => None,
    };
    let mut rec = Recorder::new(with_mui);
    let mut x = if with_mui {
        feasible_start(scenario, mode, &options.inner_admm)?
    } else {
        scenario.initial.clone()
    };
    let mut d = relative_entropy(&x, &ctx)?;
    rec.push(&x, d, scenario)?;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..options.max_iter {
        let sur = surrogate_at(&x, &ctx)?;
        let (next, residual) = match (&step, &set) {
            (MmStep::Sdr, None) => {
                let hp = homogenize(&sur, comm, p_t, comm.mui_budget);
                let sol = solve_sdr(&hp, &options.sdr)?;
                if !sol.converged {
                    log::warn!("{algorithm}: SDP stopped at gap {:e}", sol.gap.as_f64());
                }
                let r1 = rank_one_extract(&sol.matrix, &hp, &options.rank_one)?;
                (r1.x, (sol.primal_residual, sol.gap))
            }
            (MmStep::Sdr, Some(_)) => return Err(DfrcError::Unsupported("the SDR inner solver with a PAPR constraint")),
            (MmStep::Admm, None) => {
                let out = admm_qcqp(&sur, comm, p_t, &options.inner_admm)?;
                if !out.converged {
                    log::debug!("{algorithm}: inner ADMM hit {} iterations", out.iterations);
                }
                (out.x, (out.state.primal_residual, out.state.dual_residual))
            }
            (MmStep::Admm, Some(set)) => {
                let out = admm_qcqp_papr(&sur, comm, set, &options.inner_admm)?;
                (out.x, (out.state.primal_residual, out.state.dual_residual))
            }
            (MmStep::RadarOnly, None) => {
                let sol = solve_norm_ball_quadratic(&(-&sur.quad), &(-&sur.lin), p_t)?;
                (sol.x, (T::zero(), T::zero()))
            }
            (MmStep::RadarOnly, Some(set)) => {
                let out = solve_papr_qp(&(-&sur.quad), &(-&sur.lin), set, Some(&sur.anchor), &options.papr)?;
                (out.x, (T::zero(), T::zero()))
            }
        };
        let candidate = WaveformMatrix::from_vec(&next, l, n_tx);
        let d_new = relative_entropy(&candidate, &ctx)?;
        // monotone safeguard: an inexact or infeasible inner step ends the run at X_k
        if d_new < d || !is_feasible(&candidate, scenario, mode, with_mui)? {
            log::debug!("{algorithm}: iteration {k} rejected (D {} -> {})", d.as_f64(), d_new.as_f64());
            converged = true;
            break;
        }
        iterations = k + 1;
        let change = relative_change(d_new, d);
        x = candidate;
        d = d_new;
        rec.residual.push(residual);
        rec.push(&x, d, scenario)?;
        if change < options.xi {
            converged = true;
            break;
        }
    }
    log::info!("{algorithm} ({}): D = {:.6} after {iterations} iterations", mode.name(), d.as_f64());
    Ok(rec.finish(algorithm, mode, x, iterations, converged))
}

/// MM design with the SDR or ADMM inner solver.
pub fn mm_design<T: Real>(scenario: &Scenario<T>, inner: InnerSolver, mode: ConstraintMode<T>, options: &MmOptions<T>) -> Result<SolverReport<T>> {
    match inner {
        InnerSolver::Sdr => run_mm(scenario, MmStep::Sdr, mode, options, "mm-sdr"),
        InnerSolver::Admm => run_mm(scenario, MmStep::Admm, mode, options, "mm-admm"),
    }
}

/// MM design without the MUI constraint, started from the quasi-orthogonal waveform.
pub fn radar_only_design<T: Real>(scenario: &Scenario<T>, mode: ConstraintMode<T>, options: &MmOptions<T>) -> Result<SolverReport<T>> {
    run_mm(scenario, MmStep::RadarOnly, mode, options, "radar-only")
}

/// `D(x) − (ν/2)‖H̃x − c‖²` with `c = s + u + λ`.
pub fn composite_objective<T: Real>(x: &WaveformMatrix<T>, ctx: &ObjectiveContext<T>, scenario: &Scenario<T>, center: &CVec<T>, nu: T) -> Result<T> {
    let op = scenario.comm.channel_op();
    let r = op.apply(&x.to_vec()) - center;
    Ok(relative_entropy(x, ctx)? - nu * T::lit(0.5) * norm_sq(&r))
}

/// Inexact X-update of the outer ADMM: up to `inner_mm_iters` surrogate steps
/// on the composite objective. Returns the new waveform and the composite trace.
pub fn inner_mm_x_update<T: Real>(
    x_current: &WaveformMatrix<T>,
    u: &CVec<T>,
    lambda: &CVec<T>,
    nu: T,
    scenario: &Scenario<T>,
    mode: ConstraintMode<T>,
    options: &OuterAdmmOptions<T>,
) -> Result<(WaveformMatrix<T>, Vec<T>)> {
    let ctx = context(scenario)?;
    let op = scenario.comm.channel_op();
    let (l, n_tx) = (scenario.config.code_length, scenario.config.n_tx);
    let center = scenario.comm.symbol_vec() + u + lambda;
    let half_nu = nu * T::lit(0.5);
    let penalty_quad = op.gram() * re(half_nu);
    let penalty_lin = op.adjoint(&center) * re(half_nu);
    let set = match mode {
        ConstraintMode::Papr { limit } => Some(papr_set(scenario, limit)?),
        ConstraintMode::Energy => None,
    };
    let mut x = x_current.clone();
    let mut f = composite_objective(&x, &ctx, scenario, &center, nu)?;
    let mut trace = vec![f];
    for _ in 0..options.inner_mm_iters {
        let sur = surrogate_at(&x, &ctx)?;
        // maximize xᴴA x + 2Re(xᴴa), A = M − (ν/2)H̃ᴴH̃, a = m + (ν/2)H̃ᴴc
        let neg_a = &penalty_quad - &sur.quad;
        let neg_lin = -(&sur.lin + &penalty_lin);
        let next = match &set {
            None => solve_norm_ball_quadratic(&neg_a, &neg_lin, scenario.transmit_energy())?.x,
            Some(set) => solve_papr_qp(&neg_a, &neg_lin, set, Some(&sur.anchor), &options.papr)?.x,
        };
        let candidate = WaveformMatrix::from_vec(&next, l, n_tx);
        let f_new = composite_objective(&candidate, &ctx, scenario, &center, nu)?;
        if f_new < f {
            break;
        }
        let change = relative_change(f_new, f);
        x = candidate;
        f = f_new;
        trace.push(f);
        if change < options.xi {
            break;
        }
    }
    Ok((x, trace))
}

/// Outer ADMM on the splitting `U = XHᵀ − Sᵀ` with an inexact MM X-update.
pub fn admm_design<T: Real>(scenario: &Scenario<T>, mode: ConstraintMode<T>, options: &OuterAdmmOptions<T>) -> Result<SolverReport<T>> {
    let (state, report) = admm_design_with_state(scenario, mode, options)?;
    let _ = state;
    Ok(report)
}

/// [`admm_design`] that also returns the final auxiliary state.
pub fn admm_design_with_state<T: Real>(
    scenario: &Scenario<T>,
    mode: ConstraintMode<T>,
    options: &OuterAdmmOptions<T>,
) -> Result<(OuterAdmmState<T>, SolverReport<T>)> {
    let ctx = context(scenario)?;
    let comm = &scenario.comm;
    let op = comm.channel_op();
    let s = comm.symbol_vec();
    let eps = comm.mui_budget;
    let (l, n_tx) = (scenario.config.code_length, scenario.config.n_tx);
    // the PAPR set has no exact MUI repair, so the U-ball is shrunk by the primal tolerance
    let ball = match mode {
        ConstraintMode::Energy => eps,
        ConstraintMode::Papr { .. } => {
            let r = eps.sqrt() - options.tol_primal;
            if r > T::zero() { r * r } else { eps * T::lit(0.25) }
        }
    };
    let inner = InnerAdmmOptions::default();
    let mut x = feasible_start(scenario, mode, &inner)?;
    let mut u = project_ball(&(op.apply(&x.to_vec()) - &s), ball);
    let mut lambda = CVec::zeros(s.len());
    let mut nu = options.nu;
    let mut rec = Recorder::new(true);
    rec.push(&x, relative_entropy(&x, &ctx)?, scenario)?;
    let mut converged = false;
    let mut iterations = 0;
    let (mut primal, mut dual) = (T::max_value().unwrap(), T::max_value().unwrap());
    let mut last_check = (primal, dual);
    for it in 0..options.max_iter {
        let (x_new, _) = inner_mm_x_update(&x, &u, &lambda, nu, scenario, mode, options)?;
        let xv = x_new.to_vec();
        let hx = op.apply(&xv);
        let u_prev = std::mem::replace(&mut u, project_ball(&(&hx - &s - &lambda), ball));
        lambda += &u - &hx + &s;
        primal = norm_sq(&(&hx - &s - &u)).sqrt();
        dual = norm_sq(&(&xv - x.to_vec())).sqrt();
        x = x_new;
        iterations = it + 1;
        rec.residual.push((primal, dual));
        rec.push(&x, relative_entropy(&x, &ctx)?, scenario)?;
        if primal <= options.tol_primal && dual <= options.tol_dual {
            converged = true;
            break;
        }
        if options.adaptive_nu && it % 10 == 9 {
            let balance = nu * norm_sq(&op.adjoint(&(&u - &u_prev))).sqrt();
            let (two, ten, half) = (T::lit(2.0), T::lit(10.0), T::lit(0.5));
            // with a nonconvex X-update the iterates can cycle; neither residual
            // shrinking over a window means ν is too small
            let stalled = primal > T::lit(0.9) * last_check.0 && dual > T::lit(0.9) * last_check.1;
            last_check = (primal, dual);
            let factor = if primal > ten * balance || stalled {
                Some(two)
            } else if balance > ten * primal {
                Some(half)
            } else {
                None
            };
            if let Some(f) = factor {
                let next = nu * f;
                if next >= T::lit(1e-6) && next <= T::lit(1e8) {
                    nu = next;
                    lambda *= re(T::one() / f);
                }
            }
        }
    }
    if let ConstraintMode::Energy = mode {
        let fixed = restore_energy_mui(&x.to_vec(), &op, &s, eps, scenario.transmit_energy())?;
        if fixed.mui_corrected || fixed.energy_corrected {
            x = WaveformMatrix::from_vec(&fixed.x, l, n_tx);
            let d = relative_entropy(&x, &ctx)?;
            *rec.objective.last_mut().expect("non-empty") = d;
            if let Some(m) = rec.mui.as_mut() {
                *m.last_mut().expect("non-empty") = mui_energy(&x, comm)?;
            }
        }
    }
    if !converged {
        log::warn!("admm ({}): stopped after {iterations} iterations, primal {:e}, dual {:e}", mode.name(), primal.as_f64(), dual.as_f64());
    }
    let state = OuterAdmmState {
        x: x.clone(),
        u,
        lambda,
        nu,
        primal_residual: primal,
        dual_residual: dual,
    };
    Ok((state, rec.finish("admm", mode, x, iterations, converged)))
}
