//! ADMM for `max s(x)` s.t. `‖x‖² ≤ P_t`, `‖H̃x − s‖² ≤ ε`.

use crate::error::Result;
use crate::linalg::{norm_sq, KronChannel};
use crate::minorize::Surrogate;
use crate::model::CommScenario;
use crate::papr::{solve_papr_qp, PaprQpOptions, PaprSet};
use crate::scalar::{re, CMat, CVec, Real};

use super::ball::{project_ball, EigenQuadratic};
use super::feasible::restore_energy_mui;

#[derive(Clone, Debug)]
pub struct InnerAdmmOptions<T> {
    /// Initial penalty `μ`.
    pub mu: T,
    /// Residual balancing: double or halve `μ` when the residuals differ 10×.
    pub adaptive_mu: bool,
    pub tol_primal: T,
    pub tol_dual: T,
    pub max_iter: usize,
    /// Project the final iterate onto the feasible set.
    pub restore_feasibility: bool,
    /// x-update options in PAPR mode.
    pub papr: PaprQpOptions<T>,
}

/// Constraint on `x` handled inside the x-update.
#[derive(Clone, Copy, Debug)]
pub enum XConstraint<T> {
    /// `‖x‖² ≤ P_t`.
    Energy { budget: T },
    /// Per-antenna energy equality and PAPR cap; the MUI ball is shrunk by the
    /// primal tolerance so a converged iterate is MUI-feasible without repair.
    Papr(PaprSet<T>),
}

impl<T: Real> Default for InnerAdmmOptions<T> {
    fn default() -> Self {
        Self {
            mu: T::one(),
            adaptive_mu: true,
            tol_primal: T::lit(1e-6),
            tol_dual: T::lit(1e-3),
            max_iter: 5000,
            restore_feasibility: true,
            papr: PaprQpOptions {
                tol: T::lit(1e-8),
                max_iter: 200,
                ..PaprQpOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerAdmmState<T: Real> {
    pub x: CVec<T>,
    /// MUI residual variable, `‖z‖² ≤ ε`.
    pub z: CVec<T>,
    /// Scaled dual.
    pub lambda: CVec<T>,
    pub mu: T,
    /// Multiplier of the energy constraint in the last x-update.
    pub nu: T,
    pub primal_residual: T,
    pub dual_residual: T,
}

#[derive(Clone, Debug)]
pub struct InnerAdmmOutcome<T: Real> {
    pub x: CVec<T>,
    pub state: InnerAdmmState<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `(‖r_m‖, ‖d_m‖)` per iteration.
    pub residuals: Vec<(T, T)>,
    /// The returned point differs from the last iterate by a feasibility correction.
    pub restored: bool,
}

fn penalized_matrix<T: Real>(neg_quad: &CMat<T>, gram: &CMat<T>, mu: T) -> CMat<T> {
    neg_quad + gram * re(mu / T::lit(2.0))
}

/// Runs the splitting `z = H̃x − s` from `x_0 = ` the surrogate anchor.
pub fn admm_qcqp<T: Real>(
    surrogate: &Surrogate<T>,
    comm: &CommScenario<T>,
    budget: T,
    options: &InnerAdmmOptions<T>,
) -> Result<InnerAdmmOutcome<T>> {
    let op = comm.channel_op();
    let s = comm.symbol_vec();
    admm_qcqp_with(surrogate, &op, &s, comm.mui_budget, XConstraint::Energy { budget }, options)
}

/// [`admm_qcqp`] with the energy ball replaced by the per-antenna PAPR set.
pub fn admm_qcqp_papr<T: Real>(
    surrogate: &Surrogate<T>,
    comm: &CommScenario<T>,
    set: &PaprSet<T>,
    options: &InnerAdmmOptions<T>,
) -> Result<InnerAdmmOutcome<T>> {
    let op = comm.channel_op();
    let s = comm.symbol_vec();
    admm_qcqp_with(surrogate, &op, &s, comm.mui_budget, XConstraint::Papr(*set), options)
}

pub(crate) fn admm_qcqp_with<T: Real>(
    surrogate: &Surrogate<T>,
    op: &KronChannel<T>,
    s: &CVec<T>,
    eps: T,
    constraint: XConstraint<T>,
    options: &InnerAdmmOptions<T>,
) -> Result<InnerAdmmOutcome<T>> {
    let neg_quad = -&surrogate.quad;
    let neg_lin = -&surrogate.lin;
    let gram = op.gram();
    let mut mu = options.mu;
    let mut penalized = penalized_matrix(&neg_quad, &gram, mu);
    let papr = matches!(constraint, XConstraint::Papr(_));
    let mut solver = (!papr).then(|| EigenQuadratic::new(&penalized));
    let ball = if papr {
        let r = eps.sqrt() - options.tol_primal;
        if r > T::zero() { r * r } else { eps * T::lit(0.25) }
    } else {
        eps
    };

    let mut x = surrogate.anchor.clone();
    let mut z = project_ball(&(op.apply(&x) - s), ball);
    let mut lambda = CVec::zeros(s.len());
    let mut nu = T::zero();
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut primal = T::max_value().unwrap();
    let mut dual = T::max_value().unwrap();
    let mut iterations = 0;
    let half = T::lit(0.5);

    for it in 0..options.max_iter {
        let b = &neg_lin - op.adjoint(&(&z + s + &lambda)) * re(mu * half);
        let next = match (&constraint, &solver) {
            (XConstraint::Energy { budget }, Some(solver)) => {
                let sol = solver.solve(&b, *budget)?;
                nu = sol.nu;
                sol.x
            }
            (XConstraint::Papr(set), _) => solve_papr_qp(&penalized, &b, set, Some(&x), &options.papr)?.x,
            (XConstraint::Energy { .. }, None) => unreachable!("energy mode always builds the eigen solver"),
        };
        let x_prev = std::mem::replace(&mut x, next);
        let hx = op.apply(&x);
        let p = &hx - s - &lambda;
        let z_prev = std::mem::replace(&mut z, project_ball(&p, ball));
        lambda += &z - &hx + s;

        let r = &hx - s - &z;
        primal = norm_sq(&r).sqrt();
        dual = norm_sq(&(&x - &x_prev)).sqrt();
        residuals.push((primal, dual));
        iterations = it + 1;
        if primal <= options.tol_primal && dual <= options.tol_dual && it > 0 {
            converged = true;
            break;
        }
        if options.adaptive_mu && it % 10 == 9 {
            let balance = mu * norm_sq(&op.adjoint(&(&z - &z_prev))).sqrt();
            let ten = T::lit(10.0);
            let two = T::lit(2.0);
            let factor = if primal > ten * balance {
                Some(two)
            } else if balance > ten * primal {
                Some(half)
            } else {
                None
            };
            if let Some(f) = factor {
                let next = mu * f;
                if next >= T::lit(1e-6) && next <= T::lit(1e8) {
                    mu = next;
                    lambda *= re(T::one() / f);
                    penalized = penalized_matrix(&neg_quad, &gram, mu);
                    if !papr {
                        solver = Some(EigenQuadratic::new(&penalized));
                    }
                }
            }
        }
    }

    let mut out_x = x.clone();
    let mut restored = false;
    if let (XConstraint::Energy { budget }, true) = (constraint, options.restore_feasibility) {
        let fixed = restore_energy_mui(&x, op, s, eps, budget)?;
        restored = fixed.mui_corrected || fixed.energy_corrected;
        out_x = fixed.x;
    }
    log::debug!("inner admm: {iterations} iterations, primal {:e}, dual {:e}, mu {mu}", primal.as_f64(), dual.as_f64());
    Ok(InnerAdmmOutcome {
        x: out_x,
        state: InnerAdmmState {
            x,
            z,
            lambda,
            mu,
            nu,
            primal_residual: primal,
            dual_residual: dual,
        },
        iterations,
        converged,
        residuals,
        restored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minorize::surrogate_at;
    use crate::model::{Scenario, ScenarioConfig, WaveformMatrix};
    use crate::objective::{mui_energy, ObjectiveContext};
    use crate::qcqp::ball::solve_norm_ball_quadratic;

    fn small_setup(eps: f64) -> (Surrogate<f64>, CommScenario<f64>) {
        let cfg = ScenarioConfig {
            mui_budget: eps,
            ..ScenarioConfig::small()
        };
        let sc = Scenario::<f64>::from_config(&cfg).unwrap();
        let ctx = ObjectiveContext::new(sc.target.clone(), 1.0).unwrap();
        let s = surrogate_at(&sc.initial, &ctx).unwrap();
        (s, sc.comm)
    }

    #[test]
    fn inactive_mui_reduces_to_ball_problem() {
        let (sur, comm) = small_setup(1e6);
        let out = admm_qcqp(&sur, &comm, 1.0, &InnerAdmmOptions::default()).unwrap();
        let direct = solve_norm_ball_quadratic(&(-&sur.quad), &(-&sur.lin), 1.0).unwrap();
        let a = sur.value(&out.x);
        let b = sur.value(&direct.x);
        assert!((a - b).abs() <= 1e-6 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn converged_output_is_feasible() {
        let (sur, comm) = small_setup(1e-6);
        let out = admm_qcqp(&sur, &comm, 1.0, &InnerAdmmOptions::default()).unwrap();
        assert!(out.converged, "{} iterations", out.iterations);
        let w = WaveformMatrix::from_vec(&out.x, 8, 4);
        assert!(mui_energy(&w, &comm).unwrap() <= 1e-6 * (1.0 + 1e-6));
        assert!(w.energy() <= 1.0 + 1e-9);
    }

    #[test]
    fn z_stays_in_ball() {
        let (sur, comm) = small_setup(1e-4);
        let options = InnerAdmmOptions {
            max_iter: 7,
            ..InnerAdmmOptions::default()
        };
        for iters in 1..options.max_iter {
            let opts = InnerAdmmOptions {
                max_iter: iters,
                ..options.clone()
            };
            let out = admm_qcqp(&sur, &comm, 1.0, &opts).unwrap();
            assert!(norm_sq(&out.state.z) <= 1e-4 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ascent_over_anchor() {
        let (sur, comm) = small_setup(1e-6);
        let out = admm_qcqp(&sur, &comm, 1.0, &InnerAdmmOptions::default()).unwrap();
        // the anchor is generally MUI-infeasible, so compare against a feasible
        // reference: the minimum-energy MUI-feasible point
        let op = comm.channel_op();
        let s = comm.symbol_vec();
        let x_ref = crate::qcqp::feasible::min_energy_meeting_mui(&op, &s, 1e-6).unwrap();
        assert!(sur.value(&out.x) >= sur.value(&x_ref) - 1e-6);
    }
}
