//! Quadratic minimization over a Euclidean ball.

use crate::error::{DfrcError, Result};
use crate::linalg::{norm_sq, quad_form, re_dot, HermitianEigen};
use crate::scalar::{re, CMat, CVec, Cx, Real};

/// `p` if `‖p‖² ≤ r²`, otherwise `p` rescaled onto the sphere.
pub fn project_ball<T: Real>(p: &CVec<T>, radius_sq: T) -> CVec<T> {
    let n2 = norm_sq(p);
    if n2 <= radius_sq {
        p.clone()
    } else {
        p * re((radius_sq / n2).sqrt())
    }
}

/// Solution of `min xᴴBx + 2Re(xᴴb)` s.t. `‖x‖² ≤ budget`.
#[derive(Clone, Debug)]
pub struct BallSolution<T: Real> {
    pub x: CVec<T>,
    /// Multiplier of the norm constraint.
    pub nu: T,
    /// `b` had no component along the bottom eigenspace and the boundary
    /// solution needed an explicit bottom-eigenvector term.
    pub hard_case: bool,
}

/// `B` with its eigendecomposition cached, for repeated solves with varying `b`.
#[derive(Clone, Debug)]
pub struct EigenQuadratic<T: Real> {
    pub eig: HermitianEigen<T>,
}

impl<T: Real> EigenQuadratic<T> {
    pub fn new(b_mat: &CMat<T>) -> Self {
        Self {
            eig: HermitianEigen::new(b_mat),
        }
    }

    pub fn dim(&self) -> usize {
        self.eig.values.len()
    }

    pub fn solve(&self, b: &CVec<T>, budget: T) -> Result<BallSolution<T>> {
        if !(budget >= T::zero()) {
            return Err(DfrcError::invalid("budget", "must be non-negative"));
        }
        let n = self.dim();
        let lam = &self.eig.values;
        let beta = self.eig.vectors.adjoint() * b;
        let w: Vec<T> = beta.iter().map(|z| z.norm_sqr()).collect();
        let scale = lam.iter().fold(T::zero(), |m, l| m.max(l.abs())).max(T::tiny());
        let lam_min = lam[0];
        let b_norm2 = w.iter().fold(T::zero(), |a, &v| a + v);

        if budget == T::zero() || n == 0 {
            return Ok(BallSolution {
                x: CVec::zeros(n),
                nu: T::zero(),
                hard_case: false,
            });
        }

        let from_nu = |nu: T, skip_bottom: Option<T>| -> CVec<T> {
            let mut coef = CVec::zeros(n);
            for i in 0..n {
                let d = lam[i] + nu;
                if let Some(tol) = skip_bottom {
                    if lam[i] - lam_min <= tol {
                        continue;
                    }
                }
                if d > T::zero() {
                    coef[i] = -beta[i] / re(d);
                }
            }
            &self.eig.vectors * coef
        };
        let phi = |nu: T| -> T {
            let mut acc = T::zero();
            for i in 0..n {
                let d = lam[i] + nu;
                acc += w[i] / (d * d);
            }
            acc
        };

        let degenerate_tol = T::lit(1e-12) * scale;
        // interior stationary point
        if lam_min > degenerate_tol {
            if phi(T::zero()) <= budget {
                return Ok(BallSolution {
                    x: from_nu(T::zero(), None),
                    nu: T::zero(),
                    hard_case: false,
                });
            }
        } else if lam_min >= -degenerate_tol {
            // singular PSD: the pseudo-inverse solution is optimal if feasible and
            // b lies in the range
            let bottom_mass = (0..n)
                .filter(|&i| lam[i] <= degenerate_tol)
                .fold(T::zero(), |a, i| a + w[i]);
            if bottom_mass <= T::lit(1e-24) * b_norm2.max(T::one()) {
                let x = from_nu(T::zero(), Some(degenerate_tol));
                if norm_sq(&x) <= budget {
                    return Ok(BallSolution {
                        x,
                        nu: T::zero(),
                        hard_case: false,
                    });
                }
            }
        }

        let lo0 = (-lam_min).max(T::zero());
        // bottom eigenspace mass decides between the easy and the hard case
        let bottom_tol = T::lit(1e-10) * scale;
        let bottom_mass = (0..n)
            .filter(|&i| lam[i] - lam_min <= bottom_tol)
            .fold(T::zero(), |a, i| a + w[i]);
        let tiny = T::lit(1e-24) * b_norm2.max(T::tiny());
        if bottom_mass <= tiny {
            let rest = |i: usize| lam[i] - lam_min > bottom_tol;
            let phi_rest = (0..n)
                .filter(|&i| rest(i))
                .fold(T::zero(), |a, i| {
                    let d = lam[i] + lo0;
                    a + w[i] / (d * d)
                });
            if phi_rest <= budget {
                let mut x = from_nu(lo0, Some(bottom_tol));
                let extra = (budget - norm_sq(&x)).max(T::zero()).sqrt();
                let v = self.eig.vectors.column(0).into_owned();
                x += v * re(extra);
                return Ok(BallSolution {
                    x,
                    nu: lo0,
                    hard_case: true,
                });
            }
        }

        let nu = secular_root(&phi, lo0, b_norm2.sqrt() / budget.sqrt() + lo0, budget, |nu| {
            let mut f = T::zero();
            let mut df = T::zero();
            for i in 0..n {
                let d = lam[i] + nu;
                f += w[i] / (d * d);
                df -= T::lit(2.0) * w[i] / (d * d * d);
            }
            (f, df)
        });
        let mut x = from_nu(nu, None);
        let nx = norm_sq(&x);
        if nx > budget {
            x *= re((budget / nx).sqrt());
        }
        Ok(BallSolution {
            x,
            nu,
            hard_case: false,
        })
    }
}

/// Root of `φ(ν) = budget` on `(lo, hi]` with `φ` decreasing, via Newton on
/// `1/√φ − 1/√budget` (nearly linear in `ν`) safeguarded by bisection.
fn secular_root<T: Real>(
    phi: &impl Fn(T) -> T,
    lo: T,
    hi_guess: T,
    budget: T,
    phi_and_deriv: impl Fn(T) -> (T, T),
) -> T {
    let mut lo = lo;
    let mut hi = hi_guess.max(lo + T::tiny());
    let mut guard = 0;
    while phi(hi) > budget && guard < 200 {
        let width = (hi - lo).max(T::one());
        hi += width;
        guard += 1;
    }
    let target = T::one() / budget.sqrt();
    let mut nu = hi;
    for _ in 0..200 {
        let (f, df) = phi_and_deriv(nu);
        if f > budget {
            lo = lo.max(nu);
        } else {
            hi = hi.min(nu);
        }
        let g = T::one() / f.sqrt() - target;
        // d/dν φ^{-1/2} = -½ φ^{-3/2} φ'
        let dg = -T::lit(0.5) * df / (f * f.sqrt());
        let mut next = nu - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) * T::lit(0.5);
        }
        let step = (next - nu).abs();
        nu = next;
        if step <= T::lit(4.0) * T::machine_eps() * nu.abs().max(T::one()) || hi - lo <= T::machine_eps() * hi.abs() {
            break;
        }
    }
    nu
}

/// One-shot form of [`EigenQuadratic::solve`].
pub fn solve_norm_ball_quadratic<T: Real>(b_mat: &CMat<T>, b: &CVec<T>, budget: T) -> Result<BallSolution<T>> {
    EigenQuadratic::new(b_mat).solve(b, budget)
}

/// `xᴴBx + 2Re(xᴴb)`.
pub fn quadratic_value<T: Real>(b_mat: &CMat<T>, b: &CVec<T>, x: &CVec<T>) -> T {
    quad_form(b_mat, x) + T::lit(2.0) * re_dot(x, b)
}

/// `‖(B + νI)x + b‖`.
pub fn kkt_residual<T: Real>(b_mat: &CMat<T>, b: &CVec<T>, sol: &BallSolution<T>) -> T {
    let r = b_mat * &sol.x + &sol.x * Cx::new(sol.nu, T::zero()) + b;
    norm_sq(&r).sqrt()
}
