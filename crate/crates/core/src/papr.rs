//! Quadratic minimization over per-antenna energy spheres with a PAPR cap.

use crate::error::{DfrcError, Result};
use crate::linalg::{hermitize, norm_sq, slice_norm_sq};
use crate::qcqp::quadratic_value;
use crate::scalar::{re, CMat, CVec, Cx, Real};

/// `{x_n : ‖x_n‖² = E_a, max_l |x_{n,l}|² ≤ ρE_a/L}` for every antenna `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PaprSet<T> {
    pub per_antenna_energy: T,
    pub papr_limit: T,
    pub code_length: usize,
}

impl<T: Real> PaprSet<T> {
    pub fn new(per_antenna_energy: T, papr_limit: T, code_length: usize) -> Result<Self> {
        if !(per_antenna_energy > T::zero()) {
            return Err(DfrcError::invalid("per_antenna_energy", "must be positive"));
        }
        if code_length == 0 {
            return Err(DfrcError::invalid("code_length", "must be positive"));
        }
        if !(papr_limit >= T::one()) || papr_limit > T::from_usize_lossy(code_length) {
            return Err(DfrcError::invalid("papr_limit", format!("must lie in [1, L = {code_length}]")));
        }
        Ok(Self {
            per_antenna_energy,
            papr_limit,
            code_length,
        })
    }

    /// Set for a total budget `P_t` spread evenly over `n_tx` antennas.
    pub fn for_budget(total_energy: T, n_tx: usize, papr_limit: T, code_length: usize) -> Result<Self> {
        Self::new(total_energy / T::from_usize_lossy(n_tx), papr_limit, code_length)
    }

    /// Squared peak cap `ρE_a/L`.
    pub fn peak_sq(&self) -> T {
        self.papr_limit * self.per_antenna_energy / T::from_usize_lossy(self.code_length)
    }

    pub fn contains(&self, x: &[Cx<T>], rel_tol: T) -> bool {
        let e = slice_norm_sq(x);
        let cap = self.peak_sq() * (T::one() + rel_tol);
        (e - self.per_antenna_energy).abs() <= rel_tol * self.per_antenna_energy && x.iter().all(|z| z.norm_sqr() <= cap)
    }
}

/// Result of [`papr_project`].
#[derive(Clone, Debug)]
pub struct PaprProjection<T: Real> {
    pub x: CVec<T>,
    /// `c` had no usable magnitude on enough entries; filled at zero phase.
    pub degenerate: bool,
}

/// Nearest point of the set to `c`: phases of `c` kept, magnitudes clipped at
/// the peak cap and the rest rescaled to meet the energy equality.
pub fn papr_project<T: Real>(c: &[Cx<T>], set: &PaprSet<T>) -> PaprProjection<T> {
    let l = c.len();
    let e = set.per_antenna_energy;
    let cap_sq = set.peak_sq();
    let cap = cap_sq.sqrt();
    let mags: Vec<T> = c.iter().map(|z| z.norm_sqr().sqrt()).collect();
    let phase = |i: usize| -> Cx<T> {
        if mags[i] > T::zero() {
            c[i] / re(mags[i])
        } else {
            Cx::new(T::one(), T::zero())
        }
    };
    let mut clipped = vec![false; l];
    let mut n_clipped = 0usize;
    let mut gamma = T::zero();
    let mut degenerate = false;
    for _ in 0..=l {
        let free: T = (0..l).filter(|&i| !clipped[i]).fold(T::zero(), |a, i| a + mags[i] * mags[i]);
        let remaining = (e - T::from_usize_lossy(n_clipped) * cap_sq).max(T::zero());
        if free <= T::zero() {
            degenerate = n_clipped < l && remaining > T::zero();
            break;
        }
        gamma = (remaining / free).sqrt();
        let mut grew = false;
        for i in 0..l {
            if !clipped[i] && gamma * mags[i] > cap {
                clipped[i] = true;
                n_clipped += 1;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    let mut x = CVec::from_fn(l, |i, _| {
        if clipped[i] {
            phase(i) * re(cap)
        } else {
            phase(i) * re(gamma * mags[i])
        }
    });
    if degenerate {
        // remaining energy goes evenly to the entries where c vanished
        let zeros: Vec<usize> = (0..l).filter(|&i| !clipped[i] && mags[i] == T::zero()).collect();
        let remaining = (e - T::from_usize_lossy(n_clipped) * cap_sq).max(T::zero());
        let each = (remaining / T::from_usize_lossy(zeros.len())).sqrt();
        for i in zeros {
            x[i] = Cx::new(each, T::zero());
        }
    }
    // remove round-off in the energy equality
    let got = norm_sq(&x);
    if got > T::zero() {
        let fix = (e / got).sqrt();
        if (fix - T::one()).abs() < T::lit(1e-6) {
            x *= re(fix);
        }
    }
    PaprProjection { x, degenerate }
}

#[derive(Clone, Debug)]
pub struct PaprQpOptions<T> {
    /// Stop when the relative objective change falls below this.
    pub tol: T,
    pub max_iter: usize,
    pub power_iters: usize,
    pub power_tol: T,
}

impl<T: Real> Default for PaprQpOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-4),
            max_iter: 500,
            power_iters: 50,
            power_tol: T::lit(1e-10),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PaprQpOutcome<T: Real> {
    pub x: CVec<T>,
    pub objective: T,
    /// Objective after every MM step, starting with the initial point.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Upper estimate of `λ_max(B)` by power iteration on `B + sI`, `s` a bound on `‖B‖₂`.
pub fn max_eigenvalue_estimate<T: Real>(b: &CMat<T>, iters: usize, tol: T) -> T {
    let n = b.nrows();
    if n == 0 {
        return T::zero();
    }
    let shift = crate::linalg::frob_sq(b).sqrt();
    let mut v = CVec::from_fn(n, |i, _| Cx::new(T::one() + T::lit(0.01) * T::from_usize_lossy(i % 7), T::zero()));
    v /= re(norm_sq(&v).sqrt());
    let mut lam = T::zero();
    for _ in 0..iters {
        let w = b * &v + &v * re(shift);
        let next = crate::linalg::re_dot(&v, &w);
        let nw = norm_sq(&w).sqrt();
        if nw <= T::zero() {
            break;
        }
        v = w / re(nw);
        let done = (next - lam).abs() <= tol * next.abs().max(T::one());
        lam = next;
        if done {
            break;
        }
    }
    lam - shift
}

fn project_blocks<T: Real>(c: &CVec<T>, set: &PaprSet<T>) -> CVec<T> {
    let l = set.code_length;
    let mut x = CVec::zeros(c.len());
    for (n, chunk) in c.as_slice().chunks(l).enumerate() {
        let p = papr_project(chunk, set);
        x.rows_mut(n * l, l).copy_from(&p.x);
    }
    x
}

/// `−b` with a small deterministic complex perturbation, so that real data
/// does not pin the iterates to the real stationary points.
fn generic_start<T: Real>(b: &CVec<T>) -> CVec<T> {
    let n = b.len();
    let scale = (norm_sq(b) / T::from_usize_lossy(n.max(1))).sqrt().max(T::one()) * T::lit(1e-2);
    CVec::from_fn(n, |i, _| {
        let phase = T::lit(2.399963229728653 * (i + 1) as f64);
        -b[i] + crate::scalar::unit_phasor(phase) * re(scale)
    })
}

/// MM descent of `xᴴBx + 2Re(xᴴb)` over the product of per-antenna PAPR sets;
/// `x` is stacked antenna by antenna (`x[n·L + l]`).
pub fn solve_papr_qp<T: Real>(
    b_mat: &CMat<T>,
    b_vec: &CVec<T>,
    set: &PaprSet<T>,
    start: Option<&CVec<T>>,
    options: &PaprQpOptions<T>,
) -> Result<PaprQpOutcome<T>> {
    let dim = b_vec.len();
    if b_mat.shape() != (dim, dim) || dim % set.code_length != 0 {
        return Err(DfrcError::dims("solve_papr_qp", format!("{dim}x{dim}, multiple of L"), format!("{}x{}", b_mat.nrows(), b_mat.ncols())));
    }
    let b_mat = hermitize(b_mat);
    let mut lam = max_eigenvalue_estimate(&b_mat, options.power_iters, options.power_tol);
    let mut x = match start {
        Some(s) => project_blocks(s, set),
        None => project_blocks(&generic_start(b_vec), set),
    };
    let mut f = quadratic_value(&b_mat, b_vec, &x);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let slack = T::lit(1e-9);
    for it in 0..options.max_iter {
        iterations = it + 1;
        let mut accepted = None;
        for _ in 0..60 {
            let c = -(b_vec + &b_mat * &x - &x * re(lam));
            let cand = project_blocks(&c, set);
            let fc = quadratic_value(&b_mat, b_vec, &cand);
            if fc <= f + slack * f.abs().max(T::one()) {
                accepted = Some((cand, fc));
                break;
            }
            // the power estimate fell short of λ_max: enlarge the majorizer
            lam = lam + (lam.abs() + T::one()) * T::lit(0.5);
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let change = (f - fc).abs() / f.abs().max(T::tiny());
        x = cand;
        f = fc;
        trace.push(f);
        if change < options.tol {
            converged = true;
            break;
        }
    }
    Ok(PaprQpOutcome {
        x,
        objective: f,
        trace,
        iterations,
        converged,
    })
}
