//! Rank-one decomposition of the relaxation optimum.
//!
//! Given `X̂ ⪰ 0` and four Hermitian forms `A_i`, finds `x̂` with
//! `x̂ᴴA_ix̂ = tr(A_iX̂)` for every `i`. The rank is first reduced to at most
//! three along Hermitian directions that leave all four traces unchanged; the
//! four equalities are then solved inside the (possibly augmented) range by a
//! damped Gauss-Newton iteration from unit-modulus starts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DfrcError, Result};
use crate::linalg::{hermitize, norm_sq, HermitianEigen};
use crate::scalar::{cx, re, unit_phasor, CMat, CVec, Cx, Real};

use super::feasible::restore_energy_mui;
use super::sdr::{trace_inner, HomogenizedProblem};

#[derive(Clone, Debug)]
pub struct RankOneOptions<T> {
    /// `λ₂/λ₁` below which the principal eigenvector is used directly.
    pub rank_one_ratio: T,
    /// Eigenvalues below `drop_ratio·λ₁` are treated as zero.
    pub drop_ratio: T,
    /// Target on the largest relative trace mismatch.
    pub tol: T,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
}

impl<T: Real> Default for RankOneOptions<T> {
    fn default() -> Self {
        Self {
            rank_one_ratio: T::lit(1e-6),
            drop_ratio: T::lit(1e-12),
            tol: T::lit(1e-12),
            max_iter: 200,
            starts: 32,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition<T: Real> {
    pub vector: CVec<T>,
    /// Numerical rank of the input.
    pub rank: usize,
    /// `max_i |x̂ᴴA_ix̂ − tr(A_iX̂)| / scale_i`.
    pub max_relative_error: T,
    /// All four equalities met to `tol`; otherwise the best candidate is returned.
    pub exact: bool,
}

#[derive(Clone, Debug)]
pub struct RankOneOutcome<T: Real> {
    /// `x̄/u` after the feasibility safeguard.
    pub x: CVec<T>,
    pub x_hat: CVec<T>,
    pub rank: usize,
    pub max_relative_error: T,
    pub exact: bool,
    /// A feasibility correction was applied after dehomogenization.
    pub restored: bool,
}

fn trace_scale<T: Real>(a: &CMat<T>, target: T, total: T) -> T {
    let floor = T::lit(1e-12) * crate::linalg::frob_sq(a).sqrt() * total;
    target.abs().max(floor).max(T::tiny())
}

/// Largest relative mismatch between `x̂ᴴA_ix̂` and `targets[i]`.
fn mismatch<T: Real>(v: &CVec<T>, forms: &[&CMat<T>], targets: &[T], scales: &[T]) -> T {
    forms
        .iter()
        .zip(targets.iter().zip(scales))
        .map(|(a, (&t, &s))| ((v.adjoint() * *a * v)[(0, 0)].re - t).abs() / s)
        .fold(T::zero(), |m, e| m.max(e))
}

/// Hermitian `r×r` matrix from `r²` reals: diagonal first, then `(Re, Im)` of
/// each upper entry.
fn hermitian_from_reals<T: Real>(r: usize, p: &DVector<T>) -> CMat<T> {
    let mut d = CMat::zeros(r, r);
    for j in 0..r {
        d[(j, j)] = re(p[j]);
    }
    let mut idx = r;
    for j in 0..r {
        for k in (j + 1)..r {
            let z = cx(p[idx], p[idx + 1]);
            d[(j, k)] = z;
            d[(k, j)] = z.conj();
            idx += 2;
        }
    }
    d
}

/// Row of the linear map `Δ ↦ tr(BΔ)` in the parametrization above.
fn trace_row<T: Real>(b: &CMat<T>) -> DVector<T> {
    let r = b.nrows();
    let two = T::lit(2.0);
    let mut row = DVector::zeros(r * r);
    for j in 0..r {
        row[j] = b[(j, j)].re;
    }
    let mut idx = r;
    for j in 0..r {
        for k in (j + 1)..r {
            row[idx] = two * b[(k, j)].re;
            row[idx + 1] = -two * b[(k, j)].im;
            idx += 2;
        }
    }
    row
}

/// A unit vector orthogonal to every row.
fn null_vector<T: Real>(rows: &[DVector<T>]) -> Option<DVector<T>> {
    let dim = rows.first()?.len();
    let mut basis: Vec<DVector<T>> = Vec::new();
    for row in rows {
        let mut v = row.clone();
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
        }
        let n = v.norm();
        if n > T::lit(1e-13) * row.norm().max(T::tiny()) {
            basis.push(v / n);
        }
    }
    let mut best: Option<DVector<T>> = None;
    let mut best_norm = T::zero();
    for k in 0..dim {
        let mut v = DVector::zeros(dim);
        v[k] = T::one();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let n = v.norm();
        if n > best_norm {
            best_norm = n;
            best = Some(v / n);
        }
    }
    best.filter(|_| best_norm > T::lit(1e-8))
}

/// One reduction step: `V ← V U diag(√(1+tδ))` with the column at `1+tδ = 0`
/// removed, where `Δ = U diag(δ) Uᴴ` is trace-neutral for every form.
fn reduce_once<T: Real>(v: &CMat<T>, forms: &[&CMat<T>]) -> Option<CMat<T>> {
    let r = v.ncols();
    let rows: Vec<DVector<T>> = forms.iter().map(|a| trace_row(&(v.adjoint() * *a * v))).collect();
    let p = null_vector(&rows)?;
    let delta = hermitian_from_reals(r, &p);
    let eig = HermitianEigen::new(&delta);
    let (mut k_star, mut d_star) = (0, T::zero());
    for (k, &d) in eig.values.iter().enumerate() {
        if d.abs() > d_star.abs() {
            k_star = k;
            d_star = d;
        }
    }
    if d_star == T::zero() {
        return None;
    }
    let t = -T::one() / d_star;
    let rotated = v * &eig.vectors;
    let mut cols = Vec::with_capacity(r - 1);
    for k in 0..r {
        if k == k_star {
            continue;
        }
        let w = (T::one() + t * eig.values[k]).max(T::zero()).sqrt();
        cols.push(rotated.column(k) * re(w));
    }
    Some(CMat::from_columns(&cols))
}

/// Damped Gauss-Newton on `wᴴC_iw = t_i` (scaled), `w ∈ C^r`.
fn solve_in_range<T: Real>(
    c: &[CMat<T>],
    targets: &[T],
    scales: &[T],
    start: CVec<T>,
    options: &RankOneOptions<T>,
) -> (CVec<T>, T) {
    let r = start.len();
    let m = c.len();
    let two = T::lit(2.0);
    let residual = |w: &CVec<T>| -> DVector<T> {
        DVector::from_fn(m, |i, _| ((w.adjoint() * &c[i] * w)[(0, 0)].re - targets[i]) / scales[i])
    };
    let mut w = start;
    let mut f = residual(&w);
    let mut lambda = T::lit(1e-6);
    for _ in 0..options.max_iter {
        let err = f.amax();
        if err <= options.tol {
            break;
        }
        let mut jac = DMatrix::<T>::zeros(m, 2 * r);
        for i in 0..m {
            let cw = &c[i] * &w;
            for k in 0..r {
                jac[(i, k)] = two * cw[k].re / scales[i];
                jac[(i, r + k)] = two * cw[k].im / scales[i];
            }
        }
        let jjt = &jac * jac.transpose();
        let mut improved = false;
        for _ in 0..30 {
            let mut sys = jjt.clone();
            let diag_scale = (0..m).fold(T::zero(), |a, i| a.max(jjt[(i, i)]));
            for i in 0..m {
                sys[(i, i)] += lambda * diag_scale.max(T::tiny());
            }
            let Some(sol) = sys.lu().solve(&f) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let step = jac.transpose() * sol;
            let trial = CVec::from_fn(r, |k, _| w[k] - cx(step[k], step[r + k]));
            let f_trial = residual(&trial);
            if f_trial.norm() < f.norm() {
                w = trial;
                f = f_trial;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1e-15));
                improved = true;
                break;
            }
            lambda *= T::lit(4.0);
        }
        if !improved {
            break;
        }
    }
    let err = f.amax();
    (w, err)
}

/// Finds `x̂` with `x̂ᴴA_ix̂ = tr(A_iX̂)` for each form.
pub fn rank_one_decompose<T: Real>(x_hat: &CMat<T>, forms: &[&CMat<T>], options: &RankOneOptions<T>) -> Result<Decomposition<T>> {
    let n = x_hat.nrows();
    if x_hat.ncols() != n || forms.iter().any(|a| a.shape() != (n, n)) {
        return Err(DfrcError::dims("rank_one_decompose", format!("{n}x{n}"), format!("{}x{}", x_hat.nrows(), x_hat.ncols())));
    }
    let x_hat = hermitize(x_hat);
    let eig = HermitianEigen::new(&x_hat);
    let lam1 = eig.max();
    if lam1 <= T::zero() {
        return Err(DfrcError::RankOne("input has no positive eigenvalue".into()));
    }
    let total = eig.values.iter().fold(T::zero(), |a, &l| a + l.max(T::zero()));
    let targets: Vec<T> = forms.iter().map(|a| trace_inner(a, &x_hat)).collect();
    let scales: Vec<T> = forms.iter().zip(&targets).map(|(a, &t)| trace_scale(a, t, total)).collect();

    let kept: Vec<usize> = (0..n).rev().filter(|&k| eig.values[k] > options.drop_ratio * lam1).collect();
    let rank = kept.len();
    let principal = eig.vectors.column(n - 1) * re(lam1.sqrt());
    let lam2 = if n > 1 { eig.values[n - 2].max(T::zero()) } else { T::zero() };
    if rank == 1 || lam2 < options.rank_one_ratio * lam1 {
        let mut vector = principal;
        let mut err = mismatch(&vector, forms, &targets, &scales);
        let k = n.min(3);
        if err > options.tol && k > 1 {
            // the discarded tail still carries trace mass; correct within the
            // leading eigenvectors, starting from the principal one
            let basis = CMat::from_columns(&(0..k).map(|j| eig.vectors.column(n - 1 - j) * re(lam1.sqrt())).collect::<Vec<_>>());
            let c: Vec<CMat<T>> = forms.iter().map(|a| hermitize(&(basis.adjoint() * *a * &basis))).collect();
            let mut w0 = CVec::zeros(k);
            w0[0] = Cx::new(T::one(), T::zero());
            let (w, _) = solve_in_range(&c, &targets, &scales, w0, options);
            let polished = &basis * w;
            let e = mismatch(&polished, forms, &targets, &scales);
            if e < err {
                vector = polished;
                err = e;
            }
        }
        return Ok(Decomposition {
            vector,
            rank,
            max_relative_error: err,
            exact: err <= options.tol * T::lit(100.0),
        });
    }

    let cols: Vec<CVec<T>> = kept.iter().map(|&k| eig.vectors.column(k) * re(eig.values[k].sqrt())).collect();
    let mut v = CMat::from_columns(&cols);
    while v.ncols() > 3 {
        match reduce_once(&v, forms) {
            Some(next) => v = next,
            None => break,
        }
    }
    // targets from the reduced factor: unchanged up to round-off
    let targets: Vec<T> = forms.iter().map(|a| trace_inner(a, &hermitize(&(&v * v.adjoint())))).collect();
    if v.ncols() == 1 {
        let vec = v.column(0).into_owned();
        let err = mismatch(&vec, forms, &targets, &scales);
        return Ok(Decomposition {
            vector: vec,
            rank,
            max_relative_error: err,
            exact: err <= options.tol.max(T::lit(1e-10)),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<(CVec<T>, T)> = None;
    for start in 0..options.starts {
        // rank-2 factors are augmented with a direction outside their range
        let basis = if v.ncols() == 2 && n > 2 {
            let mut d = CVec::from_fn(n, |_, _| cx(T::lit(rng.random::<f64>() - 0.5), T::lit(rng.random::<f64>() - 0.5)));
            let q = v.clone().qr().q();
            d -= &q * (q.adjoint() * &d);
            let scale = (total / norm_sq(&d).max(T::tiny())).sqrt();
            let mut b = CMat::zeros(n, 3);
            b.view_mut((0, 0), (n, 2)).copy_from(&v);
            b.set_column(2, &(d * re(scale)));
            b
        } else {
            v.clone()
        };
        let r = basis.ncols();
        let c: Vec<CMat<T>> = forms.iter().map(|a| hermitize(&(basis.adjoint() * *a * &basis))).collect();
        let w0 = CVec::from_fn(r, |k, _| {
            if k >= v.ncols() {
                cx(T::lit(0.1 * (rng.random::<f64>() - 0.5)), T::zero())
            } else if start == 0 {
                Cx::new(T::one(), T::zero())
            } else {
                unit_phasor(T::lit(std::f64::consts::TAU * rng.random::<f64>()))
            }
        });
        let (w, err) = solve_in_range(&c, &targets, &scales, w0, options);
        let vec = &basis * w;
        let err = err.max(mismatch(&vec, forms, &targets, &scales));
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((vec, err));
        }
        if err <= options.tol * T::lit(100.0) {
            break;
        }
    }
    let (vector, err) = best.expect("at least one start");
    if err > options.tol * T::lit(100.0) {
        log::warn!("rank-one decomposition left relative mismatch {:e}", err.as_f64());
    }
    Ok(Decomposition {
        vector,
        rank,
        max_relative_error: err,
        exact: err <= options.tol * T::lit(100.0),
    })
}

/// Decomposes the relaxation optimum and dehomogenizes `x = x̄/u`.
pub fn rank_one_extract<T: Real>(x_hat: &CMat<T>, hp: &HomogenizedProblem<T>, options: &RankOneOptions<T>) -> Result<RankOneOutcome<T>> {
    let dec = rank_one_decompose(x_hat, &hp.forms(), options)?;
    let n = hp.dim() - 1;
    let u = dec.vector[n];
    let u_abs = u.norm_sqr().sqrt();
    if u_abs < T::lit(1e-10) {
        return Err(DfrcError::RankOne(format!("homogenizing entry vanished (|u| = {:e})", u_abs.as_f64())));
    }
    let x = dec.vector.rows(0, n) / u;
    let fixed = restore_energy_mui(&x, &hp.channel, &hp.symbols, hp.mui_budget, hp.budget)?;
    let restored = fixed.mui_corrected || fixed.energy_corrected;
    Ok(RankOneOutcome {
        x: fixed.x,
        x_hat: dec.vector,
        rank: dec.rank,
        max_relative_error: dec.max_relative_error,
        exact: dec.exact,
        restored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use crate::linalg::quad_form;
    use crate::minorize::surrogate_at;
    use crate::model::{Scenario, ScenarioConfig};
    use crate::objective::ObjectiveContext;
    use crate::qcqp::sdr::{homogenize, solve_sdr, SdrOptions};

    fn check(v: &CVec<f64>, x: &CMat<f64>, forms: &[CMat<f64>], tol: f64) {
        for a in forms {
            let t = trace_inner(a, x);
            let q = quad_form(a, v);
            assert!((q - t).abs() <= tol * t.abs().max(1e-12), "{q} vs {t}");
        }
    }

    #[test]
    fn rank_one_input_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = rand_cvec(&mut rng, 7);
        let x = &y * y.adjoint();
        let forms: Vec<CMat<f64>> = (0..4).map(|_| rand_hermitian(&mut rng, 7)).collect();
        let refs: Vec<&CMat<f64>> = forms.iter().collect();
        let dec = rank_one_decompose(&x, &refs, &RankOneOptions::default()).unwrap();
        assert_eq!(dec.rank, 1);
        check(&dec.vector, &x, &forms, 1e-8);
    }

    #[test]
    fn random_rank_three_matrices_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut failures = 0;
        for _ in 0..100 {
            let n = 6;
            let x = rand_psd(&mut rng, n, 3);
            let forms: Vec<CMat<f64>> = (0..4).map(|_| rand_hermitian(&mut rng, n)).collect();
            let refs: Vec<&CMat<f64>> = forms.iter().collect();
            let dec = rank_one_decompose(&x, &refs, &RankOneOptions::default()).unwrap();
            if !dec.exact {
                failures += 1;
            }
            check(&dec.vector, &x, &forms, 1e-6);
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn higher_rank_is_reduced_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rank in [2, 4, 6] {
            let n = 8;
            let x = rand_psd(&mut rng, n, rank);
            let forms: Vec<CMat<f64>> = (0..4).map(|_| rand_hermitian(&mut rng, n)).collect();
            let refs: Vec<&CMat<f64>> = forms.iter().collect();
            let dec = rank_one_decompose(&x, &refs, &RankOneOptions::default()).unwrap();
            assert_eq!(dec.rank, rank);
            check(&dec.vector, &x, &forms, 1e-6);
        }
    }

    #[test]
    fn extraction_preserves_objective() {
        let cfg = ScenarioConfig {
            mui_budget: 1e-4,
            ..ScenarioConfig::small()
        };
        let sc = Scenario::<f64>::from_config(&cfg).unwrap();
        let ctx = ObjectiveContext::new(sc.target.clone(), 1.0).unwrap();
        let sur = surrogate_at(&sc.initial, &ctx).unwrap();
        let hp = homogenize(&sur, &sc.comm, 1.0, 1e-4);
        let sol = solve_sdr(&hp, &SdrOptions::default()).unwrap();
        let out = rank_one_extract(&sol.matrix, &hp, &RankOneOptions::default()).unwrap();
        let lifted = hp.lift(&out.x);
        let obj = quad_form(&hp.quad_hat, &lifted);
        assert!((obj - sol.objective).abs() <= 1e-6 * sol.objective.abs(), "{obj} vs {}", sol.objective);
        assert!(quad_form(&hp.mui_hat, &lifted) <= 1e-4 * (1.0 + 1e-9));
        assert!(norm_sq(&out.x) <= 1.0 + 1e-9);
    }

    #[test]
    fn vanishing_homogenizing_entry_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ScenarioConfig::small();
        let sc = Scenario::<f64>::from_config(&cfg).unwrap();
        let ctx = ObjectiveContext::new(sc.target.clone(), 1.0).unwrap();
        let sur = surrogate_at(&sc.initial, &ctx).unwrap();
        let hp = homogenize(&sur, &sc.comm, 1.0, 1e-4);
        let n = hp.dim();
        let mut y = rand_cvec(&mut rng, n);
        y[n - 1] = Cx::new(0.0, 0.0);
        let x = &y * y.adjoint();
        let err = rank_one_extract(&x, &hp, &RankOneOptions::default()).unwrap_err();
        assert!(matches!(err, DfrcError::RankOne(_)));
    }
}
