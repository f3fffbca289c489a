//! Quadratic minorizer of the relative entropy around the current iterate.
//!
//! With `σ² = 1`, `F = X̃ R_G^{1/2}`, `R_1 = I + F Fᴴ` and `v = R_1⁻¹ X̃ g_d`, the
//! gradient blocks of `log det(E C⁻¹ Eᴴ)` are available in closed form:
//! `T11 = −(I + FᴴF)`, `T12 = Fᴴ`, `T22 = R_1⁻¹ − I`. The surrogate is
//! `s(x) = tr(Q X̃ R_G X̃ᴴ) + 2 Re tr(X̃ᴴ P)` with `P = T12ᴴ R_G^{1/2} + v g_dᴴ` and
//! `Q = T22 − v vᴴ − R_1⁻²`. A general noise power enters through
//! `D(X; σ²) = D(X/σ; 1)`.

use crate::error::{DfrcError, Result};
use crate::linalg::{hermitize, quad_form, re_dot, PdFactor};
use crate::model::{RicianTarget, WaveformMatrix};
use crate::objective::{lifted_mean, lifted_sqrt_factor, relative_entropy, ObjectiveContext};
use crate::scalar::{re, CMat, CVec, Cx, Real};

/// Sparse 0/1 map with `vec(I_{N_R} ⊗ X) = G_s vec(X)`.
///
/// Rows of the off-diagonal blocks of `I_{N_R} ⊗ X` are identically zero; every
/// other row copies exactly one entry of `vec(X)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMatrix {
    pub n_tx: usize,
    pub n_rx: usize,
    pub code_length: usize,
    /// `source[row]` is the `vec(X)` index copied into `row`, if any.
    pub source: Vec<Option<usize>>,
}

pub fn selection_matrix(n_tx: usize, n_rx: usize, code_length: usize) -> SelectionMatrix {
    let n_rl = n_rx * code_length;
    let n_tr = n_tx * n_rx;
    let mut source = vec![None; n_rl * n_tr];
    for col in 0..n_tr {
        let (r_col, n) = (col / n_tx, col % n_tx);
        for l in 0..code_length {
            let row = r_col * code_length + l;
            source[col * n_rl + row] = Some(n * code_length + l);
        }
    }
    SelectionMatrix {
        n_tx,
        n_rx,
        code_length,
        source,
    }
}

impl SelectionMatrix {
    pub fn rows(&self) -> usize {
        self.source.len()
    }

    pub fn cols(&self) -> usize {
        self.n_tx * self.code_length
    }

    pub fn apply<T: Real>(&self, x: &CVec<T>) -> CVec<T> {
        CVec::from_iterator(
            self.rows(),
            self.source.iter().map(|s| s.map_or(Cx::new(T::zero(), T::zero()), |i| x[i])),
        )
    }

    pub fn adjoint_apply<T: Real>(&self, y: &CVec<T>) -> CVec<T> {
        let mut out = CVec::zeros(self.cols());
        for (row, s) in self.source.iter().enumerate() {
            if let Some(i) = s {
                out[*i] += y[row];
            }
        }
        out
    }

    pub fn to_dense<T: Real>(&self) -> CMat<T> {
        let mut g = CMat::zeros(self.rows(), self.cols());
        for (row, s) in self.source.iter().enumerate() {
            if let Some(i) = s {
                g[(row, *i)] = Cx::new(T::one(), T::zero());
            }
        }
        g
    }
}

/// Partition blocks of the gradient `T_k` at unit noise power.
#[derive(Clone, Debug)]
pub struct GradientBlocks<T: Real> {
    pub t11: CMat<T>,
    /// `N_TR × N_RL`.
    pub t12: CMat<T>,
    pub t22: CMat<T>,
}

pub fn gradient_blocks<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> Result<GradientBlocks<T>> {
    let f = lifted_sqrt_factor(x, target);
    let n_rl = f.nrows();
    let n_tr = f.ncols();
    let mut r1 = &f * f.adjoint();
    for i in 0..n_rl {
        r1[(i, i)] += Cx::new(T::one(), T::zero());
    }
    let r1_inv = PdFactor::new(&r1, "gradient_blocks")?.inverse();
    let mut t11 = -(f.adjoint() * &f);
    for i in 0..n_tr {
        t11[(i, i)] -= Cx::new(T::one(), T::zero());
    }
    let mut t22 = r1_inv;
    for i in 0..n_rl {
        t22[(i, i)] -= Cx::new(T::one(), T::zero());
    }
    Ok(GradientBlocks {
        t11: hermitize(&t11),
        t12: f.adjoint(),
        t22: hermitize(&t22),
    })
}

/// `s(x) = xᴴ quad x + 2 Re(xᴴ lin)`, tangent to the relative entropy at `anchor`
/// up to an additive constant and below it everywhere.
#[derive(Clone, Debug)]
pub struct Surrogate<T: Real> {
    pub quad: CMat<T>,
    pub lin: CVec<T>,
    /// `vec(X_k)`.
    pub anchor: CVec<T>,
    pub anchor_objective: T,
}

impl<T: Real> Surrogate<T> {
    pub fn value(&self, x: &CVec<T>) -> T {
        quad_form(&self.quad, x) + T::lit(2.0) * re_dot(x, &self.lin)
    }

    /// `s(x) − s(x_k)`.
    pub fn gain(&self, x: &CVec<T>) -> T {
        self.value(x) - self.value(&self.anchor)
    }

    /// `∇ s = 2 (quad x + lin)` with respect to `x*`-conjugate coordinates.
    pub fn gradient(&self, x: &CVec<T>) -> CVec<T> {
        (&self.quad * x + &self.lin) * Cx::new(T::lit(2.0), T::zero())
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }
}

pub fn surrogate_at<T: Real>(x_k: &WaveformMatrix<T>, ctx: &ObjectiveContext<T>) -> Result<Surrogate<T>> {
    let target = &ctx.target;
    if x_k.n_tx() != target.n_tx {
        return Err(DfrcError::dims("surrogate anchor columns", target.n_tx, x_k.n_tx()));
    }
    let sigma = ctx.noise_power.sqrt();
    let y = x_k.scaled(T::one() / sigma);
    let (quad, lin) = unit_noise_surrogate(&y, target)?;
    let inv_s2 = re(T::one() / ctx.noise_power);
    let inv_s = re(T::one() / sigma);
    Ok(Surrogate {
        quad: quad * inv_s2,
        lin: lin * inv_s,
        anchor: x_k.to_vec(),
        anchor_objective: relative_entropy(x_k, ctx)?,
    })
}

fn unit_noise_surrogate<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> Result<(CMat<T>, CVec<T>)> {
    let (l_len, n_tx) = x.samples.shape();
    let n_rx = target.n_rx;
    let blocks = gradient_blocks(x, target)?;
    let n_rl = blocks.t22.nrows();

    // R_1⁻¹ = T22 + I
    let mut r1_inv = blocks.t22.clone();
    for i in 0..n_rl {
        r1_inv[(i, i)] += Cx::new(T::one(), T::zero());
    }
    let v = &r1_inv * lifted_mean(x, target);
    let p = blocks.t12.adjoint() * &target.covariance_sqrt + &v * target.mean_response.adjoint();
    let q = hermitize(&(&blocks.t22 - &v * v.adjoint() - &r1_inv * &r1_inv));

    let dim = n_tx * l_len;
    let mut quad = CMat::zeros(dim, dim);
    let cov = &target.covariance;
    // quad[(n1,l1),(n2,l2)] = Σ_{r,r2} Q[(r,l1),(r2,l2)] · R_G[(r2,n2),(r,n1)]
    for r in 0..n_rx {
        for r2 in 0..n_rx {
            let qb = q.view((r * l_len, r2 * l_len), (l_len, l_len));
            let rb = cov.view((r2 * n_tx, r * n_tx), (n_tx, n_tx));
            for n2 in 0..n_tx {
                for n1 in 0..n_tx {
                    let w = rb[(n2, n1)];
                    if w == Cx::new(T::zero(), T::zero()) {
                        continue;
                    }
                    for l2 in 0..l_len {
                        for l1 in 0..l_len {
                            quad[(n1 * l_len + l1, n2 * l_len + l2)] += qb[(l1, l2)] * w;
                        }
                    }
                }
            }
        }
    }
    let mut lin = CVec::zeros(dim);
    for n in 0..n_tx {
        for l in 0..l_len {
            let mut acc = Cx::new(T::zero(), T::zero());
            for r in 0..n_rx {
                acc += p[(r * l_len + l, r * n_tx + n)];
            }
            lin[n * l_len + l] = acc;
        }
    }
    Ok((hermitize(&quad), lin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use crate::linalg::{frob_sq, kron, HermitianEigen};
    use crate::model::{build_rician_target, doa_grid};
    use crate::objective::lifted_waveform;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn target(n_tx: usize, n_rx: usize, with_random: bool) -> RicianTarget<f64> {
        let random: Vec<_> = if with_random {
            doa_grid(30, -60.0, 56.0).into_iter().map(|a| (0.05, a)).collect()
        } else {
            Vec::new()
        };
        build_rician_target(&[(Cx::new(1.5f64.sqrt(), 0.0), 15.0)], &random, n_tx, n_rx).unwrap()
    }

    fn scaled_random(rng: &mut ChaCha8Rng, l: usize, n: usize, energy: f64) -> WaveformMatrix<f64> {
        let x = rand_cmat(rng, l, n);
        let e = frob_sq(&x);
        WaveformMatrix::new(x * Cx::new((energy / e).sqrt(), 0.0))
    }

    #[test]
    fn selection_reproduces_lifted_vec() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = selection_matrix(3, 2, 4);
        let x = WaveformMatrix::new(rand_cmat(&mut rng, 4, 3));
        let lifted = lifted_waveform(&x, 2);
        let expected = CVec::from_column_slice(lifted.as_slice());
        assert_eq!(g.apply(&x.to_vec()), expected);
        let dense: CMat<f64> = g.to_dense();
        assert_eq!(&dense * x.to_vec(), expected);
        let gram = dense.adjoint() * &dense;
        assert_eq!(gram, CMat::identity(12, 12) * Cx::new(2.0, 0.0));
        for row in 0..dense.nrows() {
            let nz = dense.row(row).iter().filter(|z| z.norm() > 0.0).count();
            assert!(nz <= 1);
        }
    }

    #[test]
    fn selection_single_receiver_is_identity() {
        let g = selection_matrix(3, 1, 5);
        let dense: CMat<f64> = g.to_dense();
        assert_eq!(dense, CMat::identity(15, 15));
    }

    #[test]
    fn gradient_at_zero() {
        let t = target(2, 2, true);
        let b = gradient_blocks(&WaveformMatrix::zeros(3, 2), &t).unwrap();
        assert_eq!(b.t11, -CMat::<f64>::identity(4, 4));
        assert_eq!(b.t12.norm(), 0.0);
        assert_eq!(b.t22.norm(), 0.0);
    }

    /// `log det(E C⁻¹ Eᴴ)` with `E = [I 0]`, from an explicitly assembled `C`.
    fn logdet_ecie(c: &CMat<f64>, n_tr: usize) -> f64 {
        let inv = c.clone().try_inverse().unwrap();
        let block = hermitize(&inv.view((0, 0), (n_tr, n_tr)).into_owned());
        PdFactor::new(&block, "test").unwrap().log_det()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = target(2, 2, true);
        let x = scaled_random(&mut rng, 3, 2, 1.0);
        let f = lifted_sqrt_factor(&x, &t);
        let (n_rl, n_tr) = f.shape();
        let n = n_rl + n_tr;
        let mut c = CMat::identity(n, n);
        c.view_mut((0, n_tr), (n_tr, n_rl)).copy_from(&f.adjoint());
        c.view_mut((n_tr, 0), (n_rl, n_tr)).copy_from(&f);
        let r1 = &f * f.adjoint() + CMat::identity(n_rl, n_rl);
        c.view_mut((n_tr, n_tr), (n_rl, n_rl)).copy_from(&r1);

        let b = gradient_blocks(&x, &t).unwrap();
        let mut tk = CMat::zeros(n, n);
        tk.view_mut((0, 0), (n_tr, n_tr)).copy_from(&b.t11);
        tk.view_mut((0, n_tr), (n_tr, n_rl)).copy_from(&b.t12);
        tk.view_mut((n_tr, 0), (n_rl, n_tr)).copy_from(&b.t12.adjoint());
        tk.view_mut((n_tr, n_tr), (n_rl, n_rl)).copy_from(&b.t22);
        assert!(crate::linalg::hermitian_defect(&tk) < 1e-10);

        for _ in 0..5 {
            let delta = rand_hermitian(&mut rng, n);
            let h = 1e-5;
            let plus = logdet_ecie(&(&c + &delta * Cx::new(h, 0.0)), n_tr);
            let minus = logdet_ecie(&(&c - &delta * Cx::new(h, 0.0)), n_tr);
            let fd = (plus - minus) / (2.0 * h);
            let analytic = (&tk * &delta).trace().re;
            assert!((fd - analytic).abs() < 1e-5 * analytic.abs().max(1.0), "{fd} vs {analytic}");
        }
    }

    fn check_minorization(seed: u64, sigma2: f64, p_t: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = target(3, 2, true);
        let ctx = ObjectiveContext::new(t, sigma2).unwrap();
        let xk = { let e = p_t * rng.random_range(0.1..1.0); scaled_random(&mut rng, 4, 3, e) };
        let s = surrogate_at(&xk, &ctx).unwrap();
        let gk = relative_entropy(&xk, &ctx).unwrap();
        assert!(s.gain(&s.anchor).abs() == 0.0);
        for _ in 0..20 {
            let e = p_t * rng.random_range(0.0..1.0);
            let x = scaled_random(&mut rng, 4, 3, e);
            let g = relative_entropy(&x, &ctx).unwrap();
            let gap = (g - gk) - s.gain(&x.to_vec());
            assert!(gap >= -1e-8, "minorization violated by {gap}");
        }
    }

    use rand::Rng;

    #[test]
    fn minorization_unit_noise() {
        for seed in 0..5 {
            check_minorization(seed, 1.0, 1.0);
        }
    }

    #[test]
    fn minorization_general_noise() {
        check_minorization(11, 0.4, 2.0);
        check_minorization(12, 3.0, 5.0);
    }

    #[test]
    fn surrogate_gradient_matches_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sigma2 in [1.0, 0.5] {
            let t = target(3, 2, true);
            let ctx = ObjectiveContext::new(t, sigma2).unwrap();
            let xk = scaled_random(&mut rng, 4, 3, 2.0);
            let s = surrogate_at(&xk, &ctx).unwrap();
            let grad = s.gradient(&s.anchor);
            let x0 = xk.to_vec();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..x0.len() {
                for dir in [Cx::new(1.0, 0.0), Cx::new(0.0, 1.0)] {
                    let mut xp = x0.clone();
                    xp[i] += dir * h;
                    let mut xm = x0.clone();
                    xm[i] -= dir * h;
                    let fp = relative_entropy(&WaveformMatrix::from_vec(&xp, 4, 3), &ctx).unwrap();
                    let fm = relative_entropy(&WaveformMatrix::from_vec(&xm, 4, 3), &ctx).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    // d/dt f(x + t·dir·e_i) = Re(conj(dir) · grad_i)
                    let an = (dir.conj() * grad[i]).re;
                    num += (fd - an).powi(2);
                    den += an.powi(2);
                }
            }
            assert!((num / den).sqrt() < 1e-4, "relative gradient error {}", (num / den).sqrt());
        }
    }

    #[test]
    fn surrogate_matches_selection_kronecker_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = target(2, 3, true);
        let ctx = ObjectiveContext::new(t.clone(), 1.0).unwrap();
        let xk = scaled_random(&mut rng, 3, 2, 1.0);
        let s = surrogate_at(&xk, &ctx).unwrap();

        // rebuild via dense G_s, R_G* ⊗ Q and vec(P)
        let b = gradient_blocks(&xk, &t).unwrap();
        let n_rl = b.t22.nrows();
        let r1_inv = &b.t22 + CMat::identity(n_rl, n_rl);
        let xt = lifted_waveform(&xk, 3);
        let v = &r1_inv * (&xt * &t.mean_response);
        let p = b.t12.adjoint() * &t.covariance_sqrt + &v * t.mean_response.adjoint();
        let q = &b.t22 - &v * v.adjoint() - &r1_inv * &r1_inv;
        let g: CMat<f64> = selection_matrix(2, 3, 3).to_dense();
        let big = kron(&t.covariance.map(|z| z.conj()), &q);
        let quad = g.adjoint() * big * &g;
        let lin = g.adjoint() * CVec::from_column_slice(p.as_slice());
        assert!((quad - &s.quad).norm() < 1e-10);
        assert!((lin - &s.lin).norm() < 1e-10);
    }

    #[test]
    fn quad_is_hermitian_negative_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = target(4, 4, true);
        let ctx = ObjectiveContext::new(t, 1.0).unwrap();
        let xk = scaled_random(&mut rng, 5, 4, 1.0);
        let s = surrogate_at(&xk, &ctx).unwrap();
        assert!(crate::linalg::hermitian_defect(&s.quad) < 1e-12);
        let eig = HermitianEigen::new(&s.quad);
        assert!(eig.max() <= 1e-10);
    }

    #[test]
    fn deterministic_target_surrogate_is_tangent_plane() {
        // With R_G = 0 the quadratic part vanishes and the objective is the convex
        // ‖X̃ g_d‖², so the gap to the surrogate is exactly ‖X̃ g_d − X̃_k g_d‖².
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = target(3, 2, false);
        let ctx = ObjectiveContext::new(t.clone(), 1.0).unwrap();
        let xk = scaled_random(&mut rng, 4, 3, 1.0);
        let s = surrogate_at(&xk, &ctx).unwrap();
        assert_eq!(s.quad.norm(), 0.0);
        let gk = relative_entropy(&xk, &ctx).unwrap();
        for _ in 0..10 {
            let x = scaled_random(&mut rng, 4, 3, 3.0);
            let g = relative_entropy(&x, &ctx).unwrap();
            let gap = (g - gk) - s.gain(&x.to_vec());
            let diff = WaveformMatrix::new(&x.samples - &xk.samples);
            let expected = crate::objective::deterministic_snr(&diff, &t);
            assert!((gap - expected).abs() < 1e-10 * expected.max(1.0), "{gap} vs {expected}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn minorization_property(seed in any::<u64>()) {
            check_minorization(seed, 1.0, 1.0);
        }
    }
}
