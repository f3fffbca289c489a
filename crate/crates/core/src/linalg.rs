//! Dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{DfrcError, Result};
use crate::scalar::{re, CMat, CVec, Cx, Real};

pub fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn identity<T: Real>(n: usize) -> CMat<T> {
    CMat::identity(n, n)
}

/// `(A + Aᴴ) / 2`.
pub fn hermitize<T: Real>(a: &CMat<T>) -> CMat<T> {
    let half = re(T::lit(0.5));
    (a + a.adjoint()) * half
}

pub fn frob_sq<T: Real>(a: &CMat<T>) -> T {
    a.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

pub fn norm_sq<T: Real>(v: &CVec<T>) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

pub fn slice_norm_sq<T: Real>(v: &[Cx<T>]) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

/// `Re(aᴴ b)`.
pub fn re_dot<T: Real>(a: &CVec<T>, b: &CVec<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (x, y)| acc + x.re * y.re + x.im * y.im)
}

/// `xᴴ A x`, real part (A Hermitian).
pub fn quad_form<T: Real>(a: &CMat<T>, x: &CVec<T>) -> T {
    re_dot(x, &(a * x))
}

/// Largest elementwise deviation from Hermitian symmetry.
pub fn hermitian_defect<T: Real>(a: &CMat<T>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for j in 0..n {
        for i in 0..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm_sqr().sqrt();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen<T: Real> {
    pub values: DVector<T>,
    pub vectors: CMat<T>,
}

impl<T: Real> HermitianEigen<T> {
    pub fn new(a: &CMat<T>) -> Self {
        let n = a.nrows();
        if n == 0 {
            return Self {
                values: DVector::zeros(0),
                vectors: CMat::zeros(0, 0),
            };
        }
        let eig = hermitize(a).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = CMat::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> T {
        self.values[0]
    }

    pub fn max(&self) -> T {
        self.values[self.values.len() - 1]
    }

    /// `V f(Λ) Vᴴ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> CMat<T> {
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let w = re(f(lam));
            scaled.column_mut(k).scale_mut_complex(w);
        }
        hermitize(&(scaled * self.vectors.adjoint()))
    }
}

trait ScaleComplex<T: Real> {
    fn scale_mut_complex(&mut self, w: Cx<T>);
}

impl<T: Real, S> ScaleComplex<T> for nalgebra::Matrix<Cx<T>, Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<Cx<T>, Dyn, nalgebra::U1>,
{
    fn scale_mut_complex(&mut self, w: Cx<T>) {
        for z in self.iter_mut() {
            *z *= w;
        }
    }
}

/// Hermitian PSD square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt<T: Real>(a: &CMat<T>) -> CMat<T> {
    HermitianEigen::new(a).reconstruct_with(|l| if l > T::zero() { l.sqrt() } else { T::zero() })
}

/// Cholesky factor of a Hermitian positive-definite matrix.
pub struct PdFactor<T: Real> {
    chol: Cholesky<Cx<T>, Dyn>,
}

impl<T: Real> PdFactor<T> {
    pub fn new(a: &CMat<T>, context: &'static str) -> Result<Self> {
        Cholesky::new(hermitize(a))
            .map(|chol| Self { chol })
            .ok_or_else(|| DfrcError::numerical(context, "matrix is not positive definite"))
    }

    pub fn log_det(&self) -> T {
        let l = self.chol.l_dirty();
        let two = T::lit(2.0);
        (0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].re.ln())
    }

    pub fn solve_vec(&self, b: &CVec<T>) -> CVec<T> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &CMat<T>) -> CMat<T> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> CMat<T> {
        hermitize(&self.chol.inverse())
    }
}

/// Implicit `H̃ = H ⊗ I_L` acting on `x = vec(X)` with `X` of shape `L × N_T`.
///
/// `H̃ x = vec(X Hᵀ)` and `H̃ᴴ v = vec(V H*)` for `V` of shape `L × M`; the
/// Kronecker matrix itself is never formed.
#[derive(Clone, Debug)]
pub struct KronChannel<T: Real> {
    h: CMat<T>,
    code_length: usize,
}

impl<T: Real> KronChannel<T> {
    pub fn new(h: &CMat<T>, code_length: usize) -> Self {
        Self {
            h: h.clone(),
            code_length,
        }
    }

    pub fn n_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.h.ncols()
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn channel(&self) -> &CMat<T> {
        &self.h
    }

    /// `H̃ x`, length `M·L`.
    pub fn apply(&self, x: &CVec<T>) -> CVec<T> {
        let (m_users, n_tx) = self.h.shape();
        let l_len = self.code_length;
        debug_assert_eq!(x.len(), n_tx * l_len);
        let mut out = CVec::zeros(m_users * l_len);
        for m in 0..m_users {
            for n in 0..n_tx {
                let h = self.h[(m, n)];
                let col = &x.as_slice()[n * l_len..(n + 1) * l_len];
                let dst = &mut out.as_mut_slice()[m * l_len..(m + 1) * l_len];
                for (d, &xv) in dst.iter_mut().zip(col) {
                    *d += h * xv;
                }
            }
        }
        out
    }

    /// `H̃ᴴ v`, length `N_T·L`.
    pub fn adjoint(&self, v: &CVec<T>) -> CVec<T> {
        let (m_users, n_tx) = self.h.shape();
        let l_len = self.code_length;
        debug_assert_eq!(v.len(), m_users * l_len);
        let mut out = CVec::zeros(n_tx * l_len);
        for n in 0..n_tx {
            for m in 0..m_users {
                let h = self.h[(m, n)].conj();
                let col = &v.as_slice()[m * l_len..(m + 1) * l_len];
                let dst = &mut out.as_mut_slice()[n * l_len..(n + 1) * l_len];
                for (d, &vv) in dst.iter_mut().zip(col) {
                    *d += h * vv;
                }
            }
        }
        out
    }

    /// Explicit `H̃ᴴH̃ = (HᴴH) ⊗ I_L`.
    pub fn gram(&self) -> CMat<T> {
        let hh = self.h.adjoint() * &self.h;
        let l_len = self.code_length;
        let n = self.n_tx() * l_len;
        let mut g = CMat::zeros(n, n);
        for a in 0..self.n_tx() {
            for b in 0..self.n_tx() {
                let v = hh[(a, b)];
                for l in 0..l_len {
                    g[(a * l_len + l, b * l_len + l)] = v;
                }
            }
        }
        g
    }

    /// Largest eigenvalue of `H̃ᴴH̃`, i.e. `σ_max(H)²`.
    pub fn gram_norm(&self) -> T {
        let hh = self.h.adjoint() * &self.h;
        HermitianEigen::new(&hh).max().max(T::zero())
    }

    /// Minimum-norm preimage `H̃⁺ v` (requires `H` with full row rank).
    pub fn pseudo_inverse_apply(&self, v: &CVec<T>) -> Result<CVec<T>> {
        let hht = &self.h * self.h.adjoint();
        let factor = PdFactor::new(&hht, "channel pseudo-inverse")?;
        // (H ⊗ I)⁺ = (H⁺ ⊗ I) with H⁺ = Hᴴ (H Hᴴ)⁻¹; act column-block-wise.
        let (m_users, _) = self.h.shape();
        let l_len = self.code_length;
        let vmat = DMatrix::from_fn(m_users, l_len, |m, l| v[m * l_len + l]);
        let w = factor.solve_mat(&vmat);
        let w_vec = CVec::from_fn(m_users * l_len, |i, _| w[(i / l_len, i % l_len)]);
        Ok(self.adjoint(&w_vec))
    }
}

/// Column-major `vec(X)`.
pub fn vectorize<T: Real>(x: &CMat<T>) -> CVec<T> {
    CVec::from_column_slice(x.as_slice())
}

pub fn unvectorize<T: Real>(x: &CVec<T>, rows: usize, cols: usize) -> CMat<T> {
    CMat::from_column_slice(rows, cols, x.as_slice())
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kron_matches_block_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_cmat(&mut rng, 2, 3);
        let b = rand_cmat(&mut rng, 3, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..3 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 3 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn implicit_channel_matches_explicit_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, nt, l) = (3, 5, 4);
        let h = rand_cmat(&mut rng, m, nt);
        let op = KronChannel::new(&h, l);
        let ht = kron(&h, &identity(l));
        for _ in 0..5 {
            let x = rand_cvec(&mut rng, nt * l);
            let v = rand_cvec(&mut rng, m * l);
            assert!((op.apply(&x) - &ht * &x).norm() < 1e-12);
            assert!((op.adjoint(&v) - ht.adjoint() * &v).norm() < 1e-12);
            assert!((op.gram() * &x - ht.adjoint() * (&ht * &x)).norm() < 1e-12);
        }
        // vec(X Hᵀ) identity
        let x = rand_cmat(&mut rng, l, nt);
        let direct = vectorize(&(&x * h.transpose()));
        assert!((op.apply(&vectorize(&x)) - direct).norm() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_gives_exact_preimage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_cmat(&mut rng, 3, 6);
        let op = KronChannel::new(&h, 4);
        let v = rand_cvec(&mut rng, 12);
        let x = op.pseudo_inverse_apply(&v).unwrap();
        assert!((op.apply(&x) - v).norm() < 1e-10);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_psd(&mut rng, 7, 3);
        let s = psd_sqrt(&a);
        assert!((&s * &s - &a).norm() / a.norm() < 1e-9);
        assert!(hermitian_defect(&s) < 1e-12);
    }

    #[test]
    fn cholesky_logdet_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_psd(&mut rng, 6, 6) + identity::<f64>(6);
        let f = PdFactor::new(&a, "test").unwrap();
        let eig = HermitianEigen::new(&a);
        let logdet: f64 = eig.values.iter().map(|l| l.ln()).sum();
        assert!((f.log_det() - logdet).abs() < 1e-10);
        assert!((f.inverse() * &a - identity::<f64>(6)).norm() < 1e-10);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_hermitian(&mut rng, 8);
        let e = HermitianEigen::new(&a);
        for w in e.values.as_slice().windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!((e.reconstruct_with(|l| l) - &a).norm() < 1e-10);
    }
}
