//! Homogenized QCQP and its semidefinite relaxation.

use crate::error::{DfrcError, Result};
use crate::linalg::{frob_sq, hermitize, KronChannel};
use crate::minorize::Surrogate;
use crate::model::CommScenario;
use crate::scalar::{cx, re, CMat, CVec, Cx, Real};

use super::feasible::min_mui_within_energy;

/// `max x̂ᴴM̂x̂` s.t. `x̂ᴴJ1x̂ ≤ P_t`, `x̂ᴴJ0x̂ = 1`, `x̂ᴴĤx̂ ≤ ε` on `x̂ = (x, t)`.
#[derive(Clone, Debug)]
pub struct HomogenizedProblem<T: Real> {
    /// `[[M, m], [mᴴ, 0]]`.
    pub quad_hat: CMat<T>,
    /// `[[H̃ᴴH̃, −H̃ᴴs], [−sᴴH̃, sᴴs]]`.
    pub mui_hat: CMat<T>,
    pub j0: CMat<T>,
    pub j1: CMat<T>,
    pub budget: T,
    pub mui_budget: T,
    pub channel: KronChannel<T>,
    pub symbols: CVec<T>,
}

impl<T: Real> HomogenizedProblem<T> {
    pub fn dim(&self) -> usize {
        self.quad_hat.nrows()
    }

    /// `x̂ = (xᵀ, 1)ᵀ`.
    pub fn lift(&self, x: &CVec<T>) -> CVec<T> {
        let n = x.len();
        let mut out = CVec::zeros(n + 1);
        out.rows_mut(0, n).copy_from(x);
        out[n] = Cx::new(T::one(), T::zero());
        out
    }

    /// The four constraint/objective matrices in the order `M̂, J1, J0, Ĥ`.
    pub fn forms(&self) -> [&CMat<T>; 4] {
        [&self.quad_hat, &self.j1, &self.j0, &self.mui_hat]
    }
}

pub fn homogenize<T: Real>(surrogate: &Surrogate<T>, comm: &CommScenario<T>, budget: T, mui_budget: T) -> HomogenizedProblem<T> {
    let op = comm.channel_op();
    let s = comm.symbol_vec();
    let n = surrogate.dim();
    let mut quad_hat = CMat::zeros(n + 1, n + 1);
    quad_hat.view_mut((0, 0), (n, n)).copy_from(&surrogate.quad);
    quad_hat.view_mut((0, n), (n, 1)).copy_from(&surrogate.lin);
    quad_hat.view_mut((n, 0), (1, n)).copy_from(&surrogate.lin.adjoint());

    let hs = op.adjoint(&s);
    let mut mui_hat = CMat::zeros(n + 1, n + 1);
    mui_hat.view_mut((0, 0), (n, n)).copy_from(&op.gram());
    mui_hat.view_mut((0, n), (n, 1)).copy_from(&(-&hs));
    mui_hat.view_mut((n, 0), (1, n)).copy_from(&(-hs.adjoint()));
    mui_hat[(n, n)] = re(crate::linalg::norm_sq(&s));

    let mut j0 = CMat::zeros(n + 1, n + 1);
    j0[(n, n)] = Cx::new(T::one(), T::zero());
    let mut j1 = CMat::identity(n + 1, n + 1);
    j1[(n, n)] = Cx::new(T::zero(), T::zero());
    HomogenizedProblem {
        quad_hat: hermitize(&quad_hat),
        mui_hat: hermitize(&mui_hat),
        j0,
        j1,
        budget,
        mui_budget,
        channel: op,
        symbols: s,
    }
}

#[derive(Clone, Debug)]
pub struct SdrOptions<T> {
    /// Relative tolerance on primal/dual infeasibility and the duality gap.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SdrOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-9),
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdrSolution<T: Real> {
    /// `X̂*`, Hermitian PSD.
    pub matrix: CMat<T>,
    /// `tr(M̂ X̂*)`.
    pub objective: T,
    /// Dual bound `y0 + P_t y1 + ε y2` on the relaxation value.
    pub dual_bound: T,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: T,
    pub dual_residual: T,
    pub gap: T,
}

/// `Re tr(A B)` for Hermitian `A`, `B`.
pub(crate) fn trace_inner<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        // Σ_ij A_ij B_ji = Σ_ij A_ij conj(B_ij) for Hermitian B
        acc += x.re * y.re + x.im * y.im;
    }
    acc
}

/// `Re tr(A B)` for general square `A`, `B`.
fn trace_product<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// Block point `(matrix, slack_1, slack_2)`; the slacks turn the two
/// inequalities into equalities.
#[derive(Clone, Debug)]
struct BlockPoint<T: Real> {
    mat: CMat<T>,
    slack: [T; 2],
}

impl<T: Real> BlockPoint<T> {
    fn inner(&self, other: &BlockPoint<T>) -> T {
        trace_inner(&self.mat, &other.mat) + self.slack[0] * other.slack[0] + self.slack[1] * other.slack[1]
    }

    /// `⟨A, G⟩` where `A` is Hermitian and `G` arbitrary.
    fn inner_general(&self, g: &BlockPoint<T>) -> T {
        trace_product(&self.mat, &g.mat) + self.slack[0] * g.slack[0] + self.slack[1] * g.slack[1]
    }

    fn norm(&self) -> T {
        self.inner(self).sqrt()
    }
}

/// Standard-form data `min ⟨C, X⟩` s.t. `⟨A_i, X⟩ = b_i`, `X ⪰ 0`, with rows
/// scaled to unit norm.
struct StandardForm<T: Real> {
    c: BlockPoint<T>,
    a: [BlockPoint<T>; 3],
    b: [T; 3],
    c_scale: T,
    /// Row scales applied to `J0` and `J1`.
    j_scale: [T; 2],
    /// `F` with `A_2 = F Fᴴ`, so products with the MUI row cost `O(n²r)`.
    mui_factor: CMat<T>,
}

impl<T: Real> StandardForm<T> {
    fn new(hp: &HomogenizedProblem<T>) -> Self {
        let n = hp.dim();
        let zero = T::zero();
        let one = T::one();
        let raw = [
            BlockPoint { mat: hp.j0.clone(), slack: [zero, zero] },
            BlockPoint { mat: hp.j1.clone(), slack: [one, zero] },
            BlockPoint { mat: hp.mui_hat.clone(), slack: [zero, one] },
        ];
        let raw_b = [one, hp.budget, hp.mui_budget];
        let mut a = raw.clone();
        let mut b = raw_b;
        let mut scale = [one; 3];
        for i in 0..3 {
            scale[i] = one / raw[i].norm();
            a[i] = BlockPoint {
                mat: &raw[i].mat * re(scale[i]),
                slack: [raw[i].slack[0] * scale[i], raw[i].slack[1] * scale[i]],
            };
            b[i] = raw_b[i] * scale[i];
        }

        // Ĥ = G Gᴴ with column j of G equal to (H̃ᴴe_j, −conj(s_j))
        let r = hp.symbols.len();
        let root = re(scale[2].sqrt());
        let mut mui_factor = CMat::zeros(n, r);
        for j in 0..r {
            let mut e = CVec::zeros(r);
            e[j] = re(one);
            let col = hp.channel.adjoint(&e);
            for i in 0..n - 1 {
                mui_factor[(i, j)] = col[i] * root;
            }
            mui_factor[(n - 1, j)] = -hp.symbols[j].conj() * root;
        }

        let c_mat = -&hp.quad_hat;
        let c_scale = frob_sq(&c_mat).sqrt().max(T::tiny());
        let c = BlockPoint {
            mat: c_mat * re(one / c_scale),
            slack: [zero, zero],
        };
        Self {
            c,
            a,
            b,
            c_scale,
            j_scale: [scale[0], scale[1]],
            mui_factor,
        }
    }

    fn apply(&self, x: &BlockPoint<T>) -> [T; 3] {
        [self.a[0].inner(x), self.a[1].inner(x), self.a[2].inner(x)]
    }

    fn adjoint(&self, y: &[T; 3]) -> BlockPoint<T> {
        let mut mat = &self.a[0].mat * re(y[0]);
        mat += &self.a[1].mat * re(y[1]);
        mat += &self.a[2].mat * re(y[2]);
        let mut slack = [T::zero(); 2];
        for k in 0..2 {
            slack[k] = (0..3).fold(T::zero(), |acc, i| acc + y[i] * self.a[i].slack[k]);
        }
        BlockPoint { mat, slack }
    }

    /// `A_j Z⁻¹` for the three rows, using the structure of `J0`, `J1` and `Ĥ`.
    fn times_inverse(&self, z_inv: &CMat<T>) -> [CMat<T>; 3] {
        let n = z_inv.nrows();
        let mut a0 = CMat::zeros(n, n);
        a0.row_mut(n - 1).copy_from(&z_inv.row(n - 1));
        let a1 = (z_inv - &a0) * re(self.j_scale[1]);
        a0 *= re(self.j_scale[0]);
        let a2 = &self.mui_factor * (self.mui_factor.adjoint() * z_inv);
        [a0, a1, a2]
    }
}

/// Smallest eigenvalue of `L⁻¹ D L⁻ᴴ` by Lanczos with full
/// reorthogonalization. Ritz values overestimate the minimum, so callers
/// must verify the resulting step.
fn min_eig_congruence<T: Real>(l: &CMat<T>, d: &CMat<T>) -> T {
    let n = l.nrows();
    let kmax = n.min(60);
    let apply = |v: &CVec<T>| -> CVec<T> {
        let t = l.ad_solve_lower_triangular_unchecked(v);
        l.solve_lower_triangular_unchecked(&(d * t))
    };
    let start = CVec::from_fn(n, |i, _| {
        let t = T::from_usize_lossy(i);
        cx(T::one() + (t * T::lit(0.7)).sin() * T::lit(0.5), (t * T::lit(1.3)).cos() * T::lit(0.5))
    });
    let mut basis = vec![&start * re(T::one() / start.norm())];
    let mut alpha: Vec<T> = Vec::with_capacity(kmax);
    let mut beta: Vec<T> = Vec::with_capacity(kmax);
    let mut theta = T::zero();
    for j in 0..kmax {
        let mut w = apply(&basis[j]);
        alpha.push(basis[j].dotc(&w).re);
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w.axpy(-c, q, re(T::one()));
            }
        }
        let b = w.norm();
        let scale = alpha.iter().fold(T::zero(), |m, a| m.max(a.abs())).max(T::tiny());
        let exhausted = j + 1 == kmax || b <= T::lit(1e-12) * scale;
        if exhausted || (j + 1) % 10 == 0 {
            let m = alpha.len();
            let tri = nalgebra::DMatrix::<T>::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    T::zero()
                }
            });
            let eig = nalgebra::SymmetricEigen::new(tri);
            let (k, &val) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .expect("non-empty tridiagonal");
            theta = val;
            let residual = b * eig.eigenvectors[(m - 1, k)].abs();
            if exhausted || residual <= T::lit(1e-6) * val.abs().max(T::lit(1e-12) * scale) {
                break;
            }
        }
        beta.push(b);
        basis.push(w * re(T::one() / b));
    }
    theta
}

/// Largest `α` keeping `LLᴴ + αΔX ⪰ 0` and the slacks nonnegative.
fn max_step<T: Real>(l: &CMat<T>, slack: &[T; 2], d: &BlockPoint<T>) -> T {
    let lam = min_eig_congruence(l, &d.mat);
    let mut alpha = T::max_value().unwrap();
    if lam < T::zero() {
        alpha = -T::one() / lam;
    }
    for k in 0..2 {
        if d.slack[k] < T::zero() {
            alpha = alpha.min(-slack[k] / d.slack[k]);
        }
    }
    alpha
}

fn cholesky_lower<T: Real>(a: &CMat<T>) -> Option<CMat<T>> {
    nalgebra::Cholesky::new(hermitize(a)).map(|c| c.unpack())
}

/// Takes the step `α` from `p` along `d`, shrinking it until the matrix block
/// admits a Cholesky factor; returns the new point and its factor.
fn verified_step<T: Real>(p: &BlockPoint<T>, d: &BlockPoint<T>, mut alpha: T) -> Result<(BlockPoint<T>, CMat<T>, T)> {
    for _ in 0..40 {
        let mat = hermitize(&(&p.mat + &d.mat * re(alpha)));
        if let Some(l) = cholesky_lower(&mat) {
            let slack = [p.slack[0] + alpha * d.slack[0], p.slack[1] + alpha * d.slack[1]];
            return Ok((BlockPoint { mat, slack }, l, alpha));
        }
        alpha *= T::lit(0.8);
    }
    Err(DfrcError::numerical("solve_sdr", "iterate lost positive definiteness"))
}

/// Solves the relaxation with a Mehrotra predictor-corrector interior-point
/// method (HKM direction). With three equality rows the Schur system is 3×3.
pub fn solve_sdr<T: Real>(hp: &HomogenizedProblem<T>, options: &SdrOptions<T>) -> Result<SdrSolution<T>> {
    let min_mui = min_mui_within_energy(&hp.channel, &hp.symbols, hp.budget)?;
    if min_mui > hp.mui_budget {
        return Err(DfrcError::Infeasible {
            budget: hp.mui_budget.as_f64(),
            min_mui: min_mui.as_f64(),
        });
    }
    let n = hp.dim();
    let sf = StandardForm::new(hp);
    let dim_total = T::from_usize_lossy(n + 2);
    let one = T::one();
    let b_norm = (sf.b[0] * sf.b[0] + sf.b[1] * sf.b[1] + sf.b[2] * sf.b[2]).sqrt();
    let c_norm = sf.c.norm();

    let ident = BlockPoint {
        mat: CMat::identity(n, n),
        slack: [one, one],
    };
    let mut x = ident.clone();
    let mut z = ident;
    let mut x_l = CMat::identity(n, n);
    let mut z_l = CMat::identity(n, n);
    let mut y = [T::zero(); 3];

    let mut converged = false;
    let mut iterations = 0;
    let mut rp_norm = T::zero();
    let mut rd_norm = T::zero();
    let mut gap = T::zero();
    for it in 0..options.max_iter {
        iterations = it + 1;
        let ax = sf.apply(&x);
        let rp = [sf.b[0] - ax[0], sf.b[1] - ax[1], sf.b[2] - ax[2]];
        let aty = sf.adjoint(&y);
        let rd = BlockPoint {
            mat: &sf.c.mat - &aty.mat - &z.mat,
            slack: [sf.c.slack[0] - aty.slack[0] - z.slack[0], sf.c.slack[1] - aty.slack[1] - z.slack[1]],
        };
        let pobj = sf.c.inner(&x);
        let dobj = sf.b[0] * y[0] + sf.b[1] * y[1] + sf.b[2] * y[2];
        rp_norm = (rp[0] * rp[0] + rp[1] * rp[1] + rp[2] * rp[2]).sqrt() / (one + b_norm);
        rd_norm = rd.norm() / (one + c_norm);
        gap = (pobj - dobj).abs() / (one + pobj.abs() + dobj.abs());
        if rp_norm <= options.tol && rd_norm <= options.tol && gap <= options.tol {
            converged = true;
            break;
        }
        let mu = x.inner(&z) / dim_total;

        let z_l_inv = z_l.solve_lower_triangular_unchecked(&CMat::identity(n, n));
        let z_inv = hermitize(&(z_l_inv.adjoint() * &z_l_inv));
        let z_inv_slack = [one / z.slack[0], one / z.slack[1]];
        let a_zi = sf.times_inverse(&z_inv);
        // W_j = X A_j Z⁻¹; the Schur complement is M_ij = ⟨A_i, W_j⟩
        let w: Vec<CMat<T>> = a_zi.iter().map(|m| &x.mat * m).collect();
        let mut schur = nalgebra::DMatrix::<T>::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut v = trace_product(&sf.a[i].mat, &w[j]);
                for k in 0..2 {
                    v += sf.a[i].slack[k] * sf.a[j].slack[k] * x.slack[k] * z_inv_slack[k];
                }
                schur[(i, j)] = v;
            }
        }
        let schur = (&schur + schur.transpose()) * T::lit(0.5);
        let schur_lu = schur.lu();

        // once the dual is feasible the R_d terms vanish and are skipped
        let rd_zi = (frob_sq(&rd.mat).sqrt() > T::lit(1e-14) * (one + c_norm)).then(|| &rd.mat * &z_inv);
        let x_rd_zi = rd_zi.as_ref().map(|m| &x.mat * m);

        // ΔX = target − X − X ΔZ Z⁻¹ with ΔZ = R_d − Σ Δy_j A_j
        let direction = |target_mat: CMat<T>, target_slack: [T; 2]| -> Result<(BlockPoint<T>, [T; 3], BlockPoint<T>)> {
            let mut g_mat = target_mat - &x.mat;
            if let Some(m) = &x_rd_zi {
                g_mat -= m;
            }
            let mut g_slack = [T::zero(); 2];
            for k in 0..2 {
                g_slack[k] = target_slack[k] - x.slack[k] - x.slack[k] * rd.slack[k] * z_inv_slack[k];
            }
            let g = BlockPoint { mat: g_mat, slack: g_slack };
            let ag = [sf.a[0].inner_general(&g), sf.a[1].inner_general(&g), sf.a[2].inner_general(&g)];
            let rhs = nalgebra::DVector::<T>::from_fn(3, |i, _| rp[i] - ag[i]);
            let dy_v = schur_lu
                .solve(&rhs)
                .ok_or_else(|| DfrcError::numerical("solve_sdr", "singular Schur complement"))?;
            let dy = [dy_v[0], dy_v[1], dy_v[2]];
            let atdy = sf.adjoint(&dy);
            let dz = BlockPoint {
                mat: &rd.mat - &atdy.mat,
                slack: [rd.slack[0] - atdy.slack[0], rd.slack[1] - atdy.slack[1]],
            };
            let mut dx_mat = g.mat;
            for j in 0..3 {
                dx_mat += &w[j] * re(dy[j]);
            }
            let mut dx_slack = [T::zero(); 2];
            for k in 0..2 {
                dx_slack[k] = target_slack[k] - x.slack[k] - x.slack[k] * dz.slack[k] * z_inv_slack[k];
            }
            Ok((BlockPoint { mat: hermitize(&dx_mat), slack: dx_slack }, dy, dz))
        };

        // predictor
        let (dx_a, dy_a, dz_a) = direction(CMat::zeros(n, n), [T::zero(); 2])?;
        let ap = max_step(&x_l, &x.slack, &dx_a).min(one);
        let ad = max_step(&z_l, &z.slack, &dz_a).min(one);
        let mu_aff = (x.inner(&z) + ap * dx_a.inner(&z) + ad * x.inner(&dz_a) + ap * ad * dx_a.inner(&dz_a)) / dim_total;
        let sigma = (mu_aff / mu).max(T::zero()).powi(3).min(one);

        // corrector: target σμZ⁻¹ − ΔX_a ΔZ_a Z⁻¹
        let mut dz_zi = match &rd_zi {
            Some(m) => m.clone(),
            None => CMat::zeros(n, n),
        };
        for j in 0..3 {
            dz_zi -= &a_zi[j] * re(dy_a[j]);
        }
        let target_mat = &z_inv * re(sigma * mu) - &dx_a.mat * dz_zi;
        let mut target_slack = [T::zero(); 2];
        for k in 0..2 {
            target_slack[k] = sigma * mu * z_inv_slack[k] - dx_a.slack[k] * dz_a.slack[k] * z_inv_slack[k];
        }
        let (dx, dy, dz) = direction(target_mat, target_slack)?;
        let gamma = T::lit(0.95);
        let ap = (gamma * max_step(&x_l, &x.slack, &dx)).min(one);
        let ad = (gamma * max_step(&z_l, &z.slack, &dz)).min(one);
        let (x_next, x_l_next, _) = verified_step(&x, &dx, ap)?;
        let (z_next, z_l_next, ad) = verified_step(&z, &dz, ad)?;
        x = x_next;
        x_l = x_l_next;
        z = z_next;
        z_l = z_l_next;
        for i in 0..3 {
            y[i] += ad * dy[i];
        }
    }

    let matrix = hermitize(&x.mat);
    let objective = trace_inner(&hp.quad_hat, &matrix);
    // dual of max tr(M̂X): the scaled y maps back through the row and objective scales
    let dual_bound = -(0..3).fold(T::zero(), |acc, i| acc + y[i] * sf.b[i]) * sf.c_scale;
    log::debug!(
        "sdr: {iterations} iterations, primal {:e}, dual {:e}, gap {:e}",
        rp_norm.as_f64(),
        rd_norm.as_f64(),
        gap.as_f64()
    );
    Ok(SdrSolution {
        matrix,
        objective,
        dual_bound,
        iterations,
        converged,
        primal_residual: rp_norm,
        dual_residual: rd_norm,
        gap,
    })
}
