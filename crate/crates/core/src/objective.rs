//! Relative entropy, MUI energy, PAPR and feasibility of candidate waveforms.

use crate::error::{DfrcError, Result};
use crate::linalg::{frob_sq, kron, norm_sq, slice_norm_sq, PdFactor};
use crate::model::{CommScenario, RicianTarget, WaveformMatrix};
use crate::scalar::{re, CMat, CVec, Cx, Real};

/// Target statistics plus radar noise power.
#[derive(Clone, Debug)]
pub struct ObjectiveContext<T: Real> {
    pub target: RicianTarget<T>,
    pub noise_power: T,
}

impl<T: Real> ObjectiveContext<T> {
    pub fn new(target: RicianTarget<T>, noise_power: T) -> Result<Self> {
        if !(noise_power > T::zero()) || !noise_power.is_finite() {
            return Err(DfrcError::invalid("noise_power", "must be positive and finite"));
        }
        Ok(Self { target, noise_power })
    }

    pub fn n_rx(&self) -> usize {
        self.target.n_rx
    }

    /// `N_R · L`.
    pub fn n_rl(&self, code_length: usize) -> usize {
        self.target.n_rx * code_length
    }
}

/// `I_{N_R} ⊗ X`.
pub fn lifted_waveform<T: Real>(x: &WaveformMatrix<T>, n_rx: usize) -> CMat<T> {
    kron(&CMat::identity(n_rx, n_rx), &x.samples)
}

/// `X̃ R_G^{1/2}`, the factor with `X̃ R_G X̃ᴴ = F Fᴴ`.
pub(crate) fn lifted_sqrt_factor<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> CMat<T> {
    let (l_len, n_tx) = x.samples.shape();
    let n_rx = target.n_rx;
    let s = &target.covariance_sqrt;
    let mut out = CMat::zeros(n_rx * l_len, n_tx * n_rx);
    // row block r of X̃ touches only columns r·N_T..(r+1)·N_T
    for r in 0..n_rx {
        let rows = s.rows(r * n_tx, n_tx);
        let block = &x.samples * rows;
        out.rows_mut(r * l_len, l_len).copy_from(&block);
    }
    out
}

/// `X̃ g_d` without forming `X̃`.
pub(crate) fn lifted_mean<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> CVec<T> {
    let (l_len, n_tx) = x.samples.shape();
    let n_rx = target.n_rx;
    let mut out = CVec::zeros(n_rx * l_len);
    for r in 0..n_rx {
        let g = target.mean_response.rows(r * n_tx, n_tx);
        out.rows_mut(r * l_len, l_len).copy_from(&(&x.samples * g));
    }
    out
}

fn check_dims<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> Result<()> {
    if x.n_tx() != target.n_tx {
        return Err(DfrcError::dims("waveform columns", target.n_tx, x.n_tx()));
    }
    Ok(())
}

/// `R_1 = X̃ R_G X̃ᴴ + σ² I`.
pub fn covariance_r1<T: Real>(x: &WaveformMatrix<T>, ctx: &ObjectiveContext<T>) -> Result<CMat<T>> {
    check_dims(x, &ctx.target)?;
    let f = lifted_sqrt_factor(x, &ctx.target);
    let mut r1 = &f * f.adjoint();
    for i in 0..r1.nrows() {
        r1[(i, i)] += re(ctx.noise_power);
    }
    Ok(crate::linalg::hermitize(&r1))
}

/// `log det R_1 + tr[R_1⁻¹(X̃ g_d g_dᴴ X̃ᴴ + σ² I)] − N_RL (1 + log σ²)`.
///
/// Evaluated on `R_1 / σ²` so that every term is `O(1)` at low transmit power.
pub fn relative_entropy<T: Real>(x: &WaveformMatrix<T>, ctx: &ObjectiveContext<T>) -> Result<T> {
    check_dims(x, &ctx.target)?;
    let sigma2 = ctx.noise_power;
    let inv_sigma = re(T::one() / sigma2.sqrt());
    let f = lifted_sqrt_factor(x, &ctx.target) * inv_sigma;
    let v = lifted_mean(x, &ctx.target) * inv_sigma;
    let n = f.nrows();
    let mut r = &f * f.adjoint();
    for i in 0..n {
        r[(i, i)] += Cx::new(T::one(), T::zero());
    }
    let chol = PdFactor::new(&r, "relative_entropy")?;
    let log_det = chol.log_det();
    let tr_inv = chol.inverse().diagonal().iter().fold(T::zero(), |acc, z| acc + z.re);
    let snr = crate::linalg::re_dot(&v, &chol.solve_vec(&v));
    Ok(log_det + (tr_inv - T::from_usize_lossy(n)) + snr)
}

/// `‖H Xᵀ − S‖²_F`.
pub fn mui_energy<T: Real>(x: &WaveformMatrix<T>, comm: &CommScenario<T>) -> Result<T> {
    if comm.channel.ncols() != x.n_tx() || comm.symbols.ncols() != x.code_length() {
        return Err(DfrcError::dims(
            "mui_energy",
            format!("L={} N_T={}", comm.symbols.ncols(), comm.channel.ncols()),
            format!("L={} N_T={}", x.code_length(), x.n_tx()),
        ));
    }
    let residual = &comm.channel * x.samples.transpose() - &comm.symbols;
    Ok(frob_sq(&residual))
}

/// `max_l |x_l|² / ((1/L) Σ_l |x_l|²)`.
pub fn papr_of_column<T: Real>(x: &[Cx<T>]) -> Result<T> {
    let total = slice_norm_sq(x);
    if !(total > T::zero()) {
        return Err(DfrcError::ZeroSequence);
    }
    let peak = x.iter().fold(T::zero(), |m, z| m.max(z.norm_sqr()));
    Ok(peak * T::from_usize_lossy(x.len()) / total)
}

/// Largest per-antenna PAPR of a waveform.
pub fn max_papr<T: Real>(x: &WaveformMatrix<T>) -> Result<T> {
    let mut worst = T::zero();
    for n in 0..x.n_tx() {
        let col = x.samples.column(n);
        worst = worst.max(papr_of_column(col.as_slice())?);
    }
    Ok(worst)
}

/// Constraint set a design must satisfy besides the MUI budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintMode<T> {
    /// `tr(X Xᴴ) ≤ P_t`.
    Energy,
    /// `‖x_n‖² = P_t/N_T` and `PAPR(x_n) ≤ ρ` for every antenna.
    Papr { limit: T },
}

impl<T: Real> ConstraintMode<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintMode::Energy => "energy",
            ConstraintMode::Papr { .. } => "papr",
        }
    }
}

/// Constraint values of a waveform and whether they hold at the stated slack.
#[derive(Clone, Debug, PartialEq)]
pub struct Feasibility {
    pub energy: f64,
    pub mui: f64,
    pub max_papr: Option<f64>,
    /// Largest `|‖x_n‖² − P_t/N_T|`, PAPR mode only.
    pub column_energy_error: Option<f64>,
    pub energy_ok: bool,
    pub mui_ok: bool,
    pub papr_ok: bool,
}

impl Feasibility {
    pub fn all_ok(&self) -> bool {
        self.energy_ok && self.mui_ok && self.papr_ok
    }
}

pub const MUI_SLACK: f64 = 1e-6;
pub const ENERGY_SLACK: f64 = 1e-9;
pub const PAPR_SLACK: f64 = 1e-9;

pub fn check_feasibility<T: Real>(
    x: &WaveformMatrix<T>,
    comm: &CommScenario<T>,
    transmit_energy: T,
    mode: ConstraintMode<T>,
) -> Result<Feasibility> {
    let energy = x.energy().as_f64();
    let mui = mui_energy(x, comm)?.as_f64();
    let p_t = transmit_energy.as_f64();
    let eps = comm.mui_budget.as_f64();
    let mut out = Feasibility {
        energy,
        mui,
        max_papr: None,
        column_energy_error: None,
        energy_ok: energy <= p_t * (1.0 + ENERGY_SLACK),
        mui_ok: mui <= eps * (1.0 + MUI_SLACK),
        papr_ok: true,
    };
    if let ConstraintMode::Papr { limit } = mode {
        let per = p_t / x.n_tx() as f64;
        let err = (0..x.n_tx())
            .map(|n| (x.column_energy(n).as_f64() - per).abs())
            .fold(0.0, f64::max);
        let papr = max_papr(x).map(|p| p.as_f64()).unwrap_or(f64::INFINITY);
        out.column_energy_error = Some(err);
        out.max_papr = Some(papr);
        out.papr_ok = err <= ENERGY_SLACK.max(ENERGY_SLACK * per) && papr <= limit.as_f64() * (1.0 + PAPR_SLACK);
    }
    Ok(out)
}

/// `‖X̃ g_d‖²`, the relative entropy of a purely deterministic target at `σ² = 1`.
pub fn deterministic_snr<T: Real>(x: &WaveformMatrix<T>, target: &RicianTarget<T>) -> T {
    norm_sq(&lifted_mean(x, target))
}
