//! Radar and communication performance: NP detector, Monte-Carlo ROC, BER,
//! sum-rate and constellation export.
//!
//! Monte-Carlo trials are split into fixed-size blocks, each with its own
//! ChaCha stream derived from `(seed, block)`. Blocks run on the rayon pool
//! and are merged in block order, so results depend only on the seed and the
//! trial count, never on the number of workers.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DfrcError, Result};
use crate::linalg::norm_sq;
use crate::model::{complex_normal, derive_seed, generate_channel, RicianTarget, Scenario, ScenarioConfig, WaveformMatrix};
use crate::objective::{covariance_r1, ObjectiveContext};
use crate::scalar::{re, CMat, CVec, Real};

const BLOCK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub pfa_grid: Vec<f64>,
    pub pd: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pfa,pd,trials,seed\n");
        for (p, d) in self.pfa_grid.iter().zip(&self.pd) {
            let _ = writeln!(out, "{p:e},{d:.8},{},{}", self.trials, self.seed);
        }
        out
    }

    /// `P_d` at the grid point closest to `pfa`.
    pub fn pd_at(&self, pfa: f64) -> f64 {
        let mut best = 0;
        for (i, p) in self.pfa_grid.iter().enumerate() {
            if (p.ln() - pfa.ln()).abs() < (self.pfa_grid[best].ln() - pfa.ln()).abs() {
                best = i;
            }
        }
        self.pd[best]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerCurve {
    pub snr_grid_db: Vec<f64>,
    pub ber: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl BerCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,ber,trials,seed\n");
        for (s, b) in self.snr_grid_db.iter().zip(&self.ber) {
            let _ = writeln!(out, "{s},{b:e},{},{}", self.trials, self.seed);
        }
        out
    }
}

/// Log-spaced false-alarm grid from `10^lo` to 1, `per_decade` points per decade.
pub fn log_pfa_grid(lo: i32, per_decade: usize) -> Vec<f64> {
    let steps = (-lo) as usize * per_decade;
    (0..=steps)
        .map(|k| 10f64.powf(lo as f64 + k as f64 / per_decade as f64))
        .collect()
}

/// Binomial standard error of a probability estimated from `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// The NP statistic `yᴴ(σ⁻²I − R_1⁻¹)y + 2Re[yᴴR_1⁻¹X̃g_d]` with its
/// waveform-dependent parts precomputed.
pub struct NpDetector<T: Real> {
    /// Lower Cholesky factor of `R_1`.
    l: CMat<T>,
    /// `L⁻¹X̃g_d`.
    whitened_mean: CVec<T>,
    inv_sigma2: T,
}

impl<T: Real> NpDetector<T> {
    pub fn new(x: &WaveformMatrix<T>, target: &RicianTarget<T>, sigma2: T) -> Result<Self> {
        if sigma2 <= T::zero() {
            return Err(DfrcError::invalid("sigma2", "noise power must be positive"));
        }
        let ctx = ObjectiveContext::new(target.clone(), sigma2)?;
        let r1 = covariance_r1(x, &ctx)?;
        let l = nalgebra::Cholesky::new(r1)
            .ok_or_else(|| DfrcError::numerical("NpDetector", "R_1 is not positive definite"))?
            .unpack();
        let mean = lifted_apply(x, &target.mean_response, target.n_rx);
        let whitened_mean = l.solve_lower_triangular_unchecked(&mean);
        Ok(Self {
            l,
            whitened_mean,
            inv_sigma2: T::one() / sigma2,
        })
    }

    pub fn statistic(&self, y: &CVec<T>) -> T {
        let v = self.l.solve_lower_triangular_unchecked(y);
        norm_sq(y) * self.inv_sigma2 - norm_sq(&v) + T::lit(2.0) * v.dotc(&self.whitened_mean).re
    }
}

/// One-shot form of [`NpDetector::statistic`].
pub fn detector_statistic<T: Real>(y: &CVec<T>, x: &WaveformMatrix<T>, target: &RicianTarget<T>, sigma2: T) -> Result<T> {
    let det = NpDetector::new(x, target, sigma2)?;
    if y.len() != det.l.nrows() {
        return Err(DfrcError::dims("detector observation", det.l.nrows(), y.len()));
    }
    Ok(det.statistic(y))
}

/// `(I_{N_R} ⊗ X) g` for `g` of length `N_T·N_R`.
fn lifted_apply<T: Real>(x: &WaveformMatrix<T>, g: &CVec<T>, n_rx: usize) -> CVec<T> {
    let (l_len, n_tx) = x.samples.shape();
    let mut out = CVec::zeros(n_rx * l_len);
    for r in 0..n_rx {
        let block = &x.samples * g.rows(r * n_tx, n_tx);
        out.rows_mut(r * l_len, l_len).copy_from(&block);
    }
    out
}

fn complex_noise<T: Real, R: Rng>(rng: &mut R, n: usize, std: T) -> CVec<T> {
    CVec::from_fn(n, |_, _| complex_normal::<T, _>(rng) * re(std))
}

/// Detector statistics under H₀ (`y = n`) and H₁ (`y = X̃g + n`,
/// `g ~ CN(g_d, R_G)` drawn through `covariance_sqrt`).
pub fn simulate_statistics<T: Real>(
    x: &WaveformMatrix<T>,
    target: &RicianTarget<T>,
    sigma2: T,
    trials: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.n_tx() != target.n_tx {
        return Err(DfrcError::dims("waveform columns", target.n_tx, x.n_tx()));
    }
    let det = NpDetector::new(x, target, sigma2)?;
    let n = target.n_rx * x.code_length();
    let n_tr = target.n_tr();
    let std = sigma2.sqrt();
    let blocks = trials.div_ceil(BLOCK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let count = BLOCK.min(trials - b * BLOCK);
            let mut h0 = Vec::with_capacity(count);
            let mut h1 = Vec::with_capacity(count);
            for _ in 0..count {
                let noise = complex_noise(&mut rng, n, std);
                h0.push(det.statistic(&noise).as_f64());
                let w = complex_noise(&mut rng, n_tr, T::one());
                let g = &target.mean_response + &target.covariance_sqrt * w;
                let y = lifted_apply(x, &g, target.n_rx) + complex_noise(&mut rng, n, std);
                h1.push(det.statistic(&y).as_f64());
            }
            (h0, h1)
        })
        .collect();
    let mut h0 = Vec::with_capacity(trials);
    let mut h1 = Vec::with_capacity(trials);
    for (a, b) in parts {
        h0.extend(a);
        h1.extend(b);
    }
    Ok((h0, h1))
}

/// `P_d` of the randomized NP test with empirical false-alarm rate exactly
/// `pfa`: exceed the threshold, or tie with it with probability `q`. Ties
/// only matter for degenerate statistics such as `X = 0`.
fn pd_from_sorted(h0: &[f64], h1: &[f64], pfa: f64) -> f64 {
    let n0 = h0.len();
    let target = pfa * n0 as f64;
    let e = (target.floor() as usize).min(n0);
    if e >= n0 {
        return 1.0;
    }
    let gamma = h0[n0 - 1 - e];
    let above0 = n0 - h0.partition_point(|&v| v <= gamma);
    let at0 = h0.partition_point(|&v| v <= gamma) - h0.partition_point(|&v| v < gamma);
    let q = ((target - above0 as f64) / at0 as f64).clamp(0.0, 1.0);
    let above1 = h1.len() - h1.partition_point(|&v| v <= gamma);
    let at1 = h1.partition_point(|&v| v <= gamma) - h1.partition_point(|&v| v < gamma);
    (above1 as f64 + q * at1 as f64) / h1.len() as f64
}

/// ROC from statistics under both hypotheses; thresholds are empirical H₀
/// quantiles.
pub fn roc_from_statistics(mut h0: Vec<f64>, mut h1: Vec<f64>, pfa_grid: &[f64], seed: u64) -> Result<RocCurve> {
    if h0.is_empty() || h1.is_empty() {
        return Err(DfrcError::invalid("trials", "need at least one trial"));
    }
    let mut grid = pfa_grid.to_vec();
    if grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(DfrcError::invalid("pfa_grid", "entries must lie in (0, 1]"));
    }
    grid.sort_by(f64::total_cmp);
    h0.sort_by(f64::total_cmp);
    h1.sort_by(f64::total_cmp);
    let trials = h0.len();
    let pd = grid
        .iter()
        .map(|&p| {
            if p * (trials as f64) < 100.0 {
                log::warn!("pfa {p:e}: threshold set by fewer than 100 H0 exceedances ({trials} trials)");
            }
            pd_from_sorted(&h0, &h1, p)
        })
        .collect();
    Ok(RocCurve {
        pfa_grid: grid,
        pd,
        trials,
        seed,
    })
}

pub fn monte_carlo_roc<T: Real>(
    x: &WaveformMatrix<T>,
    target: &RicianTarget<T>,
    sigma2: T,
    pfa_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RocCurve> {
    if let Some(min) = pfa_grid.iter().cloned().reduce(f64::min) {
        if (trials as f64) < 10.0 / min {
            log::warn!("{trials} trials is below the recommended 10/min(pfa) = {:.0}", 10.0 / min);
        }
    }
    let (h0, h1) = simulate_statistics(x, target, sigma2, trials, seed)?;
    roc_from_statistics(h0, h1, pfa_grid, seed)
}

#[derive(Clone, Debug)]
pub struct ChannelAveragedRoc {
    /// Pointwise mean of `per_channel`.
    pub mean: RocCurve,
    pub per_channel: Vec<RocCurve>,
}

/// Seed of the `index`-th channel draw in [`roc_over_channels`].
pub fn channel_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 0x4348_0000 + index as u64)
}

/// Redesigns the waveform for each of `n_channels` channel draws and averages
/// `P_d` pointwise. Every channel reuses the Monte-Carlo seed.
pub fn roc_over_channels<T, F>(
    config: &ScenarioConfig,
    design: F,
    n_channels: usize,
    pfa_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ChannelAveragedRoc>
where
    T: Real,
    F: Fn(&Scenario<T>) -> Result<WaveformMatrix<T>>,
{
    if n_channels == 0 {
        return Err(DfrcError::invalid("n_channels", "must be at least 1"));
    }
    let mut per_channel = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let h = generate_channel(config.n_users, config.n_tx, channel_seed(seed, c));
        let scenario = Scenario::with_channel(config, h)?;
        let x = design(&scenario)?;
        per_channel.push(monte_carlo_roc(&x, &scenario.target, scenario.noise_power(), pfa_grid, trials, seed)?);
    }
    let k = per_channel[0].pd.len();
    let pd = (0..k)
        .map(|i| per_channel.iter().map(|r| r.pd[i]).sum::<f64>() / n_channels as f64)
        .collect();
    Ok(ChannelAveragedRoc {
        mean: RocCurve {
            pfa_grid: per_channel[0].pfa_grid.clone(),
            pd,
            trials,
            seed,
        },
        per_channel,
    })
}

/// Noise power giving `SNR = E|s|²/σ²` for the desired symbols.
pub fn noise_power_for_snr<T: Real>(symbols: &CMat<T>, snr_db: f64) -> Result<T> {
    let mean = symbols.iter().fold(0.0, |acc, s| acc + s.norm_sqr().as_f64()) / symbols.len().max(1) as f64;
    if mean <= 0.0 {
        return Err(DfrcError::invalid("symbols", "zero symbol energy leaves the SNR undefined"));
    }
    Ok(T::lit(mean / 10f64.powf(snr_db / 10.0)))
}

/// Noiseless received symbols `H Xᵀ` (`M × L`).
pub fn constellation_points<T: Real>(x: &WaveformMatrix<T>, channel: &CMat<T>) -> Result<CMat<T>> {
    if channel.ncols() != x.n_tx() {
        return Err(DfrcError::dims("channel columns", x.n_tx(), channel.ncols()));
    }
    Ok(channel * x.samples.transpose())
}

/// Gray QPSK bits by quadrant: `(Re < 0, Im < 0)`.
fn quadrant_bits<T: Real>(v: crate::scalar::Cx<T>) -> (bool, bool) {
    (v.re < T::zero(), v.im < T::zero())
}

/// Bit error rate of Gray QPSK over `y = HXᵀ + Z` against the bits carried by
/// `symbols`. One trial is one `M × L` block; the noise power per SNR point
/// follows [`noise_power_for_snr`] and is equal for every user.
pub fn ber<T: Real>(
    x: &WaveformMatrix<T>,
    channel: &CMat<T>,
    symbols: &CMat<T>,
    snr_grid_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<BerCurve> {
    let points = constellation_points(x, channel)?;
    if points.shape() != symbols.shape() {
        return Err(DfrcError::dims(
            "symbols",
            format!("{:?}", points.shape()),
            format!("{:?}", symbols.shape()),
        ));
    }
    let bits: Vec<(bool, bool)> = symbols.iter().map(|s| quadrant_bits(*s)).collect();
    let received: Vec<_> = points.iter().cloned().collect();
    let bits_per_trial = 2 * bits.len() as u64;
    let blocks = trials.div_ceil(BLOCK);
    let mut out = Vec::with_capacity(snr_grid_db.len());
    for (k, &snr) in snr_grid_db.iter().enumerate() {
        let std = noise_power_for_snr(symbols, snr)?.sqrt();
        let point_seed = derive_seed(seed, k as u64);
        let errors: u64 = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(point_seed, b as u64));
                let count = BLOCK.min(trials - b * BLOCK);
                let mut errs = 0u64;
                for _ in 0..count {
                    for (r, &(b0, b1)) in received.iter().zip(&bits) {
                        let y = *r + complex_normal::<T, _>(&mut rng) * re(std);
                        let (d0, d1) = quadrant_bits(y);
                        errs += u64::from(d0 != b0) + u64::from(d1 != b1);
                    }
                }
                errs
            })
            .sum();
        out.push(errors as f64 / (bits_per_trial * trials as u64) as f64);
    }
    Ok(BerCurve {
        snr_grid_db: snr_grid_db.to_vec(),
        ber: out,
        trials,
        seed,
    })
}

/// `Σ_m (1/L) Σ_l log₂(1 + |s_{m,l}|²/(|[HXᵀ − S]_{m,l}|² + σ²_{z,m}))`,
/// residual MUI treated as interference.
pub fn sum_rate<T: Real>(x: &WaveformMatrix<T>, channel: &CMat<T>, symbols: &CMat<T>, noise_power: &DVector<T>) -> Result<T> {
    let points = constellation_points(x, channel)?;
    let (m_users, l_len) = symbols.shape();
    if points.shape() != symbols.shape() {
        return Err(DfrcError::dims("symbols", format!("{:?}", points.shape()), format!("{:?}", symbols.shape())));
    }
    if noise_power.len() != m_users {
        return Err(DfrcError::dims("noise_power", m_users, noise_power.len()));
    }
    let mut rate = T::zero();
    for m in 0..m_users {
        let mut acc = T::zero();
        for l in 0..l_len {
            let s = symbols[(m, l)];
            let mui = (points[(m, l)] - s).norm_sqr();
            acc += (T::one() + s.norm_sqr() / (mui + noise_power[m])).log2();
        }
        rate += acc / T::from_usize_lossy(l_len);
    }
    Ok(rate)
}

/// [`sum_rate`] with every user at the noise power of [`noise_power_for_snr`].
pub fn sum_rate_at_snr<T: Real>(x: &WaveformMatrix<T>, channel: &CMat<T>, symbols: &CMat<T>, snr_db: f64) -> Result<T> {
    let noise = noise_power_for_snr(symbols, snr_db)?;
    sum_rate(x, channel, symbols, &DVector::from_element(symbols.nrows(), noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use crate::model::{build_rician_target, generate_qpsk, quasi_orthogonal_waveforms};
    use crate::scalar::Cx;

    fn small_target() -> RicianTarget<f64> {
        let random: Vec<(f64, f64)> = (0..6).map(|k| (0.05, -60.0 + 20.0 * k as f64)).collect();
        build_rician_target(&[(Cx::new(1.2, 0.0), 15.0)], &random, 3, 2).unwrap()
    }

    #[test]
    fn statistic_vanishes_at_zero_observation_and_zero_waveform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = small_target();
        let x = quasi_orthogonal_waveforms(4, 3, 1.0, 2);
        let y0 = CVec::zeros(8);
        assert_eq!(detector_statistic(&y0, &x, &target, 1.0).unwrap(), 0.0);
        let zero = WaveformMatrix::zeros(4, 3);
        for _ in 0..5 {
            let y = rand_cvec(&mut rng, 8);
            assert_eq!(detector_statistic(&y, &zero, &target, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn statistic_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = small_target();
        for sigma2 in [1.0, 0.3, 2.5] {
            let x = WaveformMatrix::new(rand_cmat(&mut rng, 4, 3));
            let y = rand_cvec(&mut rng, 8);
            // explicit inverse of I ⊗ X R_G (I ⊗ X)ᴴ + σ²I
            let xt = crate::linalg::kron(&CMat::identity(2, 2), &x.samples);
            let r1 = &xt * &target.covariance * xt.adjoint() + CMat::identity(8, 8) * Cx::new(sigma2, 0.0);
            let inv = r1.try_inverse().unwrap();
            let mu = &xt * &target.mean_response;
            let quad = (y.adjoint() * (CMat::identity(8, 8) * Cx::new(1.0 / sigma2, 0.0) - &inv) * &y)[(0, 0)].re;
            let lin = 2.0 * (y.adjoint() * &inv * &mu)[(0, 0)].re;
            let got = detector_statistic(&y, &x, &target, sigma2).unwrap();
            assert!((got - (quad + lin)).abs() <= 1e-9 * (quad + lin).abs().max(1.0), "{got} vs {}", quad + lin);
        }
    }

    #[test]
    fn roc_is_monotone_and_reaches_one() {
        let target = small_target();
        let x = quasi_orthogonal_waveforms(4, 3, 1.0, 3);
        let grid = log_pfa_grid(-3, 4);
        let roc = monte_carlo_roc(&x, &target, 1.0, &grid, 20_000, 7).unwrap();
        for w in roc.pd.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(*roc.pd.last().unwrap(), 1.0);
        assert_eq!(roc.pd_at(1.0), 1.0);
        assert!(roc.pd_at(1e-2) > 1e-2);
    }

    #[test]
    fn zero_waveform_gives_chance_detection() {
        let target = small_target();
        let zero = WaveformMatrix::zeros(4, 3);
        let grid = [1e-3, 1e-2, 0.1, 0.5];
        let roc = monte_carlo_roc(&zero, &target, 1.0, &grid, 10_000, 1).unwrap();
        for (p, d) in grid.iter().zip(&roc.pd) {
            assert!((d - p).abs() <= 3.0 * binomial_sigma(*p, 10_000) + 1e-12);
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let target = small_target();
        let x = quasi_orthogonal_waveforms(4, 3, 1.0, 3);
        let grid = [1e-2, 0.1];
        let a = monte_carlo_roc(&x, &target, 1.0, &grid, 5000, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| monte_carlo_roc(&x, &target, 1.0, &grid, 5000, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn h1_sampling_matches_eigenbasis_model() {
        // Under H1 the whitened observation Uᴴy is CN(Uᴴμ, Λ) with R_1 = UΛUᴴ;
        // simulate that independently and compare P_d within binomial error.
        let target = small_target();
        let x = quasi_orthogonal_waveforms(4, 3, 0.5, 4);
        let trials = 40_000;
        let grid = [1e-2, 0.1];
        let roc = monte_carlo_roc(&x, &target, 1.0, &grid, trials, 11).unwrap();

        let ctx = ObjectiveContext::new(target.clone(), 1.0).unwrap();
        let r1 = covariance_r1(&x, &ctx).unwrap();
        let eig = crate::linalg::HermitianEigen::new(&r1);
        let mu = lifted_apply(&x, &target.mean_response, 2);
        let mu_t = eig.vectors.adjoint() * &mu;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let stat = |u: &CVec<f64>| -> f64 {
            let mut s = 0.0;
            for i in 0..u.len() {
                let lam = eig.values[i];
                s += (1.0 - 1.0 / lam) * u[i].norm_sqr() + 2.0 * (u[i].conj() * mu_t[i]).re / lam;
            }
            s
        };
        let mut h0 = Vec::new();
        let mut h1 = Vec::new();
        for _ in 0..trials {
            let n = complex_noise::<f64, _>(&mut rng, 8, 1.0);
            h0.push(stat(&n));
            let w = CVec::from_fn(8, |i, _| mu_t[i] + complex_normal::<f64, _>(&mut rng) * eig.values[i].sqrt());
            h1.push(stat(&w));
        }
        let oracle = roc_from_statistics(h0, h1, &grid, 0).unwrap();
        for (a, b) in roc.pd.iter().zip(&oracle.pd) {
            let s = binomial_sigma(*a, trials).hypot(binomial_sigma(*b, trials));
            assert!((a - b).abs() <= 4.0 * s + 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn randomized_ties_hit_pfa_exactly() {
        let h0 = vec![0.0; 1000];
        let h1 = vec![0.0; 500];
        for p in [1e-3, 0.25, 0.5, 1.0] {
            assert!((pd_from_sorted(&h0, &h1, p) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn ber_limits() {
        let h = generate_channel::<f64>(2, 3, 1);
        let s = generate_qpsk::<f64>(2, 5, 0.1, 2);
        // X with HXᵀ = S exactly
        let pinv = h.clone().pseudo_inverse(1e-12).unwrap();
        let x = WaveformMatrix::new((&pinv * &s).transpose());
        let clean = ber(&x, &h, &s, &[80.0], 200, 3).unwrap();
        assert_eq!(clean.ber[0], 0.0);
        let zero = WaveformMatrix::zeros(5, 3);
        let trials = 4000;
        let noisy = ber(&zero, &h, &s, &[0.0, 10.0], trials, 3).unwrap();
        for b in &noisy.ber {
            assert!((b - 0.5).abs() <= 3.0 * binomial_sigma(0.5, trials * 20));
        }
        let again = ber(&zero, &h, &s, &[0.0, 10.0], trials, 3).unwrap();
        assert_eq!(noisy, again);
    }

    #[test]
    fn sum_rate_limits() {
        let h = generate_channel::<f64>(3, 4, 1);
        let s = generate_qpsk::<f64>(3, 6, 0.2, 2);
        let pinv = h.clone().pseudo_inverse(1e-12).unwrap();
        let x = WaveformMatrix::new((&pinv * &s).transpose());
        let gamma = 7.0;
        let noise = DVector::from_element(3, 0.2 / gamma);
        let r = sum_rate(&x, &h, &s, &noise).unwrap();
        assert!((r - 3.0 * (1.0 + gamma).log2()).abs() < 1e-9);
        let loud = DVector::from_element(3, 1e12);
        assert!(sum_rate(&x, &h, &s, &loud).unwrap() < 1e-10);
    }

    #[test]
    fn constellation_of_zero_is_origin() {
        let h = generate_channel::<f64>(2, 3, 1);
        let pts = constellation_points(&WaveformMatrix::zeros(5, 3), &h).unwrap();
        assert_eq!(pts.shape(), (2, 5));
        assert!(pts.iter().all(|p| p.norm_sqr() == 0.0));
    }

    #[test]
    fn channel_average_of_one_draw_is_that_draw() {
        let cfg = ScenarioConfig::small();
        let design = |sc: &Scenario<f64>| Ok(sc.initial.clone());
        let grid = [1e-2, 0.1];
        let avg = roc_over_channels(&cfg, design, 1, &grid, 3000, 5).unwrap();
        let h = generate_channel(cfg.n_users, cfg.n_tx, channel_seed(5, 0));
        let sc = Scenario::<f64>::with_channel(&cfg, h).unwrap();
        let direct = monte_carlo_roc(&sc.initial, &sc.target, 1.0, &grid, 3000, 5).unwrap();
        assert_eq!(avg.mean, direct);

        let avg3 = roc_over_channels(&cfg, design, 3, &grid, 3000, 5).unwrap();
        for i in 0..grid.len() {
            let lo = avg3.per_channel.iter().map(|r| r.pd[i]).fold(f64::INFINITY, f64::min);
            let hi = avg3.per_channel.iter().map(|r| r.pd[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(avg3.mean.pd[i] >= lo - 1e-12 && avg3.mean.pd[i] <= hi + 1e-12);
        }
    }
}
