//! Scenario objects: array steering, Rician target statistics, the
//! communication channel and symbols, and baseline waveforms.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DfrcError, Result};
use crate::linalg::{hermitian_defect, kron, psd_sqrt};
use crate::scalar::{cx, re, unit_phasor, CMat, CVec, Cx, Real};

/// Scenario parameters. Field names double as configuration-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub code_length: usize,
    /// Total transmit energy `P_t`.
    pub transmit_energy: f64,
    /// Radar receiver noise power `σ²`.
    pub noise_power: f64,
    pub n_users: usize,
    /// MUI energy budget `ε`.
    pub mui_budget: f64,
    /// `e_c`: energy of each user's desired QPSK sequence. Every symbol
    /// carries `e_c / L`.
    pub symbol_energy: f64,
    /// PAPR bound `ρ`, `1 ≤ ρ ≤ L`.
    pub papr_limit: f64,
    pub rng_seed: u64,
    pub target: TargetConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoaLayout {
    /// Evenly spaced from `random_angle_min` to `random_angle_max` inclusive.
    Grid,
    /// Uniform draws on the same interval, seeded from the scenario seed.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub deterministic_amplitude: f64,
    pub deterministic_angle: f64,
    pub random_count: usize,
    pub random_variance: f64,
    pub random_angle_min: f64,
    pub random_angle_max: f64,
    pub doa_layout: DoaLayout,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            deterministic_amplitude: 1.5f64.sqrt(),
            deterministic_angle: 15.0,
            random_count: 30,
            random_variance: 0.05,
            random_angle_min: -60.0,
            random_angle_max: 56.0,
            doa_layout: DoaLayout::Grid,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tx: 12,
            n_rx: 12,
            code_length: 10,
            transmit_energy: 1.0,
            noise_power: 1.0,
            n_users: 4,
            mui_budget: 1e-6,
            symbol_energy: 0.1,
            papr_limit: 2.0,
            rng_seed: 1,
            target: TargetConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reduced array for quick runs: `N_T = N_R = 4`, `L = 8`, two users.
    pub fn small() -> Self {
        Self {
            n_tx: 4,
            n_rx: 4,
            code_length: 8,
            n_users: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("code_length", self.code_length),
            ("n_users", self.n_users),
        ] {
            if v == 0 {
                return Err(DfrcError::invalid(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("transmit_energy", self.transmit_energy),
            ("mui_budget", self.mui_budget),
            ("symbol_energy", self.symbol_energy),
        ] {
            if !(v >= 0.0) {
                return Err(DfrcError::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.noise_power > 0.0) || !self.noise_power.is_finite() {
            return Err(DfrcError::invalid("noise_power", "must be positive and finite"));
        }
        let l = self.code_length as f64;
        if !(self.papr_limit >= 1.0 && self.papr_limit <= l) {
            return Err(DfrcError::invalid(
                "papr_limit",
                format!("must lie in [1, {l}], got {}", self.papr_limit),
            ));
        }
        let t = &self.target;
        if !t.deterministic_amplitude.is_finite() {
            return Err(DfrcError::invalid("target.deterministic_amplitude", "not finite"));
        }
        if !(t.random_variance >= 0.0) {
            return Err(DfrcError::invalid("target.random_variance", "must be non-negative"));
        }
        for (name, a) in [
            ("target.deterministic_angle", t.deterministic_angle),
            ("target.random_angle_min", t.random_angle_min),
            ("target.random_angle_max", t.random_angle_max),
        ] {
            if !(-90.0..=90.0).contains(&a) {
                return Err(DfrcError::invalid(name, "angle must lie in [-90, 90] degrees"));
            }
        }
        if t.random_angle_min > t.random_angle_max {
            return Err(DfrcError::invalid("target.random_angle_min", "exceeds random_angle_max"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DfrcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DfrcError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies the keys present in `text` on top of `self`; absent keys keep
    /// their current values rather than the defaults.
    pub fn overlay_toml_str(&self, text: &str) -> Result<Self> {
        fn merge(base: &mut toml::Table, over: toml::Table) {
            for (k, v) in over {
                match (base.get_mut(&k), v) {
                    (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
                    (_, v) => {
                        base.insert(k, v);
                    }
                }
            }
        }
        let over: toml::Table = toml::from_str(text).map_err(|e| DfrcError::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| DfrcError::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| DfrcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Per-symbol energy `e_c / L` of the desired communication signals.
    pub fn per_symbol_energy(&self) -> f64 {
        self.symbol_energy / self.code_length as f64
    }

    /// Seed for one of the independent random streams of a scenario.
    pub fn stream_seed(&self, stream: u64) -> u64 {
        derive_seed(self.rng_seed, stream)
    }
}

pub(crate) const STREAM_CHANNEL: u64 = 1;
pub(crate) const STREAM_SYMBOLS: u64 = 2;
pub(crate) const STREAM_INIT: u64 = 3;
pub(crate) const STREAM_DOA: u64 = 4;

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Half-wavelength ULA response: element `k` is `exp(j·π·k·sin θ)`.
pub fn steering_vector<T: Real>(theta_deg: T, n_elements: usize) -> CVec<T> {
    let s = (theta_deg * T::pi() / T::lit(180.0)).sin();
    CVec::from_fn(n_elements, |k, _| unit_phasor(T::pi() * T::from_usize_lossy(k) * s))
}

#[derive(Clone, Debug)]
pub struct RicianTarget<T: Real> {
    /// `g_d`, length `N_T·N_R`.
    pub mean_response: CVec<T>,
    /// `R_G`.
    pub covariance: CMat<T>,
    /// Hermitian PSD square root of `R_G`.
    pub covariance_sqrt: CMat<T>,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl<T: Real> RicianTarget<T> {
    pub fn n_tr(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Rebuilds a target from explicit statistics (used for ad-hoc scenarios).
    pub fn from_statistics(
        mean_response: CVec<T>,
        covariance: CMat<T>,
        n_tx: usize,
        n_rx: usize,
    ) -> Result<Self> {
        let n = n_tx * n_rx;
        if mean_response.len() != n || covariance.shape() != (n, n) {
            return Err(DfrcError::dims(
                "RicianTarget",
                format!("{n} / {n}x{n}"),
                format!("{} / {:?}", mean_response.len(), covariance.shape()),
            ));
        }
        let scale = covariance.norm().max(T::one());
        if hermitian_defect(&covariance) > T::lit(1e-12) * scale {
            return Err(DfrcError::invalid("covariance", "not Hermitian"));
        }
        let covariance_sqrt = psd_sqrt(&covariance);
        Ok(Self {
            mean_response,
            covariance,
            covariance_sqrt,
            n_tx,
            n_rx,
        })
    }
}

/// Builds `g_d = Σ α b(θ) ⊗ a(θ)` and `R_G = Σ σ² (b bᴴ) ⊗ (a aᴴ)`.
pub fn build_rician_target<T: Real>(
    deterministic: &[(Cx<T>, T)],
    random: &[(T, T)],
    n_tx: usize,
    n_rx: usize,
) -> Result<RicianTarget<T>> {
    let n = n_tx * n_rx;
    let ninety = T::lit(90.0);
    let check_angle = |a: T| -> Result<()> {
        if a.is_finite() && a >= -ninety && a <= ninety {
            Ok(())
        } else {
            Err(DfrcError::invalid("angle", format!("{a} outside [-90, 90]")))
        }
    };
    let mut mean = CVec::zeros(n);
    for &(alpha, theta) in deterministic {
        if !(alpha.re.is_finite() && alpha.im.is_finite()) {
            return Err(DfrcError::invalid("amplitude", "NaN or infinite"));
        }
        check_angle(theta)?;
        let g = joint_steering(theta, n_tx, n_rx);
        mean += g * alpha;
    }
    let mut cov = CMat::zeros(n, n);
    for &(var, theta) in random {
        if !(var >= T::zero()) || !var.is_finite() {
            return Err(DfrcError::invalid("variance", format!("{var} must be >= 0")));
        }
        check_angle(theta)?;
        let g = joint_steering(theta, n_tx, n_rx);
        // (b bᴴ) ⊗ (a aᴴ) = (b ⊗ a)(b ⊗ a)ᴴ
        cov += (&g * g.adjoint()) * re(var);
    }
    let covariance_sqrt = psd_sqrt(&cov);
    Ok(RicianTarget {
        mean_response: mean,
        covariance: cov,
        covariance_sqrt,
        n_tx,
        n_rx,
    })
}

/// `b(θ) ⊗ a(θ)` with `a` the transmit and `b` the receive response.
fn joint_steering<T: Real>(theta: T, n_tx: usize, n_rx: usize) -> CVec<T> {
    let a = steering_vector(theta, n_tx);
    let b = steering_vector(theta, n_rx);
    let k = kron(&CMat::from_column_slice(n_rx, 1, b.as_slice()), &CMat::from_column_slice(n_tx, 1, a.as_slice()));
    CVec::from_column_slice(k.as_slice())
}

/// Evenly spaced angles on `[min, max]`.
pub fn doa_grid(count: usize, min_deg: f64, max_deg: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min_deg],
        _ => {
            let step = (max_deg - min_deg) / (count - 1) as f64;
            (0..count).map(|k| min_deg + step * k as f64).collect()
        }
    }
}

/// i.i.d. uniform QPSK symbols `{±1 ± j}·sqrt(E/2)`, drawn row by row.
pub fn generate_qpsk<T: Real>(n_users: usize, code_length: usize, symbol_energy: T, seed: u64) -> CMat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = (symbol_energy / T::lit(2.0)).sqrt();
    let mut s = CMat::zeros(n_users, code_length);
    for m in 0..n_users {
        for l in 0..code_length {
            let bits: u8 = rng.random_range(0..4);
            s[(m, l)] = qpsk_symbol(bits & 1 == 1, bits & 2 == 2, amp);
        }
    }
    s
}

/// Gray-mapped QPSK point for a bit pair.
pub(crate) fn qpsk_symbol<T: Real>(b0: bool, b1: bool, amp: T) -> Cx<T> {
    let i = if b0 { -amp } else { amp };
    let q = if b1 { -amp } else { amp };
    cx(i, q)
}

/// i.i.d. `CN(0, 1)` entries, drawn row by row.
pub fn generate_channel<T: Real>(n_users: usize, n_tx: usize, seed: u64) -> CMat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = CMat::zeros(n_users, n_tx);
    for m in 0..n_users {
        for n in 0..n_tx {
            h[(m, n)] = complex_normal(&mut rng);
        }
    }
    h
}

pub(crate) fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Cx<T> {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    cx(T::lit(a * s), T::lit(b * s))
}

/// Transmit code matrix `X` (`L × N_T`), one column per antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformMatrix<T: Real> {
    pub samples: CMat<T>,
}

impl<T: Real> WaveformMatrix<T> {
    pub fn new(samples: CMat<T>) -> Self {
        Self { samples }
    }

    pub fn zeros(code_length: usize, n_tx: usize) -> Self {
        Self::new(CMat::zeros(code_length, n_tx))
    }

    pub fn code_length(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.samples.ncols()
    }

    /// `tr(X Xᴴ)`.
    pub fn energy(&self) -> T {
        crate::linalg::frob_sq(&self.samples)
    }

    pub fn column_energy(&self, n: usize) -> T {
        self.samples.column(n).iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
    }

    /// `vec(X)`.
    pub fn to_vec(&self) -> CVec<T> {
        CVec::from_column_slice(self.samples.as_slice())
    }

    pub fn from_vec(x: &CVec<T>, code_length: usize, n_tx: usize) -> Self {
        Self::new(CMat::from_column_slice(code_length, n_tx, x.as_slice()))
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::new(&self.samples * re(factor))
    }
}

/// Random unit-modulus phases scaled to total energy `transmit_energy`.
pub fn quasi_orthogonal_waveforms<T: Real>(
    code_length: usize,
    n_tx: usize,
    transmit_energy: T,
    seed: u64,
) -> WaveformMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = (transmit_energy / T::from_usize_lossy(code_length * n_tx)).sqrt();
    let two_pi = T::two_pi();
    let mut x = CMat::zeros(code_length, n_tx);
    for n in 0..n_tx {
        for l in 0..code_length {
            let u: f64 = rng.random();
            x[(l, n)] = unit_phasor(two_pi * T::lit(u)) * amp;
        }
    }
    WaveformMatrix::new(x)
}

/// Channel, desired symbols and MUI budget of the communication side.
#[derive(Clone, Debug)]
pub struct CommScenario<T: Real> {
    /// `H`, `M × N_T`.
    pub channel: CMat<T>,
    /// `S`, `M × L`.
    pub symbols: CMat<T>,
    pub mui_budget: T,
    pub per_user_noise: DVector<T>,
}

impl<T: Real> CommScenario<T> {
    pub fn n_users(&self) -> usize {
        self.channel.nrows()
    }

    /// `s = vec(Sᵀ)`, user-major blocks of length `L`.
    pub fn symbol_vec(&self) -> CVec<T> {
        let (m_users, l_len) = self.symbols.shape();
        CVec::from_fn(m_users * l_len, |i, _| self.symbols[(i / l_len, i % l_len)])
    }

    pub fn channel_op(&self) -> crate::linalg::KronChannel<T> {
        crate::linalg::KronChannel::new(&self.channel, self.symbols.ncols())
    }

    pub fn with_budget(&self, mui_budget: T) -> Self {
        Self {
            mui_budget,
            ..self.clone()
        }
    }
}

/// Everything a design run needs, built deterministically from a config.
#[derive(Clone, Debug)]
pub struct Scenario<T: Real> {
    pub config: ScenarioConfig,
    pub target: RicianTarget<T>,
    pub comm: CommScenario<T>,
    pub initial: WaveformMatrix<T>,
}

impl<T: Real> Scenario<T> {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let channel = generate_channel(config.n_users, config.n_tx, config.stream_seed(STREAM_CHANNEL));
        Self::with_channel(config, channel)
    }

    /// Same as [`Scenario::from_config`] but with an externally supplied channel.
    pub fn with_channel(config: &ScenarioConfig, channel: CMat<T>) -> Result<Self> {
        config.validate()?;
        if channel.shape() != (config.n_users, config.n_tx) {
            return Err(DfrcError::dims(
                "Scenario channel",
                format!("{}x{}", config.n_users, config.n_tx),
                format!("{:?}", channel.shape()),
            ));
        }
        let t = &config.target;
        let deterministic = [(re(T::lit(t.deterministic_amplitude)), T::lit(t.deterministic_angle))];
        let angles = match t.doa_layout {
            DoaLayout::Grid => doa_grid(t.random_count, t.random_angle_min, t.random_angle_max),
            DoaLayout::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.stream_seed(STREAM_DOA));
                (0..t.random_count)
                    .map(|_| rng.random_range(t.random_angle_min..=t.random_angle_max))
                    .collect()
            }
        };
        let random: Vec<(T, T)> = angles
            .into_iter()
            .map(|a| (T::lit(t.random_variance), T::lit(a)))
            .collect();
        let target = build_rician_target(&deterministic, &random, config.n_tx, config.n_rx)?;
        let symbols = generate_qpsk(
            config.n_users,
            config.code_length,
            T::lit(config.per_symbol_energy()),
            config.stream_seed(STREAM_SYMBOLS),
        );
        let comm = CommScenario {
            channel,
            symbols,
            mui_budget: T::lit(config.mui_budget),
            per_user_noise: DVector::from_element(config.n_users, T::one()),
        };
        let initial = quasi_orthogonal_waveforms(
            config.code_length,
            config.n_tx,
            T::lit(config.transmit_energy),
            config.stream_seed(STREAM_INIT),
        );
        Ok(Self {
            config: config.clone(),
            target,
            comm,
            initial,
        })
    }

    pub fn transmit_energy(&self) -> T {
        T::lit(self.config.transmit_energy)
    }

    pub fn noise_power(&self) -> T {
        T::lit(self.config.noise_power)
    }

    pub fn papr_limit(&self) -> T {
        T::lit(self.config.papr_limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{testutil::*, HermitianEigen};
    use proptest::prelude::*;

    #[test]
    fn steering_broadside_is_all_ones() {
        let a = steering_vector(0.0f64, 4);
        for z in a.iter() {
            assert!((z - Cx::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_endfire_two_elements() {
        let a = steering_vector(90.0f64, 2);
        assert!((a[0] - Cx::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Cx::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_norm_is_sqrt_n() {
        for theta in [-73.0, -10.0, 0.3, 44.0, 89.0] {
            let a = steering_vector(theta, 8);
            assert!((a.norm() - 8f64.sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn deterministic_scatterer_energy() {
        let t = build_rician_target::<f64>(&[(Cx::new(1.5f64.sqrt(), 0.0), 15.0)], &[], 12, 12).unwrap();
        assert!((t.mean_response.norm_squared() - 216.0).abs() < 1e-10);
        assert_eq!(t.covariance.norm(), 0.0);
    }

    #[test]
    fn random_scatterers_trace() {
        let angles = doa_grid(30, -60.0, 56.0);
        assert_eq!(angles.len(), 30);
        assert!((angles[1] - angles[0] - 4.0).abs() < 1e-12);
        assert!((angles[29] - 56.0).abs() < 1e-12);
        let random: Vec<_> = angles.iter().map(|&a| (0.05, a)).collect();
        let t = build_rician_target::<f64>(&[], &random, 12, 12).unwrap();
        assert!((t.covariance.trace().re - 30.0 * 0.05 * 144.0).abs() < 1e-9);
        let s = &t.covariance_sqrt;
        assert!((s * s - &t.covariance).norm() / t.covariance.norm() < 1e-9);
    }

    #[test]
    fn mean_response_matches_hand_expanded_kronecker() {
        let alpha = Cx::new(0.7, -0.2);
        let theta = 23.0f64;
        let t = build_rician_target(&[(alpha, theta)], &[], 2, 2).unwrap();
        let p = Cx::new(0.0, std::f64::consts::PI * theta.to_radians().sin()).exp();
        // index r*N_T + n holds α b_r a_n
        let expected = [alpha, alpha * p, alpha * p, alpha * p * p];
        for (got, want) in t.mean_response.iter().zip(expected) {
            assert!((got - want).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_rician_target::<f64>(&[(Cx::new(f64::NAN, 0.0), 0.0)], &[], 2, 2).is_err());
        assert!(build_rician_target::<f64>(&[], &[(-0.1, 0.0)], 2, 2).is_err());
    }

    #[test]
    fn qpsk_energy_and_determinism() {
        let s = generate_qpsk(4, 10, 0.1f64, 9);
        for z in s.iter() {
            assert!((z.norm_sqr() - 0.1).abs() < 1e-12);
        }
        assert_eq!(s, generate_qpsk(4, 10, 0.1f64, 9));
        assert_eq!(generate_qpsk(2, 3, 0.0f64, 1).norm(), 0.0);
    }

    #[test]
    fn qpsk_rows_are_nested_across_user_counts() {
        let a = generate_qpsk(2, 6, 1.0f64, 5);
        let b = generate_qpsk(4, 6, 1.0f64, 5);
        assert_eq!(a, b.rows(0, 2).into_owned());
    }

    #[test]
    fn channel_statistics() {
        let h = generate_channel::<f64>(100, 1000, 17);
        let n = h.len() as f64;
        let mean = h.iter().sum::<Cx<f64>>() / n;
        let var = h.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!(mean.norm() < 0.02, "mean {mean}");
        assert_eq!(h, generate_channel::<f64>(100, 1000, 17));
    }

    #[test]
    fn quasi_orthogonal_properties() {
        let x = quasi_orthogonal_waveforms(10, 12, 1.0f64, 3);
        assert!((x.energy() - 1.0).abs() < 1e-12);
        for n in 0..12 {
            let col = x.samples.column(n);
            let mean = col.iter().map(|z| z.norm_sqr()).sum::<f64>() / 10.0;
            let peak = col.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
            assert!((peak / mean - 1.0).abs() < 1e-12);
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for seed in 0..100 {
            let x = quasi_orthogonal_waveforms(10, 12, 1.0f64, seed);
            for i in 0..12 {
                for j in (i + 1)..12 {
                    let ci = x.samples.column(i);
                    let cj = x.samples.column(j);
                    acc += ci.dotc(&cj).norm() / (ci.norm() * cj.norm());
                    count += 1.0;
                }
            }
        }
        assert!(acc / count < 0.5);
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        let err = ScenarioConfig::from_toml_str("n_tx = 4\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err = ScenarioConfig::from_toml_str("[target]\nwhatever = 1\n").unwrap_err();
        assert!(err.to_string().contains("whatever"), "{err}");
        assert!(ScenarioConfig::from_toml_str("papr_limit = 0.5\n").is_err());
        let partial = ScenarioConfig::from_toml_str("n_users = 2\n[target]\nrandom_count = 3\n").unwrap();
        assert_eq!(partial.n_users, 2);
        assert_eq!(partial.target.random_count, 3);
    }

    #[test]
    fn overlay_keeps_base_values() {
        let base = ScenarioConfig::small();
        let cfg = base.overlay_toml_str("mui_budget = 1e-4\n[target]\nrandom_count = 5\n").unwrap();
        assert_eq!(cfg.n_tx, 4);
        assert_eq!(cfg.mui_budget, 1e-4);
        assert_eq!(cfg.target.random_count, 5);
        assert_eq!(cfg.target.random_variance, base.target.random_variance);
        let err = base.overlay_toml_str("[target]\nnope = 1\n").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn scenario_is_pure_function_of_config() {
        let cfg = ScenarioConfig::small();
        let a = Scenario::<f64>::from_config(&cfg).unwrap();
        let b = Scenario::<f64>::from_config(&cfg).unwrap();
        assert_eq!(a.comm.channel, b.comm.channel);
        assert_eq!(a.comm.symbols, b.comm.symbols);
        assert_eq!(a.initial, b.initial);
        let per_symbol = cfg.per_symbol_energy();
        for z in a.comm.symbols.iter() {
            assert!((z.norm_sqr() - per_symbol).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn covariance_is_hermitian_psd(
            scatterers in proptest::collection::vec((0.0f64..2.0, -90.0f64..90.0), 0..8),
            n_tx in 1usize..4,
            n_rx in 1usize..4,
        ) {
            let t = build_rician_target::<f64>(&[], &scatterers, n_tx, n_rx).unwrap();
            prop_assert!(hermitian_defect(&t.covariance) <= 1e-12);
            if t.covariance.norm() > 0.0 {
                let eig = HermitianEigen::new(&t.covariance);
                prop_assert!(eig.min() >= -1e-10 * eig.max());
            }
        }
    }

    #[test]
    fn f32_scenario_builds() {
        let s = Scenario::<f32>::from_config(&ScenarioConfig::small()).unwrap();
        assert!((s.initial.energy() - 1.0).abs() < 1e-5);
        let _ = rand_cvec(&mut ChaCha8Rng::seed_from_u64(0), 1);
    }
}
