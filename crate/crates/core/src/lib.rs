//! Waveform design for dual-function radar-communication transmitters.
//!
//! The radar side maximizes the relative entropy between the echo
//! distributions with and without a Rician target; the communication side
//! bounds multi-user interference. Designs are computed by majorization
//! minimization with either an SDR or an ADMM inner solver, or by an outer
//! ADMM splitting, and are scored by Monte-Carlo detection, BER and sum-rate.

pub mod error;
pub mod eval;
pub mod linalg;
pub mod minorize;
pub mod model;
pub mod objective;
pub mod outer;
pub mod papr;
pub mod qcqp;
pub mod scalar;

pub use error::{DfrcError, Result};
pub use eval::{
    ber, constellation_points, detector_statistic, monte_carlo_roc, roc_over_channels, sum_rate, BerCurve, RocCurve,
};
pub use model::{
    build_rician_target, generate_channel, generate_qpsk, quasi_orthogonal_waveforms,
    steering_vector, CommScenario, RicianTarget, Scenario, ScenarioConfig, TargetConfig,
    WaveformMatrix,
};
pub use objective::{mui_energy, relative_entropy, ConstraintMode, ObjectiveContext};
pub use outer::{admm_design, mm_design, radar_only_design, InnerSolver, MmOptions, OuterAdmmOptions, SolverReport};
pub use papr::{papr_project, PaprSet};
pub use scalar::{CMat, CVec, Cx, Real};

/// Double-precision aliases.
pub type Waveform = WaveformMatrix<f64>;
pub type Target = RicianTarget<f64>;
pub type Comm = CommScenario<f64>;
pub type Scenario64 = Scenario<f64>;
