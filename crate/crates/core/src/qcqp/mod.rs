//! Per-iteration QCQP: maximize the surrogate subject to the energy and MUI
//! constraints, either by ADMM or by semidefinite relaxation.

mod admm;
mod ball;
mod feasible;
mod rank_one;
mod sdr;

pub use admm::{admm_qcqp, admm_qcqp_papr, InnerAdmmOptions, InnerAdmmOutcome, InnerAdmmState, XConstraint};
pub use ball::{kkt_residual, project_ball, quadratic_value, solve_norm_ball_quadratic, BallSolution, EigenQuadratic};
pub use feasible::{min_energy_meeting_mui, min_mui_within_energy, restore_energy_mui, Restored};
pub use rank_one::{rank_one_decompose, rank_one_extract, Decomposition, RankOneOptions, RankOneOutcome};
pub use sdr::{homogenize, solve_sdr, HomogenizedProblem, SdrOptions, SdrSolution};
