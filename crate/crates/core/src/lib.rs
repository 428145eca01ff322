//! Two-stage inverse kinematics for serial revolute manipulators.
//!
//! A batch of orientation-aware cyclic coordinate descent runs produces
//! coarse seeds; the best of them are replicated with small noise and
//! refined by a damped, trust-region Gauss-Newton polisher with dogleg and
//! single-coordinate fallbacks.
//!
//! ```
//! use hybrid_ik::{forward_kinematics, model::builtin, solve, SolverConfig};
//!
//! let panda = builtin::panda();
//! let target = forward_kinematics(&panda, &[0.3, -0.5, 0.2, -2.0, 0.1, 1.6, 0.4]).unwrap();
//! let report = solve(&panda, &target, &SolverConfig::default().scaled(10)).unwrap();
//! assert!(report.best.converged);
//! assert!(report.best.residual.position_norm() < 1e-9);
//! ```
//!
//! Every random draw comes from a counter-keyed stream (see [`stream`]), so
//! results are identical for any number of worker threads.

pub mod bench;
pub mod ccd;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod noise;
pub mod polish;
pub mod solver;
pub mod stream;

pub use ccd::{po_ccd_batch, CcdConfig, SeedResult};
pub use error::{IkError, Result};
pub use kinematics::{
    forward_kinematics, jacobian, task_residual, Jacobian, JointConfig, Pose, TaskResidual,
};
pub use model::{RobotModel, UNIT_TOLERANCE};
pub use noise::JointNoise;
pub use polish::{pj_ik, PolishConfig, PolishResult};
pub use solver::{solve, solve_batch, SolveReport, SolverConfig};

/// Master seed used when none is supplied.
pub const DEFAULT_SEED: u64 = 0x5EED_0F1C_0DE5;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/seeding.md")]
    mod seeding {}
    #[doc = include_str!("../../../book/src/polishing.md")]
    mod polishing {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
