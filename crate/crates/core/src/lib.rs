//! Continuous normalizing flows with optimal-transport regularization, trained
//! as a sequence of proximal steps in distribution space.
//!
//! The library is organized around a small set of pieces:
//!
//! * [`params`] / [`potential`] — a scalar potential network Φ(z, t) whose
//!   spatial gradient defines the flow velocity, with exact first and second
//!   spatial derivatives and exact parameter adjoints.
//! * [`integrator`] — fixed-step RK4 over the augmented state
//!   (position, accumulated log-determinant, accumulated kinetic energy).
//! * [`objective`] — the transport-regularized likelihood loss and its exact
//!   gradient through the discretized flow.
//! * [`trainer`] — Adam on one subproblem.
//! * [`jko`] — the proximal outer loop: train a stage, push samples forward,
//!   stack the stage weights; generation and density estimation compose the
//!   stack.
//! * [`datasets`] — seeded 2D benchmark generators and a tabular CSV loader.
//! * [`metrics`] — Gaussian-kernel unbiased squared-MMD machinery.

pub mod datasets;
pub mod error;
pub mod integrator;
pub mod jko;
pub mod metrics;
pub mod objective;
pub mod params;
mod par;
pub mod potential;
pub mod rng;
pub mod trainer;

/// Whether batch operations may fan out across threads. Both modes produce
/// identical values (per-row work is independent and reductions run in row
/// order); `Sequential` additionally guarantees a single-threaded schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

pub use datasets::{DatasetKind, DatasetSpec, SampleMatrix};
pub use error::Error;
pub use integrator::{AugmentedState, Direction, IntegratorConfig};
pub use jko::{JkoConfig, StageStack};
pub use metrics::Mmd2Result;
pub use objective::LossBreakdown;
pub use params::{NetConfig, ParamVector};
pub use potential::PotentialEval;
pub use trainer::{TrainConfig, TrainReport};

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
