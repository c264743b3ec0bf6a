//! Periodic event-triggered impulsive control (PETIC) of heterogeneous
//! stochastic leader-follower multi-agent systems.
//!
//! Followers of different state dimensions are lifted into a common virtual
//! space, stacked agent-major, and driven by impulses whose instants are picked
//! by a trigger checked only on a fixed sampling grid. The crate computes the
//! mean-square stability certificate, simulates the closed loop with
//! Euler–Maruyama, and runs Monte Carlo ensembles.
//!
//! The numerical core is generic over [`Scalar`] (f32 or f64); the `*64`
//! aliases below fix it to f64.

// `!(x > 0)` is used on purpose so that NaN is rejected along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod control;
pub mod error;
pub mod linalg;
pub mod model;
pub mod output;
pub mod scalar;
pub mod scenario;
pub mod simulator;
pub mod topology;

pub use analysis::{CertificateReport, DecayVerdict, TriggerReport};
pub use control::{ControlMode, EventLog, EventRecord, TriggerParams};
pub use error::{PeticError, Result};
pub use linalg::Matrix;
pub use model::{AgentSpec, LeaderSpec, NonlinearitySpec, StackedSystem};
pub use scalar::Scalar;
pub use scenario::Scenario;
pub use simulator::{EnsembleStats, Problem, RunOutcome, Schedule, SimParams, Trajectory};
pub use topology::{EnergyProfile, TopologySpec};

pub type Matrix64 = Matrix<f64>;
pub type TriggerParams64 = TriggerParams<f64>;
pub type ControlMode64 = ControlMode<f64>;
pub type AgentSpec64 = AgentSpec<f64>;
pub type LeaderSpec64 = LeaderSpec<f64>;
pub type StackedSystem64 = StackedSystem<f64>;
pub type TopologySpec64 = TopologySpec<f64>;
pub type SimParams64 = SimParams<f64>;
pub type Problem64 = Problem<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type EnsembleStats64 = EnsembleStats<f64>;
