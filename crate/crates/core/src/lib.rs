//! Simulation and optimisation toolkit for multi-user end-edge offloading of
//! multi-condition text-to-image preprocessing subtasks, together with a
//! feature-driven conditioning-scale estimator that prunes weak conditions.

pub mod error;
pub mod harness;
pub mod latency;
pub mod scale;
pub mod solver;
pub mod workload;

pub use error::{HarnessError, ModelError, ScaleError, SolveError};
pub use latency::{evaluate, LatencyBreakdown, UserLatency};
pub use solver::{solve_baseline, solve_heuristic, solve_oracle, Policy, SolveReport};
pub use workload::{validate_assignment, Assignment, ChannelSpec, EdgeSpec, Scenario, SubtaskSpec, UserSpec};
