//! Solvers for the joint offloading / bandwidth problem.

mod baseline;
mod heuristic;
mod oracle;
mod rebalance;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baseline::solve_baseline;
pub use heuristic::{solve_heuristic, solve_heuristic_with, HeuristicOptions, SolverState};
pub use oracle::{default_y_grid, solve_oracle, ORACLE_MAX_SUBTASKS, ORACLE_MAX_USERS};

use crate::error::SolveError;
use crate::latency::{evaluate, shannon_rate, LatencyBreakdown, UserLoad, RATE_FLOOR_BPS};
use crate::workload::{validate_assignment, Assignment, ChannelSpec, Scenario, UserSpec, Violation, MIN_BANDWIDTH_FRACTION};

/// Absolute tolerance on `y` for the minimum-bandwidth bisection.
pub const BANDWIDTH_BISECTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Local,
    Edge,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Local, Policy::Edge, Policy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Local => "local",
            Policy::Edge => "edge",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Policy::Local),
            "edge" => Ok(Policy::Edge),
            "random" => Ok(Policy::Random),
            other => Err(format!("unknown policy {other:?} (expected local, edge or random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Best accepted mean completion time after this iteration.
    pub objective_s: f64,
    pub l0_s: f64,
    pub sum_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub seed: Option<u64>,
    pub assignment: Assignment,
    pub breakdown: LatencyBreakdown,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Constraint check of `assignment`; empty for every report a solver returns.
    pub violations: Vec<Violation>,
}

impl SolveReport {
    pub(crate) fn build(
        solver: impl Into<String>,
        seed: Option<u64>,
        scn: &Scenario,
        assignment: Assignment,
        iterations: usize,
        trace: Vec<TraceRow>,
    ) -> Result<Self, SolveError> {
        let violations = validate_assignment(scn, &assignment)?;
        if !violations.is_empty() {
            return Err(SolveError::Infeasible(format!("{violations:?}")));
        }
        let breakdown = evaluate(scn, &assignment)?;
        Ok(Self { solver: solver.into(), seed, assignment, breakdown, iterations, trace, violations })
    }

    pub fn objective(&self) -> f64 {
        self.breakdown.mean_completion_s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["iter", "objective_s", "L0_s", "sum_y"])?;
        for row in &self.trace {
            w.write_record([
                row.iter.to_string(),
                row.objective_s.to_string(),
                row.l0_s.to_string(),
                row.sum_y.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rate of `u` at share `y`, floored like the latency model does.
pub(crate) fn rate_at(y: f64, ch: &ChannelSpec, u: &UserSpec) -> f64 {
    shannon_rate(y * ch.uplink_bandwidth_hz, u.tx_power_w * u.channel_gain, ch.noise_psd_w_per_hz)
        .max(RATE_FLOOR_BPS)
}

/// Completion time of one user for a fixed load at share `y`.
pub(crate) fn completion_at(load: &UserLoad, y: f64, ch: &ChannelSpec, u: &UserSpec) -> f64 {
    load.completion(rate_at(y, ch, u))
}

/// Smallest share in `[ε, 1-ε]` for which the user completes within
/// `target`, found by bisection. Returns `1-ε` when even that is too slow.
pub(crate) fn min_share_for_target(load: &UserLoad, target: f64, ch: &ChannelSpec, u: &UserSpec) -> f64 {
    let mut lo = MIN_BANDWIDTH_FRACTION;
    let mut hi = 1.0 - MIN_BANDWIDTH_FRACTION;
    if completion_at(load, lo, ch, u) <= target {
        return lo;
    }
    if completion_at(load, hi, ch, u) > target {
        return hi;
    }
    while hi - lo > BANDWIDTH_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if completion_at(load, mid, ch, u) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Benefit of offloading subtask `i` of `u` at rate `rate`:
/// `L_k(x_i = 0) - L_k(x_i = 1)` with the other bits as in `x`.
pub(crate) fn offload_gain(scn: &Scenario, u: &UserSpec, x: &[bool], i: usize, rate: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = false;
    let local = UserLoad::new(u, Some(scn.edge()), &probe).completion(rate);
    probe[i] = true;
    let edge = UserLoad::new(u, Some(scn.edge()), &probe).completion(rate);
    local - edge
}
