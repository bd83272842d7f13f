//! Problem instance types: users, their preprocessing subtasks, the edge
//! server, the shared uplink channel, and the joint offload/bandwidth
//! assignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Lower bound for a user's uplink bandwidth fraction.
pub const MIN_BANDWIDTH_FRACTION: f64 = 1e-6;

/// Absolute slack allowed on the bandwidth simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Above this many subtasks per user the feasibility floor falls back to a
/// greedy fill instead of subset enumeration.
const EXACT_FLOOR_MAX_SUBTASKS: usize = 20;

/// One preprocessing subtask (e.g. depth estimation on a reference image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskSpec {
    pub id: u32,
    pub workload_flops: f64,
    /// Subtasks of one user with the same id read the same input image.
    pub source_image_id: String,
    pub source_image_bytes: f64,
    pub output_bytes: f64,
    pub kind_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub user_id: u32,
    pub compute_flops_per_s: f64,
    /// Per-request FLOP budget for locally executed subtasks.
    pub compute_budget_flops: f64,
    pub tx_power_w: f64,
    pub channel_gain: f64,
    pub subtasks: Vec<SubtaskSpec>,
}

impl UserSpec {
    pub fn total_workload(&self) -> f64 {
        self.subtasks.iter().map(|s| s.workload_flops).sum()
    }

    /// Offload pattern that keeps the largest possible workload local while
    /// respecting the local budget. This minimises the FLOPs the user must
    /// push to the edge.
    pub fn min_offload_pattern(&self) -> Vec<bool> {
        let n = self.subtasks.len();
        let budget = self.compute_budget_flops;
        if n <= EXACT_FLOOR_MAX_SUBTASKS {
            let mut best_mask = 0u32;
            let mut best_load = 0.0;
            for mask in 0u32..(1u32 << n) {
                let load: f64 = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| self.subtasks[i].workload_flops)
                    .sum();
                if !exceeds(load, budget) && load > best_load {
                    best_load = load;
                    best_mask = mask;
                }
            }
            (0..n).map(|i| best_mask & (1 << i) == 0).collect()
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                self.subtasks[b]
                    .workload_flops
                    .total_cmp(&self.subtasks[a].workload_flops)
            });
            let mut offload = vec![true; n];
            let mut load = 0.0;
            for i in order {
                let w = self.subtasks[i].workload_flops;
                if !exceeds(load + w, budget) {
                    load += w;
                    offload[i] = false;
                }
            }
            offload
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let k = self.user_id;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ModelError::invalid(format!("user {k}: {name} must be positive, got {v}")))
            }
        };
        positive("compute_flops_per_s", self.compute_flops_per_s)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("channel_gain", self.channel_gain)?;
        if !(self.compute_budget_flops.is_finite() && self.compute_budget_flops >= 0.0) {
            return Err(ModelError::invalid(format!(
                "user {k}: compute_budget_flops must be non-negative"
            )));
        }
        if self.subtasks.is_empty() {
            return Err(ModelError::invalid(format!("user {k}: no subtasks")));
        }
        let mut ids = BTreeSet::new();
        let mut image_sizes: BTreeMap<&str, f64> = BTreeMap::new();
        for s in &self.subtasks {
            if !ids.insert(s.id) {
                return Err(ModelError::invalid(format!("user {k}: duplicate subtask id {}", s.id)));
            }
            positive("workload_flops", s.workload_flops)?;
            positive("source_image_bytes", s.source_image_bytes)?;
            positive("output_bytes", s.output_bytes)?;
            if let Some(&prev) = image_sizes.get(s.source_image_id.as_str()) {
                if prev != s.source_image_bytes {
                    return Err(ModelError::invalid(format!(
                        "user {k}: image {:?} has inconsistent sizes {prev} and {}",
                        s.source_image_id, s.source_image_bytes
                    )));
                }
            } else {
                image_sizes.insert(&s.source_image_id, s.source_image_bytes);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub compute_flops_per_s: f64,
    pub compute_budget_flops: f64,
    /// FLOPs held back for the main generation task.
    pub main_task_reserve_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub uplink_bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
}

/// A validated problem instance.
///
/// Construction goes through [`Scenario::new`] (or deserialization, which
/// calls it), so every `Scenario` in hand admits at least one feasible
/// assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario")]
pub struct Scenario {
    users: Vec<UserSpec>,
    edge: EdgeSpec,
    channel: ChannelSpec,
    latency_target_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    users: Vec<UserSpec>,
    edge: EdgeSpec,
    channel: ChannelSpec,
    latency_target_s: f64,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = ModelError;

    fn try_from(raw: RawScenario) -> Result<Self, Self::Error> {
        Scenario::new(raw.users, raw.edge, raw.channel, raw.latency_target_s)
    }
}

impl Scenario {
    pub fn new(
        users: Vec<UserSpec>,
        edge: EdgeSpec,
        channel: ChannelSpec,
        latency_target_s: f64,
    ) -> Result<Self, ModelError> {
        if users.is_empty() {
            return Err(ModelError::invalid("scenario has no users"));
        }
        let mut user_ids = BTreeSet::new();
        for u in &users {
            if !user_ids.insert(u.user_id) {
                return Err(ModelError::invalid(format!("duplicate user id {}", u.user_id)));
            }
            u.validate()?;
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(edge.compute_flops_per_s) || !pos(edge.compute_budget_flops) {
            return Err(ModelError::invalid("edge compute rate and budget must be positive"));
        }
        if !(edge.main_task_reserve_flops.is_finite() && edge.main_task_reserve_flops >= 0.0) {
            return Err(ModelError::invalid("edge main-task reserve must be non-negative"));
        }
        if edge.main_task_reserve_flops > edge.compute_budget_flops {
            return Err(ModelError::invalid("edge main-task reserve exceeds edge budget"));
        }
        if !pos(channel.uplink_bandwidth_hz) || !pos(channel.noise_psd_w_per_hz) {
            return Err(ModelError::invalid("channel bandwidth and noise PSD must be positive"));
        }
        if !pos(latency_target_s) {
            return Err(ModelError::invalid("latency target must be positive"));
        }

        // Every user must be able to shed enough work to the edge to meet its
        // local budget, and all of that forced work has to fit next to C_0.
        let forced: f64 = users
            .iter()
            .map(|u| {
                u.subtasks
                    .iter()
                    .zip(u.min_offload_pattern())
                    .filter(|(_, off)| *off)
                    .map(|(s, _)| s.workload_flops)
                    .sum::<f64>()
            })
            .sum();
        if exceeds(edge.main_task_reserve_flops + forced, edge.compute_budget_flops) {
            return Err(ModelError::invalid(format!(
                "infeasible: {forced:.4e} FLOPs must be offloaded but the edge only has {:.4e} \
                 beyond the main-task reserve",
                edge.compute_budget_flops - edge.main_task_reserve_flops
            )));
        }

        Ok(Self { users, edge, channel, latency_target_s })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn users(&self) -> &[UserSpec] {
        &self.users
    }

    pub fn edge(&self) -> &EdgeSpec {
        &self.edge
    }

    pub fn channel(&self) -> &ChannelSpec {
        &self.channel
    }

    pub fn latency_target_s(&self) -> f64 {
        self.latency_target_s
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn total_subtasks(&self) -> usize {
        self.users.iter().map(|u| u.subtasks.len()).sum()
    }

    /// Same instance with a different total uplink bandwidth.
    pub fn with_uplink_bandwidth(&self, hz: f64) -> Result<Self, ModelError> {
        let mut channel = self.channel.clone();
        channel.uplink_bandwidth_hz = hz;
        Self::new(self.users.clone(), self.edge.clone(), channel, self.latency_target_s)
    }

    /// Per-user minimal-offload patterns with uniform bandwidth. Always
    /// feasible for a constructed scenario.
    pub fn feasibility_floor(&self) -> Assignment {
        Assignment {
            offload: self.users.iter().map(UserSpec::min_offload_pattern).collect(),
            bandwidth_fraction: uniform_shares(self.num_users()),
        }
    }
}

/// Equal bandwidth shares. A lone user gets `1 - MIN_BANDWIDTH_FRACTION`
/// since a share must stay below one.
pub fn uniform_shares(k: usize) -> Vec<f64> {
    if k == 1 {
        vec![1.0 - MIN_BANDWIDTH_FRACTION]
    } else {
        vec![1.0 / k as f64; k]
    }
}

/// Joint solution: offload bits per subtask and a bandwidth share per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    /// `true` means the subtask runs at the edge.
    #[serde(with = "bits")]
    pub offload: Vec<Vec<bool>>,
    pub bandwidth_fraction: Vec<f64>,
}

impl Assignment {
    pub fn all_local(scn: &Scenario) -> Self {
        Self::uniform(scn, false)
    }

    pub fn all_edge(scn: &Scenario) -> Self {
        Self::uniform(scn, true)
    }

    fn uniform(scn: &Scenario, offload: bool) -> Self {
        Self {
            offload: scn.users().iter().map(|u| vec![offload; u.subtasks.len()]).collect(),
            bandwidth_fraction: uniform_shares(scn.num_users()),
        }
    }

    pub fn check_shape(&self, scn: &Scenario) -> Result<(), ModelError> {
        if self.offload.len() != scn.num_users() || self.bandwidth_fraction.len() != scn.num_users() {
            return Err(ModelError::Shape(format!(
                "assignment covers {} offload rows and {} bandwidth entries for {} users",
                self.offload.len(),
                self.bandwidth_fraction.len(),
                scn.num_users()
            )));
        }
        for (k, (row, user)) in self.offload.iter().zip(scn.users()).enumerate() {
            if row.len() != user.subtasks.len() {
                return Err(ModelError::Shape(format!(
                    "user index {k}: {} offload bits for {} subtasks",
                    row.len(),
                    user.subtasks.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_offloaded(&self) -> usize {
        self.offload.iter().flatten().filter(|&&b| b).count()
    }
}

/// Serializes offload rows as 0/1 integers.
mod bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<bool>], s: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<Vec<u8>> = rows.iter().map(|r| r.iter().map(|&b| b as u8).collect()).collect();
        ints.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<bool>>, D::Error> {
        let ints = Vec::<Vec<u8>>::deserialize(d)?;
        ints.into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(serde::de::Error::custom(format!("offload bit must be 0 or 1, got {other}"))),
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Locally executed workload within the user's budget.
    LocalBudget,
    /// Offloaded workload plus main-task reserve within the edge budget.
    EdgeBudget,
    /// Bandwidth shares sum to at most one.
    BandwidthSimplex,
    /// A single share outside `[MIN_BANDWIDTH_FRACTION, 1)`.
    BandwidthRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// Index into the scenario's user list, for per-user constraints.
    pub user: Option<usize>,
    /// How far the left-hand side exceeds its bound (positive).
    pub excess: f64,
}

/// Signed slack of every constraint; negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct Slacks {
    pub local: Vec<f64>,
    pub edge: f64,
    pub bandwidth: f64,
}

pub fn constraint_slacks(scn: &Scenario, a: &Assignment) -> Result<Slacks, ModelError> {
    a.check_shape(scn)?;
    let local = scn
        .users()
        .iter()
        .zip(&a.offload)
        .map(|(u, x)| u.compute_budget_flops - local_load(u, x))
        .collect();
    let edge = scn.edge().compute_budget_flops - edge_load(scn, a);
    let bandwidth = 1.0 - a.bandwidth_fraction.iter().sum::<f64>();
    Ok(Slacks { local, edge, bandwidth })
}

/// Lists every violated constraint. An empty list means the assignment is
/// feasible.
pub fn validate_assignment(scn: &Scenario, a: &Assignment) -> Result<Vec<Violation>, ModelError> {
    let slacks = constraint_slacks(scn, a)?;
    let mut out = Vec::new();
    for (k, (u, &slack)) in scn.users().iter().zip(&slacks.local).enumerate() {
        if exceeds(u.compute_budget_flops - slack, u.compute_budget_flops) {
            out.push(Violation { constraint: Constraint::LocalBudget, user: Some(k), excess: -slack });
        }
    }
    let budget = scn.edge().compute_budget_flops;
    if exceeds(budget - slacks.edge, budget) {
        out.push(Violation { constraint: Constraint::EdgeBudget, user: None, excess: -slacks.edge });
    }
    for (k, &y) in a.bandwidth_fraction.iter().enumerate() {
        if !(y.is_finite() && (MIN_BANDWIDTH_FRACTION..1.0).contains(&y)) {
            let excess = if y.is_finite() && y >= 1.0 {
                y - 1.0
            } else if y.is_finite() {
                MIN_BANDWIDTH_FRACTION - y
            } else {
                f64::INFINITY
            };
            out.push(Violation { constraint: Constraint::BandwidthRange, user: Some(k), excess });
        }
    }
    if slacks.bandwidth < -SIMPLEX_TOLERANCE {
        out.push(Violation {
            constraint: Constraint::BandwidthSimplex,
            user: None,
            excess: -slacks.bandwidth,
        });
    }
    Ok(out)
}

pub(crate) fn local_load(u: &UserSpec, x: &[bool]) -> f64 {
    u.subtasks.iter().zip(x).filter(|(_, &off)| !off).map(|(s, _)| s.workload_flops).sum()
}

pub(crate) fn offloaded_load(u: &UserSpec, x: &[bool]) -> f64 {
    u.subtasks.iter().zip(x).filter(|(_, &off)| off).map(|(s, _)| s.workload_flops).sum()
}

pub(crate) fn edge_load(scn: &Scenario, a: &Assignment) -> f64 {
    scn.edge().main_task_reserve_flops
        + scn.users().iter().zip(&a.offload).map(|(u, x)| offloaded_load(u, x)).sum::<f64>()
}

/// `lhs > rhs` beyond floating-point summation noise.
pub(crate) fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs - rhs > 1e-9 * rhs.abs().max(1.0)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn subtask(id: u32, flops: f64, image: &str, image_bytes: f64, out_bytes: f64) -> SubtaskSpec {
        SubtaskSpec {
            id,
            workload_flops: flops,
            source_image_id: image.to_string(),
            source_image_bytes: image_bytes,
            output_bytes: out_bytes,
            kind_label: format!("kind{id}"),
        }
    }

    pub fn user(id: u32, flops: f64, budget: f64, subtasks: Vec<SubtaskSpec>) -> UserSpec {
        UserSpec {
            user_id: id,
            compute_flops_per_s: flops,
            compute_budget_flops: budget,
            tx_power_w: 0.1,
            channel_gain: 1e-7,
            subtasks,
        }
    }

    pub fn edge(flops: f64, budget: f64, reserve: f64) -> EdgeSpec {
        EdgeSpec { compute_flops_per_s: flops, compute_budget_flops: budget, main_task_reserve_flops: reserve }
    }

    pub fn channel() -> ChannelSpec {
        ChannelSpec { uplink_bandwidth_hz: 20e6, noise_psd_w_per_hz: 1e-13 }
    }
}
