//! Seeded scenario generation from a profile table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::workload::{ChannelSpec, EdgeSpec, Scenario, SubtaskSpec, UserSpec};

use super::profile::ProfileTable;

/// One class of end device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceTier {
    pub name: String,
    pub compute_flops_per_s: f64,
    pub compute_budget_flops: f64,
}

/// Everything about a generated scenario that is not drawn at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub users: usize,
    pub nk_min: usize,
    pub nk_max: usize,
    /// Probability that a subtask reuses the previous subtask's input image.
    pub share_probability: f64,
    /// Assigned to users cyclically.
    pub tiers: Vec<DeviceTier>,
    pub tx_power_w: f64,
    /// Channel gains are drawn log-uniformly from this range.
    pub channel_gain_range: (f64, f64),
    pub uplink_bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub edge: EdgeSpec,
    pub latency_target_s: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        // Tier rates follow a 1 : 4 : 20 spread.
        let tier = |name: &str, flops: f64| DeviceTier {
            name: name.to_string(),
            compute_flops_per_s: flops,
            compute_budget_flops: 3.0 * flops,
        };
        Self {
            users: 5,
            nk_min: 1,
            nk_max: 5,
            share_probability: 0.5,
            tiers: vec![tier("nano", 0.25e12), tier("tx2", 1.0e12), tier("orin", 5.0e12)],
            tx_power_w: 0.2,
            channel_gain_range: (1e-13, 1e-11),
            uplink_bandwidth_hz: 20e6,
            noise_psd_w_per_hz: 4e-21,
            edge: EdgeSpec {
                compute_flops_per_s: 20e12,
                compute_budget_flops: 45e12,
                main_task_reserve_flops: 30e12,
            },
            latency_target_s: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Plan(msg.to_string()));
        if self.users == 0 {
            return bad("users must be at least 1");
        }
        if self.nk_min == 0 || self.nk_min > self.nk_max {
            return bad("subtask range must satisfy 1 <= nk_min <= nk_max");
        }
        if !(0.0..=1.0).contains(&self.share_probability) {
            return bad("share_probability must lie in [0, 1]");
        }
        if self.tiers.is_empty() {
            return bad("at least one device tier is required");
        }
        let (lo, hi) = self.channel_gain_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("channel_gain_range must be positive and ordered");
        }
        Ok(())
    }
}

/// Scenario with `k` users and `nk_range.0..=nk_range.1` subtasks each,
/// other settings at their defaults.
pub fn gen_scenario(
    profile: &ProfileTable,
    k: usize,
    nk_range: (usize, usize),
    seed: u64,
) -> Result<Scenario, HarnessError> {
    let cfg = GeneratorConfig { users: k, nk_min: nk_range.0, nk_max: nk_range.1, ..GeneratorConfig::default() };
    gen_scenario_with(profile, &cfg, seed)
}

pub fn gen_scenario_with(profile: &ProfileTable, cfg: &GeneratorConfig, seed: u64) -> Result<Scenario, HarnessError> {
    if profile.is_empty() {
        return Err(HarnessError::Plan("profile table is empty".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g_lo, g_hi) = cfg.channel_gain_range;
    let (ln_lo, ln_hi) = (g_lo.ln(), g_hi.ln());

    let users = (0..cfg.users)
        .map(|k| {
            let tier = &cfg.tiers[k % cfg.tiers.len()];
            let n = rng.random_range(cfg.nk_min..=cfg.nk_max);
            let mut subtasks: Vec<SubtaskSpec> = Vec::with_capacity(n);
            let mut images = 0;
            for i in 0..n {
                let row = &profile.rows[rng.random_range(0..profile.rows.len())];
                let (source_image_id, source_image_bytes) = match subtasks.last() {
                    Some(prev) if rng.random_bool(cfg.share_probability) => {
                        (prev.source_image_id.clone(), prev.source_image_bytes)
                    }
                    _ => {
                        images += 1;
                        (format!("u{k}-img{images}"), row.typical_source_bytes)
                    }
                };
                subtasks.push(SubtaskSpec {
                    id: i as u32 + 1,
                    workload_flops: row.workload_flops,
                    source_image_id,
                    source_image_bytes,
                    output_bytes: row.output_bytes,
                    kind_label: row.label.clone(),
                });
            }
            let gain = (ln_lo + rng.random::<f64>() * (ln_hi - ln_lo)).exp();
            UserSpec {
                user_id: k as u32,
                compute_flops_per_s: tier.compute_flops_per_s,
                compute_budget_flops: tier.compute_budget_flops,
                tx_power_w: cfg.tx_power_w,
                channel_gain: gain,
                subtasks,
            }
        })
        .collect();

    let channel = ChannelSpec {
        uplink_bandwidth_hz: cfg.uplink_bandwidth_hz,
        noise_psd_w_per_hz: cfg.noise_psd_w_per_hz,
    };
    Ok(Scenario::new(users, cfg.edge.clone(), channel, cfg.latency_target_s)?)
}
