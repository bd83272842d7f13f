//! Closed-form latency terms for one request round: local and edge compute
//! delays, the OFDMA uplink rate, and the two parallel completion paths.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::workload::{Assignment, ChannelSpec, EdgeSpec, Scenario, UserSpec, MIN_BANDWIDTH_FRACTION};

/// Rates below this many bits/s are clamped so latencies stay finite.
pub const RATE_FLOOR_BPS: f64 = 1e-3;

const BITS_PER_BYTE: f64 = 8.0;

/// Shannon rate of user `u` holding fraction `y` of the uplink, in bits/s.
pub fn uplink_rate(y: f64, ch: &ChannelSpec, u: &UserSpec) -> Result<f64, ModelError> {
    if !(MIN_BANDWIDTH_FRACTION..=1.0).contains(&y) {
        return Err(ModelError::Domain(format!(
            "bandwidth fraction {y} outside [{MIN_BANDWIDTH_FRACTION}, 1)"
        )));
    }
    Ok(shannon_rate(y * ch.uplink_bandwidth_hz, u.tx_power_w * u.channel_gain, ch.noise_psd_w_per_hz))
}

/// `bw * log2(1 + signal / (bw * n0))`.
pub(crate) fn shannon_rate(bw_hz: f64, signal_w: f64, n0: f64) -> f64 {
    let snr = signal_w / (bw_hz * n0);
    bw_hz * snr.ln_1p() / std::f64::consts::LN_2
}

fn check_bits(u: &UserSpec, x: &[bool]) -> Result<(), ModelError> {
    if x.len() == u.subtasks.len() {
        Ok(())
    } else {
        Err(ModelError::Shape(format!(
            "user {}: {} offload bits for {} subtasks",
            u.user_id,
            x.len(),
            u.subtasks.len()
        )))
    }
}

pub fn local_compute_delay(u: &UserSpec, x: &[bool]) -> Result<f64, ModelError> {
    check_bits(u, x)?;
    Ok(UserLoad::new(u, None, x).local_compute_s)
}

pub fn edge_compute_delay(u: &UserSpec, edge: &EdgeSpec, x: &[bool]) -> Result<f64, ModelError> {
    check_bits(u, x)?;
    Ok(UserLoad::new(u, Some(edge), x).edge_compute_s)
}

/// Upload of every distinct offloaded source image followed by edge compute.
pub fn edge_completion(
    u: &UserSpec,
    edge: &EdgeSpec,
    ch: &ChannelSpec,
    x: &[bool],
    y: f64,
) -> Result<f64, ModelError> {
    check_bits(u, x)?;
    let (rate, _) = clamp_rate(uplink_rate(y, ch, u)?);
    Ok(UserLoad::new(u, Some(edge), x).edge_completion(rate))
}

/// Local compute followed by upload of every locally produced condition.
pub fn local_completion(u: &UserSpec, ch: &ChannelSpec, x: &[bool], y: f64) -> Result<f64, ModelError> {
    check_bits(u, x)?;
    let (rate, _) = clamp_rate(uplink_rate(y, ch, u)?);
    Ok(UserLoad::new(u, None, x).local_completion(rate))
}

fn clamp_rate(r: f64) -> (f64, bool) {
    if r < RATE_FLOOR_BPS {
        (RATE_FLOOR_BPS, true)
    } else {
        (r, false)
    }
}

/// Rate-independent part of one user's latency for a fixed offload pattern.
///
/// Both completion paths are `compute + bits / rate`, so solvers that sweep
/// the bandwidth share only rebuild the rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserLoad {
    pub local_compute_s: f64,
    pub edge_compute_s: f64,
    /// Source-image bits uploaded for offloaded subtasks, shared images once.
    pub upload_bits: f64,
    /// Output bits of locally executed subtasks.
    pub result_bits: f64,
}

impl UserLoad {
    /// `edge` may be omitted when only the local side is needed.
    pub fn new(u: &UserSpec, edge: Option<&EdgeSpec>, x: &[bool]) -> Self {
        let mut local_flops = 0.0;
        let mut edge_flops = 0.0;
        let mut upload_bits = 0.0;
        let mut result_bits = 0.0;
        for (i, (s, &off)) in u.subtasks.iter().zip(x).enumerate() {
            if off {
                edge_flops += s.workload_flops;
                let seen = u.subtasks[..i]
                    .iter()
                    .zip(x)
                    .any(|(prev, &prev_off)| prev_off && prev.source_image_id == s.source_image_id);
                if !seen {
                    upload_bits += BITS_PER_BYTE * s.source_image_bytes;
                }
            } else {
                local_flops += s.workload_flops;
                result_bits += BITS_PER_BYTE * s.output_bytes;
            }
        }
        Self {
            local_compute_s: local_flops / u.compute_flops_per_s,
            edge_compute_s: edge.map_or(0.0, |e| edge_flops / e.compute_flops_per_s),
            upload_bits,
            result_bits,
        }
    }

    pub fn local_completion(&self, rate: f64) -> f64 {
        self.local_compute_s + self.result_bits / rate
    }

    pub fn edge_completion(&self, rate: f64) -> f64 {
        self.edge_compute_s + self.upload_bits / rate
    }

    pub fn completion(&self, rate: f64) -> f64 {
        self.local_completion(rate).max(self.edge_completion(rate))
    }

    fn breakdown(&self, user_id: u32, raw_rate: f64) -> UserLatency {
        let (rate, rate_clamped) = clamp_rate(raw_rate);
        let edge_upload_s = self.upload_bits / rate;
        let local_result_upload_s = self.result_bits / rate;
        let edge_completion_s = self.edge_compute_s + edge_upload_s;
        let local_completion_s = self.local_compute_s + local_result_upload_s;
        UserLatency {
            user_id,
            local_compute_s: self.local_compute_s,
            edge_compute_s: self.edge_compute_s,
            uplink_rate_bps: rate,
            edge_upload_s,
            local_result_upload_s,
            edge_completion_s,
            local_completion_s,
            completion_s: local_completion_s.max(edge_completion_s),
            rate_clamped,
        }
    }
}

/// Latency of one user's preprocessing round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLatency {
    pub user_id: u32,
    pub local_compute_s: f64,
    pub edge_compute_s: f64,
    pub uplink_rate_bps: f64,
    pub edge_upload_s: f64,
    pub local_result_upload_s: f64,
    pub edge_completion_s: f64,
    pub local_completion_s: f64,
    pub completion_s: f64,
    pub rate_clamped: bool,
}

impl UserLatency {
    /// Compute part of whichever path sets the completion time.
    pub fn binding_compute_s(&self) -> f64 {
        if self.local_completion_s >= self.edge_completion_s {
            self.local_compute_s
        } else {
            self.edge_compute_s
        }
    }

    /// Transmission part of whichever path sets the completion time.
    pub fn binding_transmission_s(&self) -> f64 {
        if self.local_completion_s >= self.edge_completion_s {
            self.local_result_upload_s
        } else {
            self.edge_upload_s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub users: Vec<UserLatency>,
    /// Mean completion time over users; the quantity the solvers minimise.
    pub mean_completion_s: f64,
    /// Set when any user's rate hit [`RATE_FLOOR_BPS`].
    pub rate_clamped: bool,
}

impl LatencyBreakdown {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "user_id",
            "local_compute_s",
            "edge_compute_s",
            "uplink_rate_bps",
            "edge_upload_s",
            "local_result_upload_s",
            "edge_completion_s",
            "local_completion_s",
            "completion_s",
            "rate_clamped",
        ])?;
        let row = |id: String, vals: [f64; 8], clamped: bool| {
            let mut r = vec![id];
            r.extend(vals.iter().map(|v| v.to_string()));
            r.push(clamped.to_string());
            r
        };
        for u in &self.users {
            w.write_record(row(
                u.user_id.to_string(),
                [
                    u.local_compute_s,
                    u.edge_compute_s,
                    u.uplink_rate_bps,
                    u.edge_upload_s,
                    u.local_result_upload_s,
                    u.edge_completion_s,
                    u.local_completion_s,
                    u.completion_s,
                ],
                u.rate_clamped,
            ))?;
        }
        let n = self.users.len() as f64;
        let mean = |f: fn(&UserLatency) -> f64| self.users.iter().map(f).sum::<f64>() / n;
        w.write_record(row(
            "mean".to_string(),
            [
                mean(|u| u.local_compute_s),
                mean(|u| u.edge_compute_s),
                mean(|u| u.uplink_rate_bps),
                mean(|u| u.edge_upload_s),
                mean(|u| u.local_result_upload_s),
                mean(|u| u.edge_completion_s),
                mean(|u| u.local_completion_s),
                self.mean_completion_s,
            ],
            self.rate_clamped,
        ))?;
        w.flush()?;
        Ok(())
    }
}

pub fn user_latency(
    u: &UserSpec,
    edge: &EdgeSpec,
    ch: &ChannelSpec,
    x: &[bool],
    y: f64,
) -> Result<UserLatency, ModelError> {
    check_bits(u, x)?;
    let rate = uplink_rate(y, ch, u)?;
    Ok(UserLoad::new(u, Some(edge), x).breakdown(u.user_id, rate))
}

/// Full latency breakdown of an assignment. Constraint feasibility is not
/// checked here; see [`crate::workload::validate_assignment`].
pub fn evaluate(scn: &Scenario, a: &Assignment) -> Result<LatencyBreakdown, ModelError> {
    a.check_shape(scn)?;
    let users = scn
        .users()
        .iter()
        .zip(&a.offload)
        .zip(&a.bandwidth_fraction)
        .map(|((u, x), &y)| user_latency(u, scn.edge(), scn.channel(), x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_completion_s = users.iter().map(|u| u.completion_s).sum::<f64>() / users.len() as f64;
    let rate_clamped = users.iter().any(|u| u.rate_clamped);
    Ok(LatencyBreakdown { users, mean_completion_s, rate_clamped })
}

/// Mean completion time; shorthand for `evaluate(..).mean_completion_s`.
pub fn objective(scn: &Scenario, a: &Assignment) -> Result<f64, ModelError> {
    evaluate(scn, a).map(|b| b.mean_completion_s)
}
