//! Feature-tensor files and a synthetic condition corpus.
//!
//! File layout: `b"FMCT"`, then `P`, `H`, `W` as little-endian `u32`, then
//! `P*H*W` little-endian `f32` values in `(p, h, w)` row-major order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::scale::{preprocess_feature, FeatureTensor, DEFAULT_TARGET_HW};

pub const FMCT_MAGIC: &[u8; 4] = b"FMCT";

/// Values are narrowed to `f32`.
pub fn encode_fmct(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.data().len());
    out.extend_from_slice(FMCT_MAGIC);
    for dim in [t.channels(), t.height(), t.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// `origin` only labels error messages.
pub fn decode_fmct(bytes: &[u8], condition_id: usize, origin: &str) -> Result<FeatureTensor, HarnessError> {
    let bad = |msg: String| HarnessError::TensorFile { path: origin.to_string(), msg };
    if bytes.len() < 16 || &bytes[..4] != FMCT_MAGIC {
        return Err(bad("missing FMCT header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (p, h, w) = (dim(0), dim(1), dim(2));
    let count = p
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| bad(format!("dimensions {p}x{h}x{w} overflow")))?;
    let payload = &bytes[16..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(bad(format!("{p}x{h}x{w} needs {count} floats, file holds {} bytes", payload.len())));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    FeatureTensor::new(condition_id, p, h, w, data).map_err(|e| bad(e.to_string()))
}

pub fn read_feature_file(path: impl AsRef<Path>, condition_id: usize) -> Result<FeatureTensor, HarnessError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_fmct(&bytes, condition_id, &path.display().to_string())
}

pub fn write_feature_file(path: impl AsRef<Path>, t: &FeatureTensor) -> Result<(), HarnessError> {
    let path = path.as_ref();
    std::fs::write(path, encode_fmct(t)).map_err(|e| HarnessError::io(path, e))
}

/// Shape of the synthetic condition sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub conditions: usize,
    pub channels: usize,
    pub raw_hw: (usize, usize),
    pub target_hw: (usize, usize),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { conditions: 3, channels: 12, raw_hw: (32, 32), target_hw: DEFAULT_TARGET_HW }
    }
}

/// One request's worth of preprocessed condition features.
///
/// Each condition activates its own disjoint block of channels, so pooled
/// descriptors are orthogonal and no redundancy penalty applies. Within the
/// block, a random number of channels carry a smooth random field whose
/// energy is concentrated in a random blob; that spread drives the
/// differences in effectiveness.
pub fn synthetic_conditions(cfg: &CorpusConfig, seed: u64) -> Result<Vec<FeatureTensor>, HarnessError> {
    if cfg.conditions == 0 || cfg.channels < cfg.conditions {
        return Err(HarnessError::Plan("corpus needs at least one channel per condition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rh, rw) = cfg.raw_hw;
    let block = cfg.channels / cfg.conditions;
    (0..cfg.conditions)
        .map(|j| {
            let active = rng.random_range(1..=block);
            let (cy, cx) = (rng.random::<f64>(), rng.random::<f64>());
            let spread = 0.05 + 0.5 * rng.random::<f64>();
            let mut data = vec![0.0; cfg.channels * rh * rw];
            for p in j * block..j * block + active {
                let (fy, fx, phase) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0), rng.random::<f64>() * 6.3);
                for h in 0..rh {
                    for w in 0..rw {
                        let (y, x) = (h as f64 / rh as f64, w as f64 / rw as f64);
                        let blob = (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * spread * spread)).exp();
                        let wave = (6.3 * (fy * y + fx * x) + phase).sin();
                        data[(p * rh + h) * rw + w] = blob * (1.0 + wave) + 0.05 * rng.random::<f64>();
                    }
                }
            }
            let raw = FeatureTensor::new(j, cfg.channels, rh, rw, data)?;
            Ok(preprocess_feature(&raw, cfg.target_hw)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::{estimate_scales, ScaleParams};

    #[test]
    fn fmct_round_trip() {
        let t = FeatureTensor::new(0, 2, 1, 3, vec![0.5, -1.0, 2.25, 0.0, 3.0, -0.125]).unwrap();
        let bytes = encode_fmct(&t);
        assert_eq!(&bytes[..4], b"FMCT");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(decode_fmct(&bytes, 0, "mem").unwrap(), t);
    }

    #[test]
    fn fmct_rejects_truncation_and_bad_magic() {
        let t = FeatureTensor::new(0, 1, 2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_fmct(&t);
        assert!(decode_fmct(&bytes[..bytes.len() - 1], 0, "mem").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_fmct(&wrong, 0, "mem").is_err());
        let mut nan = bytes;
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_fmct(&nan, 0, "mem").is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_unpenalised() {
        let cfg = CorpusConfig::default();
        let a = synthetic_conditions(&cfg, 5).unwrap();
        assert_eq!(a, synthetic_conditions(&cfg, 5).unwrap());
        let r = estimate_scales(&a, &ScaleParams { theta: 0.0, ..ScaleParams::default() }).unwrap();
        assert!(r.conditions.iter().all(|c| c.uniqueness == 0.0 && c.score >= 0.0 && !c.pruned));
    }
}
