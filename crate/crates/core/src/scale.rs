//! Conditioning-scale estimation from encoded condition features.
//!
//! Every condition contributes a `P x H x W` feature tensor. From it we
//! derive a spatial intensity map, an intensity-weighted variance
//! ("effectiveness") and a redundancy penalty against the other conditions
//! ("uniqueness"). Their blend is the conditioning scale; conditions scoring
//! below `θ` are pruned, which removes a ControlNet branch from denoising.

use serde::{Deserialize, Serialize};

use crate::error::ScaleError;

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_DELTA: f64 = 0.6;
pub const DEFAULT_THETA: f64 = 0.2;
pub const DEFAULT_TARGET_HW: (usize, usize) = (8, 8);

/// Channels with a spatial standard deviation below this are zeroed.
const STD_FLOOR: f64 = 1e-12;

/// Dense `P x H x W` feature block, stored in `(p, h, w)` row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub condition_id: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(
        condition_id: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, ScaleError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ScaleError::Dimensions(format!("{channels}x{height}x{width} has an empty axis")));
        }
        if data.len() != channels * height * width {
            return Err(ScaleError::Dimensions(format!(
                "{channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ScaleError::NonFinite);
        }
        Ok(Self { condition_id, channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, p: usize, h: usize, w: usize) -> f64 {
        self.data[(p * self.height + h) * self.width + w]
    }

    pub fn channel(&self, p: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[p * n..(p + 1) * n]
    }
}

/// `(start, end)` of window `i` when `len` items are split into `parts`
/// equal windows, the last one absorbing the remainder.
fn window(i: usize, parts: usize, len: usize) -> (usize, usize) {
    let size = len / parts;
    let end = if i + 1 == parts { len } else { (i + 1) * size };
    (i * size, end)
}

/// Average-pool each channel to `target_hw`, then standardise each channel
/// over its spatial positions.
pub fn preprocess_feature(raw: &FeatureTensor, target_hw: (usize, usize)) -> Result<FeatureTensor, ScaleError> {
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 || th > raw.height || tw > raw.width {
        return Err(ScaleError::Dimensions(format!(
            "target {th}x{tw} must be non-empty and within {}x{}",
            raw.height, raw.width
        )));
    }
    let mut out = Vec::with_capacity(raw.channels * th * tw);
    for p in 0..raw.channels {
        let mut pooled = Vec::with_capacity(th * tw);
        for i in 0..th {
            let (h0, h1) = window(i, th, raw.height);
            for j in 0..tw {
                let (w0, w1) = window(j, tw, raw.width);
                let mut sum = 0.0;
                for h in h0..h1 {
                    for w in w0..w1 {
                        sum += raw.get(p, h, w);
                    }
                }
                pooled.push(sum / ((h1 - h0) * (w1 - w0)) as f64);
            }
        }
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let std = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std < STD_FLOOR {
            out.extend(std::iter::repeat_n(0.0, pooled.len()));
        } else {
            out.extend(pooled.iter().map(|v| (v - mean) / std));
        }
    }
    FeatureTensor::new(raw.condition_id, raw.channels, th, tw, out)
}

/// Channel-mean of squared activations, divided by its spatial maximum.
/// Returned in `(h, w)` row-major order.
pub fn intensity_map(e: &FeatureTensor) -> Vec<f64> {
    let n = e.height * e.width;
    let mut map = vec![0.0; n];
    for p in 0..e.channels {
        for (m, v) in map.iter_mut().zip(e.channel(p)) {
            *m += v * v;
        }
    }
    let max = map.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        map.iter_mut().for_each(|m| *m /= max);
    }
    map
}

/// Intensity-weighted spatial variance, averaged over channels. Each
/// channel's deviations are taken from its plain spatial mean.
pub fn effectiveness(e: &FeatureTensor, intensity: &[f64]) -> Result<f64, ScaleError> {
    check_map(e, intensity)?;
    let n = (e.height * e.width) as f64;
    let mut total = 0.0;
    for p in 0..e.channels {
        let ch = e.channel(p);
        let mean = ch.iter().sum::<f64>() / n;
        total += ch.iter().zip(intensity).map(|(v, a)| a * (v - mean).powi(2)).sum::<f64>();
    }
    Ok(total / e.channels as f64)
}

fn check_map(e: &FeatureTensor, intensity: &[f64]) -> Result<(), ScaleError> {
    if intensity.len() != e.height * e.width {
        return Err(ScaleError::Dimensions(format!(
            "intensity map has {} cells, tensor has {}x{}",
            intensity.len(),
            e.height,
            e.width
        )));
    }
    Ok(())
}

/// Intensity-pooled channel descriptor, L2-normalised (zero stays zero).
fn descriptor(e: &FeatureTensor, intensity: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..e.channels)
        .map(|p| e.channel(p).iter().zip(intensity).map(|(x, a)| a * x).sum())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Redundancy penalty per condition: minus the mean, over the other
/// conditions, of how far their descriptor cosine exceeds `delta`.
pub fn uniqueness(features: &[FeatureTensor], maps: &[Vec<f64>], delta: f64) -> Result<Vec<f64>, ScaleError> {
    let first = features.first().ok_or(ScaleError::Empty)?;
    if maps.len() != features.len() {
        return Err(ScaleError::Dimensions(format!("{} maps for {} conditions", maps.len(), features.len())));
    }
    for (index, (f, a)) in features.iter().zip(maps).enumerate() {
        if f.channels != first.channels {
            return Err(ScaleError::ChannelMismatch { index, expected: first.channels, found: f.channels });
        }
        check_map(f, a)?;
    }
    let vs: Vec<Vec<f64>> = features.iter().zip(maps).map(|(f, a)| descriptor(f, a)).collect();
    let cos: Vec<Vec<f64>> = vs
        .iter()
        .map(|a| vs.iter().map(|b| cosine(a, b)).collect())
        .collect();
    Ok(penalties(&cos, delta))
}

/// Cosine of two unit (or zero) vectors. Identical non-zero vectors give
/// exactly 1 rather than a rounded dot product.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|&x| x != 0.0) {
        return 1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

fn penalties(cos: &[Vec<f64>], delta: f64) -> Vec<f64> {
    let j = cos.len();
    if j == 1 {
        return vec![0.0];
    }
    (0..j)
        .map(|a| {
            let excess: f64 = (0..j).filter(|&b| b != a).map(|b| (cos[a][b] - delta).max(0.0)).sum();
            -excess / (j - 1) as f64
        })
        .collect()
}

/// Average-pool channels down to `channels` groups (last group takes the
/// remainder). Used to compare conditions from encoders of different width.
pub fn project_channels(e: &FeatureTensor, channels: usize) -> Result<FeatureTensor, ScaleError> {
    if channels == 0 || channels > e.channels {
        return Err(ScaleError::Dimensions(format!("cannot project {} channels to {channels}", e.channels)));
    }
    let n = e.height * e.width;
    let mut out = Vec::with_capacity(channels * n);
    for g in 0..channels {
        let (p0, p1) = window(g, channels, e.channels);
        for cell in 0..n {
            let sum: f64 = (p0..p1).map(|p| e.data[p * n + cell]).sum();
            out.push(sum / (p1 - p0) as f64);
        }
    }
    FeatureTensor::new(e.condition_id, channels, e.height, e.width, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    /// Weight of uniqueness against effectiveness.
    pub lambda: f64,
    /// Cosine similarity tolerated before the redundancy penalty starts.
    pub delta: f64,
    /// Pruning threshold on the blended score.
    pub theta: f64,
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, delta: DEFAULT_DELTA, theta: DEFAULT_THETA }
    }
}

impl ScaleParams {
    pub fn validate(&self) -> Result<(), ScaleError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ScaleError::Parameter(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(ScaleError::Parameter(format!("delta must lie in [-1, 1], got {}", self.delta)));
        }
        if !self.theta.is_finite() {
            return Err(ScaleError::Parameter("theta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub condition_id: usize,
    pub raw_effectiveness: f64,
    /// Min-max normalised over the request's conditions.
    pub effectiveness: f64,
    pub uniqueness: f64,
    pub score: f64,
    pub alpha: f64,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub params: ScaleParams,
    pub conditions: Vec<ConditionScore>,
    /// Filled in once a cost model is applied.
    pub predicted_denoise_latency_s: Option<f64>,
}

impl ScaleReport {
    pub fn kept(&self) -> usize {
        self.conditions.iter().filter(|c| !c.pruned).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores every condition and prunes those below `θ`. Tensors with
/// differing channel counts are projected to the smallest one before the
/// redundancy comparison.
pub fn estimate_scales(features: &[FeatureTensor], params: &ScaleParams) -> Result<ScaleReport, ScaleError> {
    params.validate()?;
    if features.is_empty() {
        return Err(ScaleError::Empty);
    }
    let maps: Vec<Vec<f64>> = features.iter().map(intensity_map).collect();
    let raw: Vec<f64> = features
        .iter()
        .zip(&maps)
        .map(|(f, a)| effectiveness(f, a))
        .collect::<Result<_, _>>()?;
    let effective = normalize_effectiveness(&raw);

    let p_min = features.iter().map(|f| f.channels).min().expect("non-empty");
    let projected: Vec<FeatureTensor> = features
        .iter()
        .map(|f| if f.channels == p_min { Ok(f.clone()) } else { project_channels(f, p_min) })
        .collect::<Result<_, _>>()?;
    let unique = uniqueness(&projected, &maps, params.delta)?;

    let conditions = features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let score = params.lambda * unique[j] + (1.0 - params.lambda) * effective[j];
            let pruned = score < params.theta;
            ConditionScore {
                condition_id: f.condition_id,
                raw_effectiveness: raw[j],
                effectiveness: effective[j],
                uniqueness: unique[j],
                score,
                alpha: if pruned { 0.0 } else { score.clamp(0.0, 1.0) },
                pruned,
            }
        })
        .collect();
    Ok(ScaleReport { params: *params, conditions, predicted_denoise_latency_s: None })
}

/// Min-max normalisation. When all raw values coincide, positive ones map
/// to 1 and zeros to 0.
fn normalize_effectiveness(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|e| (e - lo) / (hi - lo)).collect()
    } else {
        raw.iter().map(|&e| if e > 0.0 { 1.0 } else { 0.0 }).collect()
    }
}

/// Denoising latency as a linear function of active ControlNet branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceCostModel {
    /// Seconds with no active branch, at `reference_steps`.
    pub base_denoise_s: f64,
    /// Seconds per active branch, at `reference_steps`.
    pub per_branch_s: f64,
    pub steps: u32,
    pub reference_steps: u32,
}

impl Default for InferenceCostModel {
    fn default() -> Self {
        Self { base_denoise_s: 0.54, per_branch_s: 0.45, steps: 20, reference_steps: 20 }
    }
}

impl InferenceCostModel {
    pub fn validate(&self) -> Result<(), ScaleError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.base_denoise_s) || !positive(self.per_branch_s) {
            return Err(ScaleError::Parameter("cost model times must be positive".into()));
        }
        if self.steps == 0 || self.reference_steps == 0 {
            return Err(ScaleError::Parameter("step counts must be positive".into()));
        }
        Ok(())
    }

    /// Latency with `branches` active branches; fractional counts give the
    /// expected latency over a batch.
    pub fn latency(&self, branches: f64) -> f64 {
        (self.base_denoise_s + branches * self.per_branch_s) * f64::from(self.steps) / f64::from(self.reference_steps)
    }
}

pub fn predict_latency(report: &ScaleReport, cost: &InferenceCostModel) -> f64 {
    cost.latency(report.kept() as f64)
}
