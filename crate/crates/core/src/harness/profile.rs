//! Per-preprocessor workload and data-size tables.
//!
//! CSV layout: a header `label,workload_flops,output_bytes,source_bytes`
//! optionally followed by `latency_<device>_s` columns. When latency columns
//! are present, each device also needs a metadata row labelled
//! `device_flops_<device>` whose `workload_flops` cell holds that device's
//! FLOPS rate; the workload of every preprocessor is then back-solved as
//! `latency * device_flops` (geometric mean across devices).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Cross-device workload estimates further apart than this ratio are flagged.
pub const DISAGREEMENT_RATIO: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub label: String,
    pub workload_flops: f64,
    pub output_bytes: f64,
    pub typical_source_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileTable {
    pub rows: Vec<ProfileRow>,
    /// Non-fatal findings, such as devices disagreeing on a workload.
    pub warnings: Vec<String>,
}

/// (label, GFLOPs, output bytes, source bytes) for eleven common
/// preprocessors on 512x512 inputs.
const BUILTIN: [(&str, f64, f64, f64); 11] = [
    ("canny", 50.0, 30_000.0, 400_000.0),
    ("hed", 150.0, 60_000.0, 400_000.0),
    ("lineart", 200.0, 50_000.0, 400_000.0),
    ("mlsd", 120.0, 20_000.0, 350_000.0),
    ("depth_midas", 300.0, 90_000.0, 400_000.0),
    ("depth_zoe", 550.0, 100_000.0, 400_000.0),
    ("normal_bae", 450.0, 150_000.0, 450_000.0),
    ("openpose", 250.0, 10_000.0, 350_000.0),
    ("seg_upernet", 750.0, 40_000.0, 450_000.0),
    ("scribble", 100.0, 25_000.0, 350_000.0),
    ("caption_blip", 600.0, 200.0, 400_000.0),
];

impl ProfileTable {
    /// Default table shipped with the harness. The numbers are a plausible
    /// spread, not measurements.
    pub fn builtin() -> Self {
        Self {
            rows: BUILTIN
                .iter()
                .map(|&(label, gflops, out, src)| ProfileRow {
                    label: label.to_string(),
                    workload_flops: gflops * 1e9,
                    output_bytes: out,
                    typical_source_bytes: src,
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn ingest_profile(path: impl AsRef<Path>) -> Result<ProfileTable, HarnessError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_profile(file)
}

pub fn parse_profile<R: std::io::Read>(input: R) -> Result<ProfileTable, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let expected = ["label", "workload_flops", "output_bytes", "source_bytes"];
    if headers.len() < expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(HarnessError::Profile {
            problems: vec![(1, format!("header must start with {}", expected.join(",")))],
        });
    }
    let mut devices = Vec::new();
    for h in headers.iter().skip(expected.len()) {
        match h.strip_prefix("latency_").and_then(|d| d.strip_suffix("_s")) {
            Some(d) if !d.is_empty() => devices.push(d.to_string()),
            _ => {
                return Err(HarnessError::Profile {
                    problems: vec![(1, format!("unexpected column {h:?}"))],
                })
            }
        }
    }

    let mut problems = Vec::new();
    let mut device_flops: BTreeMap<String, f64> = BTreeMap::new();
    // (row number, label, workload, output, source, latencies)
    let mut pending = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // Row 1 is the header.
        let row = idx + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                problems.push((row, e.to_string()));
                continue;
            }
        };
        let label = record.get(0).unwrap_or("").to_string();
        let cell = |i: usize| record.get(i).filter(|s| !s.is_empty());
        let number = |i: usize| -> Result<Option<f64>, String> {
            match cell(i) {
                None => Ok(None),
                Some(s) => match s.parse::<f64>() {
                    Ok(v) if v.is_finite() && v > 0.0 => Ok(Some(v)),
                    Ok(v) => Err(format!("{} must be positive, got {v}", headers.get(i).unwrap_or("?"))),
                    Err(_) => Err(format!("{} is not a number: {s:?}", headers.get(i).unwrap_or("?"))),
                },
            }
        };

        if let Some(device) = label.strip_prefix("device_flops_") {
            match number(1) {
                Ok(Some(v)) => {
                    device_flops.insert(device.to_string(), v);
                }
                Ok(None) => problems.push((row, format!("device_flops_{device} needs a FLOPS value"))),
                Err(e) => problems.push((row, e)),
            }
            continue;
        }
        if label.is_empty() {
            problems.push((row, "empty label".into()));
            continue;
        }
        let parsed = (|| -> Result<_, String> {
            let workload = number(1)?;
            let output = number(2)?.ok_or("output_bytes missing")?;
            let source = number(3)?.ok_or("source_bytes missing")?;
            let latencies = (0..devices.len())
                .map(|d| number(expected.len() + d))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((workload, output, source, latencies))
        })();
        match parsed {
            Ok((workload, output, source, latencies)) => pending.push((row, label, workload, output, source, latencies)),
            Err(e) => problems.push((row, e)),
        }
    }

    let mut table = ProfileTable::default();
    let mut seen = BTreeSet::new();
    for (row, label, workload, output, source, latencies) in pending {
        if !seen.insert(label.clone()) {
            problems.push((row, format!("duplicate label {label:?}")));
            continue;
        }
        let mut estimates = Vec::new();
        for (device, latency) in devices.iter().zip(&latencies) {
            let Some(latency) = latency else { continue };
            match device_flops.get(device) {
                Some(flops) => estimates.push(latency * flops),
                None => problems.push((row, format!("no device_flops_{device} row for latency column"))),
            }
        }
        let workload_flops = if estimates.is_empty() {
            match workload {
                Some(w) => w,
                None => {
                    problems.push((row, "workload_flops missing and no latency to back-solve from".into()));
                    continue;
                }
            }
        } else {
            let lo = estimates.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = estimates.iter().copied().fold(0.0, f64::max);
            if hi > DISAGREEMENT_RATIO * lo {
                table.warnings.push(format!(
                    "row {row} ({label}): device estimates span {lo:.3e}..{hi:.3e} FLOPs"
                ));
            }
            (estimates.iter().map(|e| e.ln()).sum::<f64>() / estimates.len() as f64).exp()
        };
        table.rows.push(ProfileRow { label, workload_flops, output_bytes: output, typical_source_bytes: source });
    }

    if !problems.is_empty() {
        problems.sort_by_key(|(row, _)| *row);
        return Err(HarnessError::Profile { problems });
    }
    if table.rows.is_empty() {
        return Err(HarnessError::Profile { problems: vec![(1, "no preprocessor rows".into())] });
    }
    Ok(table)
}
