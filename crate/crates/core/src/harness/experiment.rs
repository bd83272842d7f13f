//! Parameter sweeps over generated scenarios or synthetic condition sets.
//!
//! Replication `r` always uses the same scenario (or condition set) at every
//! sweep value, so differences between sweep points are not sampling noise.
//! Cells run in parallel; results come back in (value, replication) order.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::latency::objective;
use crate::scale::{estimate_scales, InferenceCostModel, ScaleParams};
use crate::solver::{solve_baseline, solve_heuristic, solve_oracle, Policy, SolveReport, ORACLE_MAX_SUBTASKS, ORACLE_MAX_USERS};
use crate::workload::{Assignment, Scenario};

use super::features::{synthetic_conditions, CorpusConfig};
use super::generate::{gen_scenario_with, GeneratorConfig};
use super::profile::{ingest_profile, ProfileTable};

pub const HEURISTIC_LABEL: &str = "heuristic";
pub const SCALES_LABEL: &str = "scales";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variable", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    UplinkBandwidthHz {
        values: Vec<f64>,
    },
    Theta {
        values: Vec<f64>,
        #[serde(default)]
        corpus: CorpusConfig,
        #[serde(default)]
        cost: InferenceCostModel,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

fn default_lambda() -> f64 {
    ScaleParams::default().lambda
}

fn default_delta() -> f64 {
    ScaleParams::default().delta
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::UplinkBandwidthHz { .. } => "uplink_bandwidth_hz",
            Sweep::Theta { .. } => "theta",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Sweep::UplinkBandwidthHz { values } | Sweep::Theta { values, .. } => values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub scenario: GeneratorConfig,
    /// Profile CSV; the built-in table when absent.
    #[serde(default)]
    pub profile: Option<String>,
    pub sweep: Sweep,
    pub replications: usize,
    pub seed: u64,
    /// Baselines run alongside the heuristic.
    #[serde(default = "all_policies")]
    pub policies: Vec<Policy>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Also run the exhaustive solver when the instance is small enough.
    #[serde(default)]
    pub oracle_gap: bool,
}

fn all_policies() -> Vec<Policy> {
    Policy::ALL.to_vec()
}

fn default_max_iter() -> usize {
    100
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Plan(msg.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.sweep.values().is_empty() {
            return bad("sweep needs at least one value");
        }
        if self.sweep.values().iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        match &self.sweep {
            Sweep::UplinkBandwidthHz { values } => {
                if values.iter().any(|&v| v <= 0.0) {
                    return bad("bandwidth values must be positive");
                }
                self.scenario.validate()
            }
            Sweep::Theta { cost, lambda, delta, .. } => {
                cost.validate()?;
                ScaleParams { lambda: *lambda, delta: *delta, theta: 0.0 }.validate()?;
                Ok(())
            }
        }
    }

    /// Per-replication seeds; shared by every sweep value.
    pub fn replication_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.replications).map(|_| rng.random()).collect()
    }
}

/// One solver run (or one scale estimate) in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub value: f64,
    pub replication: usize,
    pub policy: String,
    pub seed: u64,
    pub objective_s: Option<f64>,
    pub compute_s: Option<f64>,
    pub transmission_s: Option<f64>,
    pub oracle_gap: Option<f64>,
    pub kept: Option<usize>,
    pub assignment: Option<Assignment>,
    pub error: Option<String>,
}

impl RunRecord {
    fn empty(value: f64, replication: usize, policy: &str, seed: u64) -> Self {
        Self {
            value,
            replication,
            policy: policy.to_string(),
            seed,
            objective_s: None,
            compute_s: None,
            transmission_s: None,
            oracle_gap: None,
            kept: None,
            assignment: None,
            error: None,
        }
    }

    fn failed(value: f64, replication: usize, policy: &str, seed: u64, error: String) -> Self {
        Self { error: Some(error), ..Self::empty(value, replication, policy, seed) }
    }
}

/// Means over the successful runs of one (value, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep: String,
    pub value: f64,
    pub policy: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_completion_s: Option<f64>,
    pub std_completion_s: Option<f64>,
    pub mean_compute_s: Option<f64>,
    pub mean_transmission_s: Option<f64>,
    pub mean_oracle_gap: Option<f64>,
    pub mean_kept: Option<f64>,
    pub predicted_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn row(&self, value: f64, policy: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.value == value && r.policy == policy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "sweep",
            "value",
            "policy",
            "runs",
            "failed",
            "mean_completion_s",
            "std_completion_s",
            "mean_compute_s",
            "mean_transmission_s",
            "mean_oracle_gap",
            "mean_kept",
            "predicted_latency_s",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.sweep.clone(),
                r.value.to_string(),
                r.policy.clone(),
                r.runs.to_string(),
                r.failed.to_string(),
                opt(r.mean_completion_s),
                opt(r.std_completion_s),
                opt(r.mean_compute_s),
                opt(r.mean_transmission_s),
                opt(r.mean_oracle_gap),
                opt(r.mean_kept),
                opt(r.predicted_latency_s),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Runs every (value, replication) cell. Failures inside a cell are recorded
/// on its runs; only plan and profile problems abort.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult, HarnessError> {
    plan.validate()?;
    let seeds = plan.replication_seeds();
    let cells: Vec<(f64, usize)> = plan
        .sweep
        .values()
        .iter()
        .flat_map(|&v| (0..plan.replications).map(move |r| (v, r)))
        .collect();

    let runs: Vec<RunRecord> = match &plan.sweep {
        Sweep::UplinkBandwidthHz { .. } => {
            let profile = match &plan.profile {
                Some(path) => ingest_profile(path)?,
                None => ProfileTable::builtin(),
            };
            let mut labels = vec![HEURISTIC_LABEL.to_string()];
            labels.extend(plan.policies.iter().map(|p| p.name().to_string()));
            cells
                .par_iter()
                .map(|&(value, rep)| bandwidth_cell(plan, &profile, &labels, value, rep, seeds[rep]))
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        }
        Sweep::Theta { corpus, lambda, delta, .. } => {
            // Scores do not depend on θ, so estimate once per replication.
            let scored: Vec<Result<Vec<f64>, String>> = seeds
                .par_iter()
                .map(|&seed| {
                    let features = synthetic_conditions(corpus, seed).map_err(|e| e.to_string())?;
                    let params = ScaleParams { lambda: *lambda, delta: *delta, theta: 0.0 };
                    let report = estimate_scales(&features, &params).map_err(|e| e.to_string())?;
                    Ok(report.conditions.iter().map(|c| c.score).collect())
                })
                .collect();
            cells
                .iter()
                .map(|&(value, rep)| match &scored[rep] {
                    Ok(scores) => {
                        let mut run = RunRecord::empty(value, rep, SCALES_LABEL, seeds[rep]);
                        run.kept = Some(scores.iter().filter(|&&s| s >= value).count());
                        run
                    }
                    Err(e) => RunRecord::failed(value, rep, SCALES_LABEL, seeds[rep], e.clone()),
                })
                .collect()
        }
    };

    let rows = aggregate(plan, &runs);
    Ok(ExperimentResult { rows, runs })
}

fn bandwidth_cell(
    plan: &ExperimentPlan,
    profile: &ProfileTable,
    labels: &[String],
    value: f64,
    rep: usize,
    seed: u64,
) -> Vec<RunRecord> {
    let scenario = gen_scenario_with(profile, &plan.scenario, seed)
        .and_then(|s| Ok(s.with_uplink_bandwidth(value)?));
    let scn = match scenario {
        Ok(s) => s,
        Err(e) => {
            return labels.iter().map(|l| RunRecord::failed(value, rep, l, seed, e.to_string())).collect();
        }
    };
    let small = scn.num_users() <= ORACLE_MAX_USERS && scn.total_subtasks() <= ORACLE_MAX_SUBTASKS;
    let oracle = if plan.oracle_gap && small { solve_oracle(&scn, None).ok().map(|r| r.objective()) } else { None };

    labels
        .iter()
        .map(|label| {
            let report = if label == HEURISTIC_LABEL {
                solve_heuristic(&scn, plan.max_iter, seed)
            } else {
                let policy: Policy = label.parse().expect("label built from a policy");
                solve_baseline(&scn, policy, seed)
            };
            match report {
                Ok(r) => record(value, rep, label, seed, &r, oracle),
                Err(e) => RunRecord::failed(value, rep, label, seed, e.to_string()),
            }
        })
        .collect()
}

fn record(value: f64, rep: usize, label: &str, seed: u64, r: &SolveReport, oracle: Option<f64>) -> RunRecord {
    let users = &r.breakdown.users;
    let n = users.len() as f64;
    RunRecord {
        value,
        replication: rep,
        policy: label.to_string(),
        seed,
        objective_s: Some(r.objective()),
        compute_s: Some(users.iter().map(|u| u.binding_compute_s()).sum::<f64>() / n),
        transmission_s: Some(users.iter().map(|u| u.binding_transmission_s()).sum::<f64>() / n),
        oracle_gap: oracle.map(|o| (r.objective() - o) / o),
        kept: None,
        assignment: Some(r.assignment.clone()),
        error: None,
    }
}

fn aggregate(plan: &ExperimentPlan, runs: &[RunRecord]) -> Vec<AggregateRow> {
    let mut labels: Vec<String> = Vec::new();
    for r in runs {
        if !labels.contains(&r.policy) {
            labels.push(r.policy.clone());
        }
    }
    let mean = |xs: &[f64]| if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) };
    let mut rows = Vec::new();
    for &value in plan.sweep.values() {
        for label in &labels {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.value == value && &r.policy == label).collect();
            let ok: Vec<&RunRecord> = cell.iter().copied().filter(|r| r.error.is_none()).collect();
            let pick = |f: fn(&RunRecord) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let completion = pick(|r| r.objective_s);
            let mean_completion = mean(&completion);
            let std_completion = mean_completion.map(|m| {
                (completion.iter().map(|x| (x - m).powi(2)).sum::<f64>() / completion.len() as f64).sqrt()
            });
            let mean_kept = mean(&pick(|r| r.kept.map(|k| k as f64)));
            let predicted = match &plan.sweep {
                Sweep::Theta { cost, .. } => mean_kept.map(|k| cost.latency(k)),
                Sweep::UplinkBandwidthHz { .. } => None,
            };
            rows.push(AggregateRow {
                sweep: plan.sweep.name().to_string(),
                value,
                policy: label.clone(),
                runs: ok.len(),
                failed: cell.len() - ok.len(),
                mean_completion_s: mean_completion,
                std_completion_s: std_completion,
                mean_compute_s: mean(&pick(|r| r.compute_s)),
                mean_transmission_s: mean(&pick(|r| r.transmission_s)),
                mean_oracle_gap: mean(&pick(|r| r.oracle_gap)),
                mean_kept,
                predicted_latency_s: predicted,
            });
        }
    }
    rows
}

/// Re-evaluates every stored assignment against its regenerated scenario and
/// returns the largest relative difference from the stored objective.
pub fn revalidate(plan: &ExperimentPlan, result: &ExperimentResult) -> Result<f64, HarnessError> {
    let profile = match &plan.profile {
        Some(path) => ingest_profile(path)?,
        None => ProfileTable::builtin(),
    };
    let mut worst: f64 = 0.0;
    for run in &result.runs {
        let (Some(a), Some(stored)) = (&run.assignment, run.objective_s) else { continue };
        let scn: Scenario = gen_scenario_with(&profile, &plan.scenario, run.seed)?.with_uplink_bandwidth(run.value)?;
        let again = objective(&scn, a)?;
        worst = worst.max((again - stored).abs() / stored.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            scenario: GeneratorConfig { users: 3, nk_min: 1, nk_max: 2, ..GeneratorConfig::default() },
            profile: None,
            sweep: Sweep::UplinkBandwidthHz { values: vec![5e6, 20e6] },
            replications: 3,
            seed: 11,
            policies: Policy::ALL.to_vec(),
            max_iter: 100,
            oracle_gap: true,
        }
    }

    #[test]
    fn rows_in_sweep_order_and_deterministic() {
        let plan = small_plan();
        let a = run_experiment(&plan).unwrap();
        let b = run_experiment(&plan).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.rows.len(), 2 * 4);
        assert_eq!(a.rows[0].policy, HEURISTIC_LABEL);
        assert!(a.rows.iter().all(|r| r.failed == 0 && r.runs == 3));
        let gap = a.row(20e6, HEURISTIC_LABEL).unwrap().mean_oracle_gap.unwrap();
        assert!(gap >= -1e-9);
        assert!(revalidate(&plan, &a).unwrap() < 1e-9);
    }

    #[test]
    fn replications_share_scenarios_across_values() {
        let r = run_experiment(&small_plan()).unwrap();
        let seeds = |v: f64| r.runs.iter().filter(|x| x.value == v).map(|x| x.seed).collect::<Vec<_>>();
        assert_eq!(seeds(5e6), seeds(20e6));
    }

    #[test]
    fn theta_sweep_starts_at_all_kept() {
        let plan = ExperimentPlan {
            sweep: Sweep::Theta {
                values: vec![0.0, 0.2, 0.4],
                corpus: CorpusConfig::default(),
                cost: InferenceCostModel::default(),
                lambda: 0.2,
                delta: 0.6,
            },
            replications: 4,
            ..small_plan()
        };
        let r = run_experiment(&plan).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[0].mean_kept, Some(3.0));
        assert_eq!(r.rows[0].predicted_latency_s, Some(InferenceCostModel::default().latency(3.0)));
    }

    #[test]
    fn plan_validation() {
        let mut p = small_plan();
        p.replications = 0;
        assert!(p.validate().is_err());
        let mut p = small_plan();
        p.sweep = Sweep::UplinkBandwidthHz { values: vec![] };
        assert!(p.validate().is_err());
        let json = r#"{"sweep":{"variable":"uplink_bandwidth_hz","values":[1e7]},"replications":1,"seed":3}"#;
        let p = ExperimentPlan::from_json(json).unwrap();
        assert_eq!(p.policies, Policy::ALL.to_vec());
    }
}
