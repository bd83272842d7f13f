use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use condoff::harness::{gen_scenario, ingest_profile, read_feature_file, run_experiment, ExperimentPlan, ProfileTable};
use condoff::scale::{
    estimate_scales, predict_latency, preprocess_feature, InferenceCostModel, ScaleParams, DEFAULT_DELTA,
    DEFAULT_LAMBDA, DEFAULT_THETA, DEFAULT_TARGET_HW,
};
use condoff::solver::solve_oracle;
use condoff::{solve_baseline, solve_heuristic, HarnessError, Policy, Scenario, SolveError, SolveReport};

#[derive(Parser)]
#[command(name = "condoff", version, about = "End-edge offloading solver and conditioning-scale estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative heuristic on a scenario file.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: ReportOut,
    },
    /// Exhaustive search (small instances only).
    Oracle {
        scenario: PathBuf,
        /// Grid points per bandwidth share.
        #[arg(long)]
        y_grid: Option<usize>,
        #[command(flatten)]
        out: ReportOut,
    },
    Baseline {
        scenario: PathBuf,
        #[arg(long)]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: ReportOut,
    },
    GenScenario {
        /// Profile CSV; the built-in table when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        nk_min: usize,
        #[arg(long, default_value_t = 5)]
        nk_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        /// Aggregate CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-run records, including assignments, as JSON.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Score condition feature files (FMCT format).
    Scales {
        #[arg(required = true)]
        tensors: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        #[arg(long, default_value_t = InferenceCostModel::default().base_denoise_s)]
        cost_base: f64,
        #[arg(long, default_value_t = InferenceCostModel::default().per_branch_s)]
        cost_branch: f64,
        /// Spatial size the features are pooled to (capped at the file's size).
        #[arg(long, default_value_t = DEFAULT_TARGET_HW.0)]
        size: usize,
    },
}

#[derive(clap::Args)]
struct ReportOut {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-user latency breakdown CSV.
    #[arg(long)]
    breakdown: Option<PathBuf>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let refused = matches!(
                e,
                HarnessError::Solve(SolveError::Refused(_) | SolveError::Infeasible(_))
            );
            ExitCode::from(if refused { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Solve { scenario, max_iter, seed, out } => {
            let scn = load_scenario(&scenario)?;
            emit_report(&solve_heuristic(&scn, max_iter, seed)?, &out)
        }
        Command::Oracle { scenario, y_grid, out } => {
            let scn = load_scenario(&scenario)?;
            emit_report(&solve_oracle(&scn, y_grid)?, &out)
        }
        Command::Baseline { scenario, policy, seed, out } => {
            let scn = load_scenario(&scenario)?;
            emit_report(&solve_baseline(&scn, policy, seed)?, &out)
        }
        Command::GenScenario { profile, k, nk_min, nk_max, seed, out } => {
            let table = match profile {
                Some(p) => ingest_profile(p)?,
                None => ProfileTable::builtin(),
            };
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            let scn = gen_scenario(&table, k, (nk_min, nk_max), seed)?;
            emit_text(&scn.to_json(), out.as_deref())
        }
        Command::Experiment { plan, out, runs } => {
            let plan = ExperimentPlan::load(&plan)?;
            let result = run_experiment(&plan)?;
            let file = std::fs::File::create(&out).map_err(|e| HarnessError::Io { path: out.display().to_string(), source: e })?;
            result.write_csv(std::io::BufWriter::new(file))?;
            if let Some(path) = runs {
                emit_text(&serde_json::to_string_pretty(&result.runs)?, Some(&path))?;
            }
            let failed: usize = result.rows.iter().map(|r| r.failed).sum();
            if failed > 0 {
                eprintln!("warning: {failed} runs failed; see the failed column");
            }
            Ok(())
        }
        Command::Scales { tensors, lambda, delta, theta, cost_base, cost_branch, size } => {
            let params = ScaleParams { lambda, delta, theta };
            let cost = InferenceCostModel { base_denoise_s: cost_base, per_branch_s: cost_branch, ..InferenceCostModel::default() };
            cost.validate()?;
            let features = tensors
                .iter()
                .enumerate()
                .map(|(j, path)| {
                    let raw = read_feature_file(path, j)?;
                    let target = (size.min(raw.height()), size.min(raw.width()));
                    Ok(preprocess_feature(&raw, target)?)
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let mut report = estimate_scales(&features, &params)?;
            report.predicted_denoise_latency_s = Some(predict_latency(&report, &cost));
            emit_text(&report.to_json(), None)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    Ok(Scenario::from_json(&text)?)
}

fn emit_report(report: &SolveReport, out: &ReportOut) -> Result<(), HarnessError> {
    if let Some(path) = &out.breakdown {
        report.breakdown.write_csv(create(path)?)?;
    }
    if let Some(path) = &out.trace {
        report.write_trace_csv(create(path)?)?;
    }
    emit_text(&report.to_json(), out.out.as_deref())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })
}

fn emit_text(text: &str, path: Option<&Path>) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| HarnessError::Io { path: p.display().to_string(), source: e }),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(HarnessError::Io { path: "<stdout>".into(), source: e })
                }
                _ => Ok(()),
            }
        }
    }
}
