//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line, then exits non-zero if any failed.

// The reference implementations index on purpose.
#![allow(clippy::needless_range_loop)]

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condoff::harness::{
    gen_scenario, revalidate, run_experiment, CorpusConfig, ExperimentPlan, GeneratorConfig, ProfileTable, Sweep,
};
use condoff::latency::{evaluate, uplink_rate};
use condoff::scale::{effectiveness, intensity_map, uniqueness, FeatureTensor, InferenceCostModel};
use condoff::solver::{solve_baseline, solve_heuristic, solve_oracle, Policy};
use condoff::{validate_assignment, Assignment, Scenario};

// Pinned tolerances.
const GAP_MEAN_MAX: f64 = 0.10;
const GAP_MAX: f64 = 0.30;
const ESTIMATOR_REL_TOL: f64 = 1e-9;
/// Below this magnitude the estimator comparison is absolute.
const ESTIMATOR_ABS_FLOOR: f64 = 1e-12;
const SIGN_TOL: f64 = 1e-9;
const EVAL_REL_TOL: f64 = 1e-9;
const TREND_SLACK: f64 = 1e-12;
const HEURISTIC_TIME_S: f64 = 1.0;
const ORACLE_TIME_S: f64 = 30.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 7] = [
        ("1 oracle gap", oracle_gap),
        ("2 baseline dominance", baseline_dominance),
        ("3 bandwidth trend", bandwidth_trend),
        ("4 pruning trend", pruning_trend),
        ("5 estimator reference equivalence", estimator_equivalence),
        ("6 latency model properties", latency_properties),
        ("7 determinism and performance", determinism_and_performance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} ({}; {:.1}s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn oracle_gap() -> Outcome {
    let profile = ProfileTable::builtin();
    let mut gaps = Vec::new();
    let mut infeasible = 0;
    for seed in 0..100u64 {
        let k = 1 + (seed % 3) as usize;
        let scn = gen_scenario(&profile, k, (1, 6 / k), seed).expect("scenario");
        assert!(scn.num_users() <= 3 && scn.total_subtasks() <= 6);
        let h = solve_heuristic(&scn, 100, seed).expect("heuristic");
        let o = solve_oracle(&scn, None).expect("oracle");
        if !validate_assignment(&scn, &h.assignment).expect("shape").is_empty() {
            infeasible += 1;
        }
        gaps.push((h.objective() - o.objective()) / o.objective());
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        mean <= GAP_MEAN_MAX && max <= GAP_MAX && infeasible == 0,
        format!("mean gap {mean:.4} <= {GAP_MEAN_MAX}, max gap {max:.4} <= {GAP_MAX}, infeasible {infeasible}"),
    )
}

fn baseline_dominance() -> Outcome {
    let profile = ProfileTable::builtin();
    let mut sums = [0.0; 4];
    for seed in 0..100u64 {
        let scn = gen_scenario(&profile, 5, (1, 5), 10_000 + seed).expect("scenario");
        sums[0] += solve_heuristic(&scn, 100, seed).expect("heuristic").objective();
        for (i, p) in Policy::ALL.iter().enumerate() {
            sums[i + 1] += solve_baseline(&scn, *p, seed).expect("baseline").objective();
        }
    }
    let means = sums.map(|s| s / 100.0);
    outcome(
        means[1..].iter().all(|&b| means[0] <= b),
        format!(
            "heuristic {:.4}s vs local {:.4}s, edge {:.4}s, random {:.4}s",
            means[0], means[1], means[2], means[3]
        ),
    )
}

fn bandwidth_trend() -> Outcome {
    let values = vec![5e6, 10e6, 15e6, 20e6, 25e6];
    let plan = ExperimentPlan {
        scenario: GeneratorConfig::default(),
        profile: None,
        sweep: Sweep::UplinkBandwidthHz { values: values.clone() },
        replications: 20,
        seed: 2024,
        policies: Policy::ALL.to_vec(),
        max_iter: 100,
        oracle_gap: false,
    };
    let result = run_experiment(&plan).expect("experiment");
    let labels = ["heuristic", "local", "edge", "random"];
    let mean = |v: f64, l: &str| result.row(v, l).and_then(|r| r.mean_completion_s).expect("row");
    let failed_runs: usize = result.rows.iter().map(|r| r.failed).sum();
    let monotone = labels
        .iter()
        .all(|l| values.windows(2).all(|w| mean(w[1], l) <= mean(w[0], l) + TREND_SLACK));
    let lowest = values.iter().all(|&v| labels[1..].iter().all(|l| mean(v, "heuristic") <= mean(v, l)));
    let best_baseline_5 = labels[1..].iter().map(|l| mean(5e6, l)).fold(f64::INFINITY, f64::min);
    let margin = best_baseline_5 - mean(5e6, "heuristic");
    let drift = revalidate(&plan, &result).expect("revalidate");
    let curve: Vec<String> = values.iter().map(|&v| format!("{:.3}", mean(v, "heuristic"))).collect();
    outcome(
        monotone && lowest && margin > 0.0 && failed_runs == 0 && drift <= 1e-9,
        format!(
            "monotone {monotone}, heuristic lowest {lowest}, 5 MHz margin {margin:.4}s, heuristic curve [{}], \
             stored-assignment drift {drift:.1e}",
            curve.join(", ")
        ),
    )
}

fn pruning_trend() -> Outcome {
    let thetas = vec![0.0, 0.1, 0.2, 0.3, 0.4];
    let cost = InferenceCostModel { base_denoise_s: 0.54, per_branch_s: 0.45, steps: 20, reference_steps: 20 };
    let corpus = CorpusConfig::default();
    let all_kept = cost.latency(corpus.conditions as f64);
    let plan = ExperimentPlan {
        scenario: GeneratorConfig::default(),
        profile: None,
        sweep: Sweep::Theta { values: thetas.clone(), corpus, cost, lambda: 0.2, delta: 0.6 },
        replications: 50,
        seed: 7,
        policies: vec![],
        max_iter: 100,
        oracle_gap: false,
    };
    let result = run_experiment(&plan).expect("experiment");
    let latency: Vec<f64> = thetas.iter().map(|&t| result.row(t, "scales").unwrap().predicted_latency_s.unwrap()).collect();
    let kept: Vec<f64> = thetas.iter().map(|&t| result.row(t, "scales").unwrap().mean_kept.unwrap()).collect();
    let exact_base = latency[0] == all_kept && (all_kept - 1.89).abs() < 1e-12;
    let latency_down = latency.windows(2).all(|w| w[1] <= w[0]);
    let kept_down = kept.windows(2).all(|w| w[1] <= w[0]);
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        exact_base && latency_down && kept_down && latency.last() < latency.first(),
        format!("latency [{}] s, kept [{}], theta=0 equals base {exact_base}", fmt(&latency), fmt(&kept)),
    )
}

// Naive references for the estimator, written directly from the formulas.

fn ref_intensity(t: &FeatureTensor) -> Vec<Vec<f64>> {
    let (p, h, w) = (t.channels(), t.height(), t.width());
    let mut a = vec![vec![0.0; w]; h];
    let mut max: f64 = 0.0;
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for c in 0..p {
                s += t.get(c, i, j) * t.get(c, i, j);
            }
            a[i][j] = s / p as f64;
            max = max.max(a[i][j]);
        }
    }
    if max > 0.0 {
        for row in &mut a {
            for v in row {
                *v /= max;
            }
        }
    }
    a
}

fn ref_effectiveness(t: &FeatureTensor, a: &[Vec<f64>]) -> f64 {
    let (p, h, w) = (t.channels(), t.height(), t.width());
    let mut total = 0.0;
    for c in 0..p {
        let mut mean = 0.0;
        for i in 0..h {
            for j in 0..w {
                mean += t.get(c, i, j);
            }
        }
        mean /= (h * w) as f64;
        for i in 0..h {
            for j in 0..w {
                total += a[i][j] * (t.get(c, i, j) - mean) * (t.get(c, i, j) - mean);
            }
        }
    }
    total / p as f64
}

fn ref_uniqueness(ts: &[FeatureTensor], maps: &[Vec<Vec<f64>>], delta: f64) -> Vec<f64> {
    let n = ts.len();
    let mut vs = Vec::new();
    for (t, a) in ts.iter().zip(maps) {
        let mut v = vec![0.0; t.channels()];
        for (c, vc) in v.iter_mut().enumerate() {
            for i in 0..t.height() {
                for j in 0..t.width() {
                    *vc += a[i][j] * t.get(c, i, j);
                }
            }
        }
        vs.push(v);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = vec![0.0; n];
    if n == 1 {
        return u;
    }
    for j in 0..n {
        for m in 0..n {
            if m == j {
                continue;
            }
            let (nj, nm) = (norm(&vs[j]), norm(&vs[m]));
            let cos = if nj == 0.0 || nm == 0.0 {
                0.0
            } else {
                vs[j].iter().zip(&vs[m]).map(|(x, y)| x * y).sum::<f64>() / (nj * nm)
            };
            u[j] -= f64::max(0.0, cos - delta);
        }
        u[j] /= (n - 1) as f64;
    }
    u
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ESTIMATOR_ABS_FLOOR.max(ESTIMATOR_REL_TOL * b.abs())
}

fn estimator_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let delta = 0.6;
    for _ in 0..50 {
        let (p, h, w) = (rng.random_range(1..=8), rng.random_range(1..=16), rng.random_range(1..=16));
        let j = rng.random_range(1..=5);
        let mut ts: Vec<FeatureTensor> = (0..j)
            .map(|id| {
                let data = (0..p * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
                FeatureTensor::new(id, p, h, w, data).unwrap()
            })
            .collect();
        // Force some overlap above the threshold.
        if j >= 2 && rng.random_bool(0.5) {
            let near: Vec<f64> = ts[0].data().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
            ts[1] = FeatureTensor::new(1, p, h, w, near).unwrap();
        }
        let maps: Vec<Vec<f64>> = ts.iter().map(intensity_map).collect();
        let refs: Vec<Vec<Vec<f64>>> = ts.iter().map(ref_intensity).collect();
        for (t, (got, want)) in ts.iter().zip(maps.iter().zip(&refs)) {
            for (g, r) in got.iter().zip(want.iter().flatten()) {
                mismatches += usize::from(!close(*g, *r));
            }
            let (e, er) = (effectiveness(t, got).unwrap(), ref_effectiveness(t, want));
            mismatches += usize::from(!close(e, er));
            worst = worst.max((e - er).abs() / er.abs().max(ESTIMATOR_ABS_FLOOR));
        }
        let u = uniqueness(&ts, &maps, delta).unwrap();
        for (g, r) in u.iter().zip(ref_uniqueness(&ts, &refs, delta)) {
            mismatches += usize::from(!close(*g, r));
            if r != 0.0 {
                worst = worst.max((g - r).abs() / r.abs());
            }
        }
    }
    // Identical pair: penalty is exactly -(1 - delta).
    let t = FeatureTensor::new(0, 2, 3, 3, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
    let m = intensity_map(&t);
    let dup = uniqueness(&[t.clone(), t], &[m.clone(), m], delta).unwrap();
    let exact = dup.iter().all(|&u| u == -(1.0 - delta));
    outcome(
        mismatches == 0 && exact,
        format!("50 sets, {mismatches} mismatches, worst relative error {worst:.1e}, duplicate penalty {dup:?}"),
    )
}

/// Mean completion time recomputed from the scenario fields alone.
fn ref_mean_completion(scn: &Scenario, a: &Assignment) -> f64 {
    let ch = scn.channel();
    let edge = scn.edge();
    let mut total = 0.0;
    for (k, u) in scn.users().iter().enumerate() {
        let bw = a.bandwidth_fraction[k] * ch.uplink_bandwidth_hz;
        let rate = (bw * (1.0 + u.tx_power_w * u.channel_gain / (bw * ch.noise_psd_w_per_hz)).log2()).max(1e-3);
        let (mut local_c, mut edge_c, mut up, mut back) = (0.0, 0.0, 0.0, 0.0);
        let mut sent = HashSet::new();
        for (s, &x) in u.subtasks.iter().zip(&a.offload[k]) {
            if x {
                edge_c += s.workload_flops / edge.compute_flops_per_s;
                if sent.insert(s.source_image_id.clone()) {
                    up += 8.0 * s.source_image_bytes / rate;
                }
            } else {
                local_c += s.workload_flops / u.compute_flops_per_s;
                back += 8.0 * s.output_bytes / rate;
            }
        }
        total += f64::max(local_c + back, edge_c + up);
    }
    total / scn.num_users() as f64
}

fn latency_properties() -> Outcome {
    let profile = ProfileTable::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sign_failures = 0;
    for i in 0..100u64 {
        let scn = gen_scenario(&profile, 1, (1, 1), i).unwrap();
        let ch = scn.channel();
        let u = &scn.users()[0];
        let y = rng.random_range(0.01..0.98);
        let d = 1e-3 * y;
        let (lo, mid, hi) = (
            uplink_rate(y - d, ch, u).unwrap(),
            uplink_rate(y, ch, u).unwrap(),
            uplink_rate(y + d, ch, u).unwrap(),
        );
        let scale = mid.abs();
        if hi - mid < -SIGN_TOL * scale || mid - lo < -SIGN_TOL * scale {
            sign_failures += 1;
        }
        if hi - 2.0 * mid + lo > SIGN_TOL * scale {
            sign_failures += 1;
        }
    }

    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let k = rng.random_range(1..=5);
        let scn = gen_scenario(&profile, k, (1, 5), 500 + i).unwrap();
        let offload = scn.users().iter().map(|u| u.subtasks.iter().map(|_| rng.random_bool(0.5)).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let bandwidth_fraction = raw.iter().map(|r| (r / sum).min(1.0 - 1e-6)).collect();
        let a = Assignment { offload, bandwidth_fraction };
        let got = evaluate(&scn, &a).unwrap().mean_completion_s;
        let want = ref_mean_completion(&scn, &a);
        worst = worst.max((got - want).abs() / want.abs());
    }
    outcome(
        sign_failures == 0 && worst <= EVAL_REL_TOL,
        format!("rate sign-test failures {sign_failures}/200, evaluate worst relative error {worst:.1e}"),
    )
}

fn determinism_and_performance() -> Outcome {
    let profile = ProfileTable::builtin();
    let scn = gen_scenario(&profile, 5, (1, 5), 77).unwrap();
    let same_scenario = scn.to_json() == gen_scenario(&profile, 5, (1, 5), 77).unwrap().to_json();
    let same_reports = [
        solve_heuristic(&scn, 100, 3).unwrap().to_json() == solve_heuristic(&scn, 100, 3).unwrap().to_json(),
        solve_baseline(&scn, Policy::Random, 9).unwrap().to_json()
            == solve_baseline(&scn, Policy::Random, 9).unwrap().to_json(),
    ]
    .iter()
    .all(|&b| b);

    let mut heuristic_worst: f64 = 0.0;
    for seed in 0..5u64 {
        let big = gen_scenario(&profile, 5, (5, 5), 300 + seed).unwrap();
        assert_eq!(big.total_subtasks(), 25);
        let t = Instant::now();
        solve_heuristic(&big, 100, seed).unwrap();
        heuristic_worst = heuristic_worst.max(t.elapsed().as_secs_f64());
    }

    let small = gen_scenario(&profile, 3, (2, 2), 41).unwrap();
    assert_eq!(small.total_subtasks(), 6);
    let t = Instant::now();
    solve_oracle(&small, None).unwrap();
    let oracle_time = t.elapsed().as_secs_f64();

    outcome(
        same_scenario && same_reports && heuristic_worst < HEURISTIC_TIME_S && oracle_time < ORACLE_TIME_S,
        format!(
            "byte-identical scenario {same_scenario} and reports {same_reports}, heuristic 5x25 worst \
             {heuristic_worst:.3}s < {HEURISTIC_TIME_S}s, oracle K=3 N=6 {oracle_time:.2}s < {ORACLE_TIME_S}s"
        ),
    )
}
