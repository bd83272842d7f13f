//! Iterative offloading and bandwidth heuristic.
//!
//! Each round walks the users in ascending order. A user whose local path
//! lags its edge path by more than its average per-subtask latency (or whose
//! local budget is exceeded) offloads the subtask with the largest marginal
//! latency reduction. The user then takes the smallest bandwidth share that
//! meets the adaptive target `L_0`. If the shares fit in the band, leftover
//! bandwidth goes to communication-bound users in proportion to their weight
//! and `L_0` is tightened; otherwise `L_0` is relaxed. A candidate replaces
//! the incumbent only if it lowers the mean completion time.
//!
//! The loop decides offloading at whatever share a user holds at the time,
//! so the final incumbent is then polished: shares are re-split to equalise
//! marginal gains, and single flips or within-user swaps of offload bits are
//! applied while they help.

use crate::error::SolveError;
use crate::latency::UserLoad;
use crate::workload::{
    edge_load, exceeds, local_load, offloaded_load, validate_assignment, Assignment, Scenario,
    MIN_BANDWIDTH_FRACTION,
};

use super::rebalance::rebalance_shares;
use super::{completion_at, min_share_for_target, offload_gain, rate_at, SolveReport, TraceRow};

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicOptions {
    pub max_iter: usize,
    /// Stop after this many consecutive tighten/relax alternations of `L_0`.
    pub oscillation_limit: usize,
    pub offload_margin: OffloadMargin,
    /// Finish with bandwidth rebalancing and a flip/swap descent over the
    /// offload bits. The trace gets one extra row for this stage.
    pub polish: bool,
}

/// How far the local path must trail the edge path before a user offloads
/// another subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffloadMargin {
    /// The user's average per-subtask latency `L_k / N_k`.
    PerSubtask,
    /// Any lag at all.
    Zero,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            oscillation_limit: 5,
            offload_margin: OffloadMargin::PerSubtask,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TargetMove {
    Tighten,
    Relax,
}

/// Working state of the heuristic between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub current: Assignment,
    /// Communication-bottleneck weight per user from the last round.
    pub weights: Vec<f64>,
    pub latency_target_s: f64,
    pub best: Assignment,
    pub best_objective: f64,
    pub iteration: usize,
}

impl SolverState {
    fn new(scn: &Scenario) -> Result<Self, SolveError> {
        let current = Assignment::all_local(scn);
        // The starting point is the first incumbent when it is feasible;
        // otherwise the minimal-offload floor stands in.
        let best = if validate_assignment(scn, &current)?.is_empty() {
            current.clone()
        } else {
            scn.feasibility_floor()
        };
        let best_objective = crate::latency::objective(scn, &best)?;
        Ok(Self {
            current,
            weights: vec![0.0; scn.num_users()],
            latency_target_s: scn.latency_target_s(),
            best,
            best_objective,
            iteration: 0,
        })
    }
}

pub fn solve_heuristic(scn: &Scenario, max_iter: usize, seed: u64) -> Result<SolveReport, SolveError> {
    solve_heuristic_with(scn, &HeuristicOptions { max_iter, ..HeuristicOptions::default() }, seed)
}

/// The heuristic is deterministic; `seed` is only recorded in the report.
pub fn solve_heuristic_with(
    scn: &Scenario,
    opts: &HeuristicOptions,
    seed: u64,
) -> Result<SolveReport, SolveError> {
    let mut state = SolverState::new(scn)?;
    let mut trace = Vec::new();
    let mut last_move = None;
    let mut alternations = 0;
    let k_users = scn.num_users();
    let ch = scn.channel();

    let mut edge_used = scn.edge().main_task_reserve_flops
        + scn.users().iter().zip(&state.current.offload).map(|(u, x)| offloaded_load(u, x)).sum::<f64>();

    for iter in 1..=opts.max_iter {
        state.iteration = iter;
        let mut shares = vec![0.0; k_users];
        let mut completions = vec![0.0; k_users];

        for (k, u) in scn.users().iter().enumerate() {
            let x = &mut state.current.offload[k];
            let rate = rate_at(state.current.bandwidth_fraction[k], ch, u);
            let n = u.subtasks.len() as f64;
            loop {
                let load = UserLoad::new(u, Some(scn.edge()), x);
                let lu = load.local_completion(rate);
                let le = load.edge_completion(rate);
                let lk = lu.max(le);
                let over_budget = exceeds(local_load(u, x), u.compute_budget_flops);
                let margin = match opts.offload_margin {
                    OffloadMargin::PerSubtask => lk / n,
                    OffloadMargin::Zero => 0.0,
                };
                if !(lu - le > margin || over_budget) {
                    break;
                }
                let mut pick: Option<(usize, f64)> = None;
                for (i, s) in u.subtasks.iter().enumerate() {
                    if x[i] || exceeds(edge_used + s.workload_flops, scn.edge().compute_budget_flops) {
                        continue;
                    }
                    let gain = offload_gain(scn, u, x, i, rate);
                    if pick.is_none_or(|(_, g)| gain > g) {
                        pick = Some((i, gain));
                    }
                }
                match pick {
                    // Restoring the local budget overrides the positive-gain guard.
                    Some((i, gain)) if gain > 0.0 || over_budget => {
                        x[i] = true;
                        edge_used += u.subtasks[i].workload_flops;
                    }
                    _ => break,
                }
            }

            let load = UserLoad::new(u, Some(scn.edge()), x);
            shares[k] = min_share_for_target(&load, state.latency_target_s, ch, u);
            let rate = rate_at(shares[k], ch, u);
            let lk = load.completion(rate);
            completions[k] = lk;
            state.weights[k] = (load.edge_completion(rate) - load.local_completion(rate)).max(0.0) * lk;
        }

        let sum_y: f64 = shares.iter().sum();
        let step = scn
            .users()
            .iter()
            .zip(&completions)
            .map(|(u, lk)| lk / u.subtasks.len() as f64)
            .fold(f64::INFINITY, f64::min);

        let this_move = if sum_y <= 1.0 {
            let candidate = redistribute_surplus(&shares, &state.weights);
            state.latency_target_s -= step;
            let trial = Assignment { offload: state.current.offload.clone(), bandwidth_fraction: candidate };
            if validate_assignment(scn, &trial)?.is_empty() {
                let objective = crate::latency::objective(scn, &trial)?;
                if objective < state.best_objective {
                    state.best = trial.clone();
                    state.best_objective = objective;
                }
            }
            state.current.bandwidth_fraction = trial.bandwidth_fraction;
            TargetMove::Tighten
        } else {
            state.latency_target_s += step;
            state.current.bandwidth_fraction =
                shares.iter().map(|y| (y / sum_y).max(MIN_BANDWIDTH_FRACTION)).collect();
            TargetMove::Relax
        };

        trace.push(TraceRow {
            iter,
            objective_s: state.best_objective,
            l0_s: state.latency_target_s,
            sum_y,
        });

        match last_move {
            Some(prev) if prev != this_move => alternations += 1,
            _ => alternations = 0,
        }
        last_move = Some(this_move);
        if alternations >= opts.oscillation_limit {
            break;
        }
    }

    if opts.polish {
        polish(scn, &mut state.best)?;
        state.best_objective = crate::latency::objective(scn, &state.best)?;
        trace.push(TraceRow {
            iter: trace.len() + 1,
            objective_s: state.best_objective,
            l0_s: state.latency_target_s,
            sum_y: state.best.bandwidth_fraction.iter().sum(),
        });
    }
    SolveReport::build("heuristic", Some(seed), scn, state.best, state.iteration, trace)
}

/// Local improvement of a feasible assignment: rebalance bandwidth for the
/// current offload bits, then repeatedly apply the single-bit flip or
/// within-user swap that most lowers the mean completion time, rebalancing
/// after each candidate move.
#[allow(clippy::type_complexity)]
fn polish(scn: &Scenario, a: &mut Assignment) -> Result<(), SolveError> {
    let users = scn.users();
    let edge = scn.edge();
    let score = |offload: &[Vec<bool>]| -> (f64, Vec<f64>) {
        let loads: Vec<UserLoad> = users.iter().zip(offload).map(|(u, x)| UserLoad::new(u, Some(edge), x)).collect();
        let y = rebalance_shares(users, &loads, scn.channel());
        let total: f64 = users
            .iter()
            .zip(&loads)
            .zip(&y)
            .map(|((u, load), &yk)| completion_at(load, yk, scn.channel(), u))
            .sum();
        (total / users.len() as f64, y)
    };

    let mut best = crate::latency::objective(scn, a)?;
    let (value, y) = score(&a.offload);
    if value < best {
        best = value;
        a.bandwidth_fraction = y;
    }
    loop {
        let edge_used = edge_load(scn, a);
        // (flips, objective, shares) of the best move so far.
        let mut pick: Option<(Vec<(usize, usize)>, f64, Vec<f64>)> = None;
        for (k, u) in users.iter().enumerate() {
            let n = u.subtasks.len();
            let local_used = local_load(u, &a.offload[k]);
            // Single flips, then swaps of one offloaded and one local subtask.
            let x = a.offload[k].clone();
            let singles = (0..n).map(|i| vec![(k, i)]);
            let swaps = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| x[i] && !x[j])
                .map(|(i, j)| vec![(k, i), (k, j)]);
            let moves: Vec<Vec<(usize, usize)>> = singles.chain(swaps).collect();
            for flips in moves {
                let mut to_edge = 0.0;
                for &(_, i) in &flips {
                    let w = u.subtasks[i].workload_flops;
                    to_edge += if a.offload[k][i] { -w } else { w };
                }
                if exceeds(edge_used + to_edge, edge.compute_budget_flops)
                    || exceeds(local_used - to_edge, u.compute_budget_flops)
                {
                    continue;
                }
                flip(&mut a.offload, &flips);
                let (value, y) = score(&a.offload);
                flip(&mut a.offload, &flips);
                let current_best = pick.as_ref().map_or(best, |p| p.1);
                if value < current_best - 1e-12 * current_best {
                    pick = Some((flips, value, y));
                }
            }
        }
        let Some((flips, value, y)) = pick else { break };
        flip(&mut a.offload, &flips);
        a.bandwidth_fraction = y;
        best = value;
    }
    Ok(())
}

fn flip(offload: &mut [Vec<bool>], flips: &[(usize, usize)]) {
    for &(k, i) in flips {
        offload[k][i] = !offload[k][i];
    }
}

/// Hands `1 - Σy` to users in proportion to their weights (uniformly when
/// every weight is zero).
fn redistribute_surplus(shares: &[f64], weights: &[f64]) -> Vec<f64> {
    let surplus = (1.0 - shares.iter().sum::<f64>()).max(0.0);
    let total_weight: f64 = weights.iter().sum();
    let k = shares.len() as f64;
    shares
        .iter()
        .zip(weights)
        .map(|(&y, &w)| {
            let extra = if total_weight > 0.0 { surplus * w / total_weight } else { surplus / k };
            (y + extra).min(1.0 - MIN_BANDWIDTH_FRACTION)
        })
        .collect()
}
