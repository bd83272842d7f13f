//! Reference policies: everything local, everything at the edge, and a
//! seeded random split. Each is repaired to feasibility and falls back to the
//! scenario's minimal-offload floor if repair fails.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::SolveError;
use crate::workload::{
    edge_load, exceeds, local_load, uniform_shares, validate_assignment, Assignment, Scenario,
    MIN_BANDWIDTH_FRACTION,
};

use super::{offload_gain, rate_at, Policy, SolveReport};

pub fn solve_baseline(scn: &Scenario, policy: Policy, seed: u64) -> Result<SolveReport, SolveError> {
    let mut a = match policy {
        Policy::Local => local_first(scn),
        Policy::Edge => edge_first(scn),
        Policy::Random => random_split(scn, seed),
    };
    if !validate_assignment(scn, &a)?.is_empty() {
        a.offload = scn.feasibility_floor().offload;
    }
    SolveReport::build(format!("baseline:{policy}"), Some(seed), scn, a, 1, Vec::new())
}

/// Everything local; users over budget spill their largest subtasks first.
fn local_first(scn: &Scenario) -> Assignment {
    let mut a = Assignment::all_local(scn);
    let mut edge_used = edge_load(scn, &a);
    for (u, x) in scn.users().iter().zip(a.offload.iter_mut()) {
        let mut order: Vec<usize> = (0..u.subtasks.len()).collect();
        // Stable sort keeps the lower index first among equal workloads.
        order.sort_by(|&i, &j| u.subtasks[j].workload_flops.total_cmp(&u.subtasks[i].workload_flops));
        for i in order {
            if !exceeds(local_load(u, x), u.compute_budget_flops) {
                break;
            }
            let w = u.subtasks[i].workload_flops;
            if !exceeds(edge_used + w, scn.edge().compute_budget_flops) {
                x[i] = true;
                edge_used += w;
            }
        }
    }
    a
}

/// Everything offloaded; while the edge is over budget, the subtask that
/// gains least from offloading comes back home (if its user has room).
fn edge_first(scn: &Scenario) -> Assignment {
    let mut a = Assignment::all_edge(scn);
    let budget = scn.edge().compute_budget_flops;
    while exceeds(edge_load(scn, &a), budget) {
        let mut pick: Option<(usize, usize, f64)> = None;
        for (k, u) in scn.users().iter().enumerate() {
            let rate = rate_at(a.bandwidth_fraction[k], scn.channel(), u);
            let x = &a.offload[k];
            for i in 0..u.subtasks.len() {
                if !x[i] {
                    continue;
                }
                let room = local_load(u, x) + u.subtasks[i].workload_flops;
                if exceeds(room, u.compute_budget_flops) {
                    continue;
                }
                let gain = offload_gain(scn, u, x, i, rate);
                if pick.is_none_or(|(_, _, g)| gain < g) {
                    pick = Some((k, i, gain));
                }
            }
        }
        match pick {
            Some((k, i, _)) => a.offload[k][i] = false,
            None => break,
        }
    }
    a
}

/// Fair coin per subtask and Dirichlet(1) bandwidth shares, then repaired:
/// over-budget users offload in random order, and an over-budget edge sends
/// random subtasks back to users with room.
fn random_split(scn: &Scenario, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offload: Vec<Vec<bool>> = scn
        .users()
        .iter()
        .map(|u| (0..u.subtasks.len()).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let k_users = scn.num_users();
    let bandwidth_fraction = if k_users == 1 {
        uniform_shares(1)
    } else {
        let draws: Vec<f64> = (0..k_users).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let spread = 1.0 - k_users as f64 * MIN_BANDWIDTH_FRACTION;
        draws.iter().map(|d| MIN_BANDWIDTH_FRACTION + spread * d / total).collect()
    };
    let mut a = Assignment { offload, bandwidth_fraction };

    for (u, x) in scn.users().iter().zip(a.offload.iter_mut()) {
        let mut local: Vec<usize> = (0..x.len()).filter(|&i| !x[i]).collect();
        local.shuffle(&mut rng);
        for i in local {
            if !exceeds(local_load(u, x), u.compute_budget_flops) {
                break;
            }
            x[i] = true;
        }
    }

    let budget = scn.edge().compute_budget_flops;
    while exceeds(edge_load(scn, &a), budget) {
        let movable: Vec<(usize, usize)> = scn
            .users()
            .iter()
            .enumerate()
            .flat_map(|(k, u)| {
                let x = &a.offload[k];
                (0..x.len())
                    .filter(move |&i| {
                        x[i] && !exceeds(local_load(u, x) + u.subtasks[i].workload_flops, u.compute_budget_flops)
                    })
                    .map(move |i| (k, i))
            })
            .collect();
        if movable.is_empty() {
            break;
        }
        let (k, i) = movable[rng.random_range(0..movable.len())];
        a.offload[k][i] = false;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::fixtures::*;

    fn roomy() -> Scenario {
        Scenario::new(
            vec![
                user(0, 1e9, 1e12, vec![subtask(1, 2e9, "a", 2e5, 1e4), subtask(2, 3e9, "a", 2e5, 1e4)]),
                user(1, 4e9, 1e12, vec![subtask(1, 1e9, "b", 3e5, 5e4)]),
            ],
            edge(2e10, 1e13, 0.0),
            channel(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn ample_budgets_keep_pure_policies() {
        let scn = roomy();
        let local = solve_baseline(&scn, Policy::Local, 0).unwrap();
        assert_eq!(local.assignment.num_offloaded(), 0);
        let edge = solve_baseline(&scn, Policy::Edge, 0).unwrap();
        assert_eq!(edge.assignment.num_offloaded(), scn.total_subtasks());
        assert_eq!(edge.assignment.bandwidth_fraction, vec![0.5, 0.5]);
    }

    #[test]
    fn local_policy_spills_largest_first() {
        let scn = Scenario::new(
            vec![user(
                0,
                1e9,
                5e9,
                vec![subtask(1, 2e9, "a", 1.0, 1.0), subtask(2, 4e9, "b", 1.0, 1.0), subtask(3, 1e9, "c", 1.0, 1.0)],
            )],
            edge(1e10, 1e13, 0.0),
            channel(),
            1.0,
        )
        .unwrap();
        let r = solve_baseline(&scn, Policy::Local, 0).unwrap();
        assert_eq!(r.assignment.offload, vec![vec![false, true, false]]);
    }

    #[test]
    fn edge_policy_returns_work_when_edge_is_full() {
        // Edge fits only one of the two subtasks beside the reserve.
        let scn = Scenario::new(
            vec![user(0, 1e9, 1e12, vec![subtask(1, 2e9, "a", 1e5, 1e4), subtask(2, 2e9, "b", 1e5, 1e4)])],
            edge(1e10, 5e9, 2e9),
            channel(),
            1.0,
        )
        .unwrap();
        let r = solve_baseline(&scn, Policy::Edge, 0).unwrap();
        assert_eq!(r.assignment.num_offloaded(), 1);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn random_policy_is_seed_deterministic_and_feasible() {
        let scn = roomy();
        let a = solve_baseline(&scn, Policy::Random, 7).unwrap();
        let b = solve_baseline(&scn, Policy::Random, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.violations.is_empty());
        let y = &a.assignment.bandwidth_fraction;
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let differs = (0..20).any(|s| solve_baseline(&scn, Policy::Random, s).unwrap().assignment != a.assignment);
        assert!(differs);
    }
}
