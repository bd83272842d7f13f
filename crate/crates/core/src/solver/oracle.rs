//! Exhaustive reference solver for small instances.
//!
//! Every feasible offload vector is enumerated. For each one the bandwidth
//! split is optimised on an even grid over the simplex (exact min-plus
//! convolution of per-user latency tables), and the most promising vectors
//! are then polished by pairwise share exchanges. Per-user completion time
//! is convex and non-increasing in the share, so each exchange is a 1-D
//! convex line search.

use crate::error::SolveError;
use crate::latency::UserLoad;
use crate::workload::{exceeds, local_load, offloaded_load, Assignment, Scenario, MIN_BANDWIDTH_FRACTION};

use super::{completion_at, SolveReport};

pub const ORACLE_MAX_USERS: usize = 4;
pub const ORACLE_MAX_SUBTASKS: usize = 16;

/// Offload vectors whose grid optimum is within this factor of the best one
/// get the continuous polish.
const POLISH_WINDOW: f64 = 1.05;
const POLISH_MAX_CANDIDATES: usize = 64;
const POLISH_MAX_PASSES: usize = 200;

pub fn default_y_grid(k_users: usize) -> usize {
    match k_users {
        1 => 1,
        2 => 201,
        3 => 101,
        _ => 41,
    }
}

struct Pattern {
    bits: Vec<bool>,
    edge_flops: f64,
    load: UserLoad,
    /// Completion time at each grid share.
    table: Vec<f64>,
}

struct Candidate {
    patterns: Vec<usize>,
    grid_value: f64,
    grid_shares: Vec<usize>,
}

pub fn solve_oracle(scn: &Scenario, y_grid: Option<usize>) -> Result<SolveReport, SolveError> {
    let k_users = scn.num_users();
    let n_total = scn.total_subtasks();
    if k_users > ORACLE_MAX_USERS || n_total > ORACLE_MAX_SUBTASKS {
        return Err(SolveError::Refused(format!(
            "instance has {k_users} users and {n_total} subtasks; the oracle handles at most \
             {ORACLE_MAX_USERS} users and {ORACLE_MAX_SUBTASKS} subtasks"
        )));
    }
    let grid = y_grid.unwrap_or_else(|| default_y_grid(k_users));
    if k_users > 1 && grid < 2 {
        return Err(SolveError::Refused(format!("y grid of {grid} points cannot cover the simplex")));
    }
    let grid = if k_users == 1 { 1 } else { grid };
    let share_of = |i: usize| -> f64 {
        if k_users == 1 {
            1.0 - MIN_BANDWIDTH_FRACTION
        } else {
            MIN_BANDWIDTH_FRACTION + (1.0 - k_users as f64 * MIN_BANDWIDTH_FRACTION) * i as f64 / (grid - 1) as f64
        }
    };
    let shares: Vec<f64> = (0..grid).map(share_of).collect();

    let patterns: Vec<Vec<Pattern>> = scn
        .users()
        .iter()
        .map(|u| {
            let n = u.subtasks.len();
            (0u32..(1u32 << n))
                .map(|mask| (0..n).map(|i| mask & (1 << i) != 0).collect::<Vec<bool>>())
                .filter(|bits| !exceeds(local_load(u, bits), u.compute_budget_flops))
                .map(|bits| {
                    let load = UserLoad::new(u, Some(scn.edge()), &bits);
                    let table = shares.iter().map(|&y| completion_at(&load, y, scn.channel(), u)).collect();
                    Pattern { edge_flops: offloaded_load(u, &bits), bits, load, table }
                })
                .collect()
        })
        .collect();

    let mut search = Search {
        scn,
        patterns: &patterns,
        grid,
        chosen: Vec::with_capacity(k_users),
        candidates: Vec::new(),
    };
    search.descend(scn.edge().main_task_reserve_flops, None);
    let mut candidates = search.candidates;
    if candidates.is_empty() {
        return Err(SolveError::Infeasible("no offload vector satisfies the compute budgets".into()));
    }
    candidates.sort_by(|a, b| a.grid_value.total_cmp(&b.grid_value));
    let threshold = candidates[0].grid_value * POLISH_WINDOW;

    let mut best: Option<(f64, Assignment)> = None;
    for cand in candidates.iter().take(POLISH_MAX_CANDIDATES).filter(|c| c.grid_value <= threshold) {
        let loads: Vec<&UserLoad> = cand.patterns.iter().enumerate().map(|(k, &p)| &patterns[k][p].load).collect();
        let mut y: Vec<f64> = cand.grid_shares.iter().map(|&i| shares[i]).collect();
        if k_users > 1 {
            polish_shares(scn, &loads, &mut y);
        }
        let value: f64 = scn
            .users()
            .iter()
            .zip(&loads)
            .zip(&y)
            .map(|((u, load), &yk)| completion_at(load, yk, scn.channel(), u))
            .sum::<f64>()
            / k_users as f64;
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            let offload = cand.patterns.iter().enumerate().map(|(k, &p)| patterns[k][p].bits.clone()).collect();
            best = Some((value, Assignment { offload, bandwidth_fraction: y }));
        }
    }
    let (_, assignment) = best.expect("at least one candidate polished");
    SolveReport::build("oracle", None, scn, assignment, candidates.len(), Vec::new())
}

struct Search<'a> {
    scn: &'a Scenario,
    patterns: &'a [Vec<Pattern>],
    grid: usize,
    chosen: Vec<usize>,
    candidates: Vec<Candidate>,
}

/// Min-plus convolution table: `value[s]` is the least summed completion
/// time of the users so far when their grid indices add up to `s`, and
/// `arg[s]` the index given to the latest user.
#[derive(Clone)]
struct Prefix {
    value: Vec<f64>,
    arg: Vec<usize>,
    parent: Option<Box<Prefix>>,
}

impl Search<'_> {
    fn descend(&mut self, edge_used: f64, prefix: Option<&Prefix>) {
        let k = self.chosen.len();
        if k == self.patterns.len() {
            let prefix = prefix.expect("at least one user");
            self.record(prefix);
            return;
        }
        let last_user = k + 1 == self.patterns.len();
        for (p, pat) in self.patterns[k].iter().enumerate() {
            let used = edge_used + pat.edge_flops;
            if exceeds(used, self.scn.edge().compute_budget_flops) {
                continue;
            }
            let next = self.convolve(prefix, &pat.table, last_user);
            self.chosen.push(p);
            self.descend(used, Some(&next));
            self.chosen.pop();
        }
    }

    fn convolve(&self, prefix: Option<&Prefix>, table: &[f64], last_user: bool) -> Prefix {
        let total = self.grid - 1;
        match prefix {
            None => Prefix {
                value: table.to_vec(),
                arg: (0..self.grid).collect(),
                parent: None,
            },
            Some(prev) => {
                // The last user only needs the entry where the indices sum to the full grid.
                let range = if last_user { total..=total } else { 0..=total };
                let mut value = vec![f64::INFINITY; self.grid];
                let mut arg = vec![0; self.grid];
                for s in range {
                    for (i, &cost) in table.iter().enumerate().take(s + 1) {
                        let v = prev.value[s - i] + cost;
                        if v < value[s] {
                            value[s] = v;
                            arg[s] = i;
                        }
                    }
                }
                Prefix { value, arg, parent: Some(Box::new(prev.clone())) }
            }
        }
    }

    fn record(&mut self, prefix: &Prefix) {
        let k_users = self.patterns.len();
        let total = self.grid - 1;
        let grid_value = prefix.value[total] / k_users as f64;
        let mut grid_shares = vec![0; k_users];
        let mut node = Some(prefix);
        let mut s = total;
        for k in (0..k_users).rev() {
            let n = node.expect("one table per user");
            let i = n.arg[s];
            grid_shares[k] = i;
            s -= i;
            node = n.parent.as_deref();
        }
        self.candidates.push(Candidate { patterns: self.chosen.clone(), grid_value, grid_shares });
    }
}

/// Pairwise exchange of bandwidth between users until no exchange lowers the
/// summed completion time.
fn polish_shares(scn: &Scenario, loads: &[&UserLoad], y: &mut [f64]) {
    let users = scn.users();
    let ch = scn.channel();
    let f = |k: usize, yk: f64| completion_at(loads[k], yk, ch, &users[k]);
    let hi_share = 1.0 - MIN_BANDWIDTH_FRACTION;
    for _ in 0..POLISH_MAX_PASSES {
        let mut improved = 0.0;
        for a in 0..y.len() {
            for b in (a + 1)..y.len() {
                // Move t from b to a.
                let t_lo = (MIN_BANDWIDTH_FRACTION - y[a]).max(y[b] - hi_share);
                let t_hi = (hi_share - y[a]).min(y[b] - MIN_BANDWIDTH_FRACTION);
                if t_hi <= t_lo {
                    continue;
                }
                let phi = |t: f64| f(a, y[a] + t) + f(b, y[b] - t);
                let base = phi(0.0);
                let t = golden_min(phi, t_lo, t_hi);
                let v = phi(t);
                if v < base {
                    improved += base - v;
                    y[a] += t;
                    y[b] -= t;
                }
            }
        }
        if improved <= 1e-14 {
            break;
        }
    }
}

/// Minimiser of a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > 1e-13 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    // Endpoints matter when the optimum sits on the boundary.
    [lo, mid, hi].into_iter().min_by(|&a, &b| f(a).total_cmp(&f(b))).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::fixtures::*;

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let t = golden_min(|x| (x - 0.3) * (x - 0.3), -1.0, 1.0);
        assert!((t - 0.3).abs() < 1e-6);
        let t = golden_min(|x| x, 0.0, 1.0);
        assert!(t < 1e-9);
    }

    #[test]
    fn single_user_takes_full_band_and_enumerates() {
        let scn = Scenario::new(
            vec![user(0, 1e9, 1e12, vec![subtask(1, 2e9, "a", 1e5, 1e4), subtask(2, 5e9, "b", 1e5, 1e4)])],
            edge(2e10, 1e12, 0.0),
            channel(),
            1.0,
        )
        .unwrap();
        let r = solve_oracle(&scn, None).unwrap();
        assert_eq!(r.assignment.bandwidth_fraction, vec![1.0 - MIN_BANDWIDTH_FRACTION]);
        let mut best = f64::INFINITY;
        for mask in 0..4u32 {
            let x = vec![mask & 1 != 0, mask & 2 != 0];
            let a = Assignment { offload: vec![x], bandwidth_fraction: vec![1.0 - MIN_BANDWIDTH_FRACTION] };
            best = best.min(crate::latency::objective(&scn, &a).unwrap());
        }
        assert_eq!(r.objective(), best);
    }

    #[test]
    fn zero_local_budget_forces_all_edge() {
        let scn = Scenario::new(
            vec![
                user(0, 1e12, 0.0, vec![subtask(1, 2e9, "a", 1e6, 1e3), subtask(2, 5e9, "b", 1e6, 1e3)]),
                user(1, 1e12, 0.0, vec![subtask(1, 2e9, "a", 1e6, 1e3)]),
            ],
            edge(1e10, 1e12, 0.0),
            channel(),
            1.0,
        )
        .unwrap();
        let r = solve_oracle(&scn, None).unwrap();
        assert!(r.assignment.offload.iter().flatten().all(|&b| b));
    }

    #[test]
    fn refuses_large_instances() {
        let users = (0..5)
            .map(|k| user(k, 1e9, 1e12, vec![subtask(1, 1e9, "a", 1e5, 1e4)]))
            .collect();
        let scn = Scenario::new(users, edge(1e10, 1e12, 0.0), channel(), 1.0).unwrap();
        assert!(matches!(solve_oracle(&scn, None), Err(SolveError::Refused(_))));

        let subtasks = (0..17).map(|i| subtask(i, 1e9, "a", 1e5, 1e4)).collect();
        let scn = Scenario::new(vec![user(0, 1e9, 1e12, subtasks)], edge(1e10, 1e12, 0.0), channel(), 1.0).unwrap();
        assert!(matches!(solve_oracle(&scn, None), Err(SolveError::Refused(_))));
    }

    #[test]
    fn two_user_split_beats_grid_neighbours() {
        let scn = Scenario::new(
            vec![
                user(0, 1e9, 1e12, vec![subtask(1, 1e9, "a", 2e5, 1e5)]),
                user(1, 1e9, 1e12, vec![subtask(1, 1e9, "a", 2e5, 3e5)]),
            ],
            edge(1e10, 1e12, 0.0),
            channel(),
            1.0,
        )
        .unwrap();
        let r = solve_oracle(&scn, None).unwrap();
        let y = r.assignment.bandwidth_fraction.clone();
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for dy in [-1e-3, 1e-3] {
            let mut a = r.assignment.clone();
            a.bandwidth_fraction = vec![y[0] + dy, y[1] - dy];
            assert!(crate::latency::objective(&scn, &a).unwrap() >= r.objective() - 1e-15);
        }
    }
}
