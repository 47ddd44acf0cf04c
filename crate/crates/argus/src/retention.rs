//! Checkpoint retention planning.
//!
//! Rolling a node back re-executes everything between its nearest retained
//! snapshot and its own input, so which snapshots to keep under a budget is
//! an optimization problem. For a linear chain the objective
//!
//! ```text
//!   cost(S) = sum_i p_i * (re-execution cost from the nearest retained
//!             predecessor in S up to node i's input)
//! ```
//!
//! decomposes over the intervals between consecutive retained nodes, and
//! the interval weight satisfies the concave Monge condition, so each DP
//! layer can be filled by divide-and-conquer over split points:
//! O(B * n log n) total instead of O(B * n^2). General DAGs fall back to a
//! greedy pass that is documented as approximate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, WorkflowGraph};

/// Which node snapshots to keep. Indices are 1-based chain positions for
/// the chain planner and node ids for the DAG fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionPlan {
    pub retained: BTreeSet<usize>,
    pub expected_cost: f64,
}

fn check_inputs(costs: &[f64], probs: &[f64], budget: usize) -> Result<()> {
    if costs.len() != probs.len() {
        return Err(Error::Retention(format!(
            "costs ({}) and probabilities ({}) differ in length",
            costs.len(),
            probs.len()
        )));
    }
    if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Retention("re-execution costs must be finite and >= 0".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Retention("failure probabilities must lie in [0,1]".into()));
    }
    if budget == 0 && !costs.is_empty() {
        // A zero budget is representable (retain nothing) but almost always
        // a config mistake; allow it and let cost speak for itself.
    }
    Ok(())
}

/// Expected recovery cost of a concrete retained set on a chain. Nodes are
/// 1..=n; the workflow input acts as a free snapshot at position 0. Exposed
/// as the single source of truth for both the planner and its tests.
pub fn chain_recovery_cost(costs: &[f64], probs: &[f64], retained: &BTreeSet<usize>) -> f64 {
    let n = costs.len();
    // prefix[i] = c_1 + ... + c_i
    let mut prefix = vec![0.0f64; n + 1];
    for i in 1..=n {
        prefix[i] = prefix[i - 1] + costs[i - 1];
    }
    let mut total = 0.0;
    for i in 1..=n {
        let nearest = retained
            .range(..=i.saturating_sub(1))
            .next_back()
            .copied()
            .unwrap_or(0);
        total += probs[i - 1] * (prefix[i - 1] - prefix[nearest]);
    }
    total
}

/// Optimal retained set for a linear chain under a snapshot budget.
///
/// `force_frontier` pins the final node into the retained set (the live
/// frontier must always be recoverable in one step). Ties between equally
/// cheap sets resolve toward the earliest split points; callers comparing
/// against other optimizers should compare costs, not sets.
pub fn optimize_retention(
    costs: &[f64],
    probs: &[f64],
    budget: usize,
    force_frontier: bool,
) -> Result<RetentionPlan> {
    check_inputs(costs, probs, budget)?;
    let n = costs.len();
    if n == 0 {
        return Ok(RetentionPlan { retained: BTreeSet::new(), expected_cost: 0.0 });
    }
    if force_frontier && budget == 0 {
        return Err(Error::Retention("budget 0 cannot retain the frontier".into()));
    }
    let budget = budget.min(n);

    // Prefix machinery for O(1) interval weights:
    //   c_pre[i]  = sum of costs up to i
    //   p_pre[i]  = sum of probs up to i
    //   pc_pre[i] = sum over k<=i of p_k * c_pre[k-1]
    let mut c_pre = vec![0.0f64; n + 1];
    let mut p_pre = vec![0.0f64; n + 1];
    let mut pc_pre = vec![0.0f64; n + 1];
    for i in 1..=n {
        c_pre[i] = c_pre[i - 1] + costs[i - 1];
        p_pre[i] = p_pre[i - 1] + probs[i - 1];
        pc_pre[i] = pc_pre[i - 1] + probs[i - 1] * c_pre[i - 1];
    }
    // Recovery contribution of nodes (a, b] when the nearest retained
    // predecessor of all of them is a.
    let w = |a: usize, b: usize| -> f64 {
        (pc_pre[b] - pc_pre[a]) - c_pre[a] * (p_pre[b] - p_pre[a])
    };

    const UNSET: f64 = f64::INFINITY;
    // layer[j] = best cost of nodes 1..j with the last retained node at j,
    // using exactly `b` retained nodes. choice[b][j] = previous retained.
    let mut prev_layer = vec![UNSET; n + 1];
    let mut choice = vec![vec![0usize; n + 1]; budget + 1];
    let mut best: Option<(f64, usize, usize)> = None; // (cost, b, last)

    // b = 0: nothing retained.
    let empty_cost = w(0, n);
    if !force_frontier {
        best = Some((empty_cost, 0, 0));
    }

    for b in 1..=budget {
        let mut layer = vec![UNSET; n + 1];
        if b == 1 {
            for j in 1..=n {
                layer[j] = w(0, j);
                choice[1][j] = 0;
            }
        } else {
            // Monge structure makes the optimal previous split point
            // monotone in j; fill by divide and conquer.
            fill_layer(&prev_layer, &mut layer, &mut choice[b], b - 1, n, &w);
        }
        for j in b..=n {
            if layer[j] == UNSET {
                continue;
            }
            let total = layer[j] + w(j, n);
            let candidate_ok = !force_frontier || j == n;
            if candidate_ok {
                let better = match best {
                    None => true,
                    Some((cost, _, _)) => total < cost - 1e-15,
                };
                if better {
                    best = Some((total, b, j));
                }
            }
        }
        prev_layer = layer;
    }

    let (expected_cost, b_used, mut last) =
        best.ok_or_else(|| Error::Retention("no feasible retained set".into()))?;
    let mut retained = BTreeSet::new();
    let mut b = b_used;
    while b > 0 {
        retained.insert(last);
        last = choice[b][last];
        b -= 1;
    }

    Ok(RetentionPlan { retained, expected_cost })
}

/// Fill `layer[j] = min over a of prev[a] + w(a, j)` for j in 1..=n,
/// restricted to a >= min_prev (a must itself be a feasible last-retained
/// position for the previous layer). Divide and conquer over j with a
/// shrinking candidate window for a; valid because w is concave Monge.
fn fill_layer(
    prev: &[f64],
    layer: &mut [f64],
    choice: &mut [usize],
    min_prev: usize,
    n: usize,
    w: &dyn Fn(usize, usize) -> f64,
) {
    fn rec(
        prev: &[f64],
        layer: &mut [f64],
        choice: &mut [usize],
        lo: usize,
        hi: usize,
        a_lo: usize,
        a_hi: usize,
        w: &dyn Fn(usize, usize) -> f64,
    ) {
        if lo > hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let mut best = f64::INFINITY;
        let mut best_a = a_lo;
        for a in a_lo..=a_hi.min(mid.saturating_sub(1)) {
            if prev[a].is_infinite() {
                continue;
            }
            let v = prev[a] + w(a, mid);
            if v < best - 1e-15 {
                best = v;
                best_a = a;
            }
        }
        if best.is_finite() {
            layer[mid] = best;
            choice[mid] = best_a;
        }
        if mid > lo {
            rec(prev, layer, choice, lo, mid - 1, a_lo, best_a, w);
        }
        if mid < hi {
            rec(prev, layer, choice, mid + 1, hi, best_a, a_hi, w);
        }
    }
    rec(prev, layer, choice, min_prev + 1, n, min_prev, n - 1, w);
}

/// Exhaustive reference: every retained subset of size <= budget. Only
/// sensible for small n; the planner's tests and the acceptance suite use
/// it as the oracle.
pub fn brute_force_retention(
    costs: &[f64],
    probs: &[f64],
    budget: usize,
    force_frontier: bool,
) -> Result<RetentionPlan> {
    check_inputs(costs, probs, budget)?;
    let n = costs.len();
    if n > 20 {
        return Err(Error::Retention(format!("brute force capped at n=20, got {n}")));
    }
    if n == 0 {
        return Ok(RetentionPlan { retained: BTreeSet::new(), expected_cost: 0.0 });
    }
    if force_frontier && budget == 0 {
        return Err(Error::Retention("budget 0 cannot retain the frontier".into()));
    }

    let mut best: Option<RetentionPlan> = None;
    for mask in 0u32..(1 << n) {
        let count = mask.count_ones() as usize;
        if count > budget {
            continue;
        }
        if force_frontier && mask & (1 << (n - 1)) == 0 {
            continue;
        }
        let retained: BTreeSet<usize> =
            (1..=n).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        let cost = chain_recovery_cost(costs, probs, &retained);
        let better = match &best {
            None => true,
            Some(b) => cost < b.expected_cost - 1e-15,
        };
        if better {
            best = Some(RetentionPlan { retained, expected_cost: cost });
        }
    }
    best.ok_or_else(|| Error::Retention("no feasible retained set".into()))
}

/// Greedy retention for a general DAG: repeatedly retain the node whose
/// retention most reduces the evaluated expected recovery cost. Approximate
/// by construction; exact only when the DAG is a chain in disguise and the
/// greedy choices happen to coincide with the optimum.
pub fn optimize_retention_dag(
    graph: &WorkflowGraph,
    costs: &std::collections::BTreeMap<NodeId, f64>,
    probs: &std::collections::BTreeMap<NodeId, f64>,
    budget: usize,
    frontier: &BTreeSet<NodeId>,
) -> Result<(BTreeSet<NodeId>, f64)> {
    if frontier.len() > budget {
        return Err(Error::Retention(format!(
            "budget {budget} below frontier size {}",
            frontier.len()
        )));
    }
    let mut retained: BTreeSet<NodeId> = frontier.clone();
    let mut current = dag_recovery_cost(graph, costs, probs, &retained);
    loop {
        if retained.len() >= budget {
            break;
        }
        let mut best: Option<(f64, NodeId)> = None;
        for spec in graph.nodes() {
            if retained.contains(&spec.id) {
                continue;
            }
            let mut trial = retained.clone();
            trial.insert(spec.id.clone());
            let cost = dag_recovery_cost(graph, costs, probs, &trial);
            let better = match &best {
                None => cost < current - 1e-15,
                Some((c, _)) => cost < *c - 1e-15,
            };
            if better {
                best = Some((cost, spec.id.clone()));
            }
        }
        match best {
            Some((cost, node)) => {
                retained.insert(node);
                current = cost;
            }
            None => break,
        }
    }
    Ok((retained, current))
}

/// Expected recovery cost on a DAG: recovering node i re-executes every
/// unretained ancestor not screened off by a retained node on all paths.
pub fn dag_recovery_cost(
    graph: &WorkflowGraph,
    costs: &std::collections::BTreeMap<NodeId, f64>,
    probs: &std::collections::BTreeMap<NodeId, f64>,
    retained: &BTreeSet<NodeId>,
) -> f64 {
    let mut total = 0.0;
    for spec in graph.nodes() {
        let p = probs.get(&spec.id).copied().unwrap_or(0.0);
        if p == 0.0 {
            continue;
        }
        // Reverse reachability from the node's parents, stopping at
        // retained nodes: those are the executions a recovery re-runs.
        let mut to_visit: Vec<NodeId> = graph.parents(&spec.id);
        let mut visited: BTreeSet<NodeId> = BTreeSet::new();
        let mut rerun = 0.0;
        while let Some(a) = to_visit.pop() {
            if retained.contains(&a) || !visited.insert(a.clone()) {
                continue;
            }
            rerun += costs.get(&a).copied().unwrap_or(0.0);
            to_visit.extend(graph.parents(&a));
        }
        total += p * rerun;
    }
    total
}
