//! Independent brute-force ground truth: exhaustive enumeration, exact best
//! responses by backward induction, opponent-grid searches and the zero-sum
//! total-value check. These run against the same tree structures as the
//! solvers but never share their value recursions.

use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{EvalMode, Game, HistoryTree, MixedAction, ORACLE_LEAF_CAP};
use crate::oneshot::simplex_grid;
use crate::strategy::{ProfilePolicy, TreeProfile};

/// Exact distribution over full-horizon histories under a profile.
#[derive(Clone, Debug, Serialize)]
pub struct EnumerationTable {
    pub rows: Vec<EnumRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumRow {
    pub node: usize,
    pub key: String,
    pub prob: f64,
    pub payoffs: Vec<f64>,
}

impl EnumerationTable {
    pub fn total_probability(&self) -> f64 {
        self.rows.iter().map(|r| r.prob).sum()
    }

    pub fn expected_payoffs(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for row in &self.rows {
            for i in 0..n {
                out[i] += row.prob * row.payoffs[i];
            }
        }
        out
    }
}

/// Enumerate the exact leaf distribution of the subtree at `from` under a
/// profile. Leaf payoffs are evaluated exactly.
pub fn enumerate(
    game: &Game,
    tree: &HistoryTree,
    policy: &dyn ProfilePolicy,
    from: usize,
) -> Result<EnumerationTable> {
    let sub = tree.subtree(from);
    let leaves = sub.iter().filter(|&&u| tree.is_leaf(u)).count();
    if leaves > ORACLE_LEAF_CAP {
        return Err(GameError::CapExceeded { count: leaves, cap: ORACLE_LEAF_CAP });
    }
    let mut prob = vec![0.0f64; tree.len()];
    prob[from] = 1.0;
    let mut rows = Vec::new();
    for &u in &sub {
        if prob[u] == 0.0 {
            continue;
        }
        if tree.is_leaf(u) {
            let payoffs = game.payoff_eval(tree.history(u), EvalMode::Exact)?.values;
            rows.push(EnumRow { node: u, key: tree.history(u).key(), prob: prob[u], payoffs });
            continue;
        }
        let mix = policy.mixed_profile(game, tree.history(u))?;
        for &(p, s2, child) in tree.children(u) {
            let acts = game.profile_actions(p);
            let w: f64 = acts.iter().enumerate().map(|(i, &a)| mix[i].prob(a)).product();
            if w > 0.0 {
                prob[child] += prob[u] * w * game.transition_row(tree.state(u), p)[s2];
            }
        }
    }
    Ok(EnumerationTable { rows })
}

/// Expected continuation payoff `E_{h,policy}[f]` at every node of the tree,
/// indexed `[player][node]`. Exact for finite-horizon payoffs.
pub fn continuation_values(
    game: &Game,
    tree: &HistoryTree,
    policy: &dyn ProfilePolicy,
) -> Result<Vec<Vec<f64>>> {
    let num = game.num_players();
    let mut vals = vec![vec![0.0; tree.len()]; num];
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            let out = game.payoff_eval(tree.history(node), EvalMode::Exact)?;
            for i in 0..num {
                vals[i][node] = out.values[i];
            }
            continue;
        }
        let mix = policy.mixed_profile(game, tree.history(node))?;
        for &(p, s2, child) in tree.children(node) {
            let acts = game.profile_actions(p);
            let w: f64 = acts.iter().enumerate().map(|(i, &a)| mix[i].prob(a)).product();
            if w > 0.0 {
                let tpr = game.transition_row(tree.state(node), p)[s2];
                for i in 0..num {
                    vals[i][node] += w * tpr * vals[i][child];
                }
            }
        }
    }
    Ok(vals)
}

/// Exact expected payoff of a profile from a node.
pub fn expected_payoff(
    game: &Game,
    tree: &HistoryTree,
    policy: &dyn ProfilePolicy,
    from: usize,
) -> Result<Vec<f64>> {
    let n = game.num_players();
    Ok(enumerate(game, tree, policy, from)?.expected_payoffs(n))
}

/// Exact best response of player `i` against a fixed environment, by backward
/// induction; the optimal strategy is pure, ties broken lexicographically.
pub fn best_response_value(
    game: &Game,
    tree: &HistoryTree,
    environment: &dyn ProfilePolicy,
    i: usize,
    from: usize,
) -> Result<(f64, TreeProfile)> {
    let mut val = vec![0.0f64; tree.len()];
    let mut strat = TreeProfile::new(tree);
    let sub = tree.subtree(from);
    for &node in sub.iter().rev() {
        if tree.is_leaf(node) {
            val[node] = game.payoff_eval(tree.history(node), EvalMode::Exact)?.values[i];
            continue;
        }
        let mix = environment.mixed_profile(game, tree.history(node))?;
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0usize;
        for a in 0..game.num_actions(i) {
            let mut v = 0.0;
            for &(p, s2, child) in tree.children(node) {
                let acts = game.profile_actions(p);
                if acts[i] != a {
                    continue;
                }
                let w: f64 = acts
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, &aj)| mix[j].prob(aj))
                    .product();
                if w > 0.0 {
                    v += w * game.transition_row(tree.state(node), p)[s2] * val[child];
                }
            }
            if v > best + 1e-15 {
                best = v;
                best_a = a;
            }
        }
        val[node] = best;
        let mut full: Vec<MixedAction> = mix;
        full[i] = MixedAction::pure(game.num_actions(i), best_a);
        strat.set(node, full);
    }
    Ok((val[from], strat))
}

/// Best-response gains of every player against a profile: a profile is an
/// eps-equilibrium at `from` iff all gains are at most eps (plus tolerance).
pub fn equilibrium_check(
    game: &Game,
    tree: &HistoryTree,
    policy: &dyn ProfilePolicy,
    from: usize,
) -> Result<Vec<f64>> {
    let n = game.num_players();
    let base = expected_payoff(game, tree, policy, from)?;
    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        let (br, _) = best_response_value(game, tree, policy, i, from)?;
        gains.push(br - base[i]);
    }
    Ok(gains)
}

/// Exhaustive enumeration of player `i`'s pure tabular strategies on the
/// subtree; the oracle-of-the-oracle for `best_response_value` on micro
/// instances. Errs when the strategy space exceeds the cap.
pub fn brute_force_best_response(
    game: &Game,
    tree: &HistoryTree,
    environment: &dyn ProfilePolicy,
    i: usize,
    from: usize,
    cap: usize,
) -> Result<f64> {
    let decision_nodes: Vec<usize> = tree
        .subtree(from)
        .into_iter()
        .filter(|&u| !tree.is_leaf(u))
        .collect();
    let k = game.num_actions(i);
    let count = (k as f64).powi(decision_nodes.len() as i32);
    if count > cap as f64 {
        return Err(GameError::CapExceeded { count: count as usize, cap });
    }
    let mut best = f64::NEG_INFINITY;
    let total = k.pow(decision_nodes.len() as u32);
    for assignment in 0..total {
        let mut profile = TreeProfile::new(tree);
        let mut rem = assignment;
        for &node in &decision_nodes {
            let a = rem % k;
            rem /= k;
            let mut mix = environment.mixed_profile(game, tree.history(node))?;
            mix[i] = MixedAction::pure(k, a);
            profile.set(node, mix);
        }
        let bound = crate::strategy::BoundTreeProfile { tree, profile: &profile };
        let v = expected_payoff(game, tree, &bound, from)?[i];
        best = best.max(v);
    }
    Ok(best)
}

/// Upper bound on player `i`'s independent-opponent minmax value by grid
/// search over opponent behavior strategies, applied per stage from the back.
/// Refining the resolution never increases the bound.
pub fn grid_minmax(
    game: &Game,
    tree: &HistoryTree,
    i: usize,
    resolution: usize,
) -> Result<Vec<f64>> {
    let n = game.num_players();
    if n > 3 || (0..n).any(|j| game.num_actions(j) > 2) || tree.depth() > 3 {
        return Err(GameError::Invalid(
            "grid_minmax oracle is restricted to tiny instances".into(),
        ));
    }
    let opponents: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let grids: Vec<Vec<Vec<f64>>> = opponents
        .iter()
        .map(|&j| simplex_grid(game.num_actions(j), resolution))
        .collect();
    let mut val = vec![0.0f64; tree.len()];
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            val[node] = game.payoff_eval(tree.history(node), EvalMode::Exact)?.values[i];
            continue;
        }
        // min over opponent grid points of max over i's pure actions
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; opponents.len()];
        loop {
            let mixes: Vec<MixedAction> = idx
                .iter()
                .enumerate()
                .map(|(kk, &t)| MixedAction::new(grids[kk][t].clone()).unwrap())
                .collect();
            let mut worst_for_opp = f64::NEG_INFINITY;
            for a in 0..game.num_actions(i) {
                let mut v = 0.0;
                for &(p, s2, child) in tree.children(node) {
                    let acts = game.profile_actions(p);
                    if acts[i] != a {
                        continue;
                    }
                    let w: f64 = opponents
                        .iter()
                        .enumerate()
                        .map(|(kk, &j)| mixes[kk].prob(acts[j]))
                        .product();
                    if w > 0.0 {
                        v += w * game.transition_row(tree.state(node), p)[s2] * val[child];
                    }
                }
                worst_for_opp = worst_for_opp.max(v);
            }
            best = best.min(worst_for_opp);
            // advance grid index
            let mut kk = opponents.len();
            let mut done = true;
            while kk > 0 {
                kk -= 1;
                idx[kk] += 1;
                if idx[kk] < grids[kk].len() {
                    done = false;
                    break;
                }
                idx[kk] = 0;
            }
            if done {
                break;
            }
        }
        val[node] = best;
    }
    Ok(val)
}

/// Report of the zero-sum-total check.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroSumReport {
    pub certified_zero_sum: bool,
    pub worst_run_sum: f64,
    pub witness: Option<String>,
    pub minmax_sum_denormalized: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Certify that the denormalized payoffs sum to zero on every full-horizon
/// history, then check that the players' minmax values cannot all be
/// strictly positive: their sum stays within tolerance of zero.
pub fn zero_sum_total_check(
    game: &Game,
    tree: &HistoryTree,
    table: &crate::values::ValueTable,
    tol_per_player: f64,
) -> Result<ZeroSumReport> {
    let n = game.num_players();
    let mut worst = 0.0f64;
    let mut witness = None;
    for node in tree.node_ids() {
        if !tree.is_leaf(node) {
            continue;
        }
        let vals = game.payoff_eval(tree.history(node), EvalMode::Exact)?.values;
        let raw = game.denormalize(&vals);
        let sum: f64 = raw.iter().sum();
        if sum.abs() > worst {
            worst = sum.abs();
            witness = Some(tree.history(node).key());
        }
    }
    let certified = worst <= 1e-9;
    if !certified {
        return Ok(ZeroSumReport {
            certified_zero_sum: false,
            worst_run_sum: worst,
            witness,
            minmax_sum_denormalized: f64::NAN,
            bound: n as f64 * tol_per_player,
            pass: false,
        });
    }
    let root = tree.root();
    let sum: f64 = (0..n)
        .map(|i| game.payoff.norm[i].denormalize(table.minmax(i, root)))
        .sum();
    let bound = n as f64 * tol_per_player;
    Ok(ZeroSumReport {
        certified_zero_sum: true,
        worst_run_sum: worst,
        witness: None,
        minmax_sum_denormalized: sum,
        bound,
        pass: sum <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{History, PayoffKind};
    use crate::strategy::uniform_profile;

    fn uniform_2x2_one_stage() -> (Game, HistoryTree) {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into(), "b".into()], vec!["a".into(), "b".into()]],
            vec![
                vec![
                    vec![1.0, 0.0],
                    vec![0.0, 1.0],
                    vec![0.0, 1.0],
                    vec![1.0, 0.0],
                ],
                vec![vec![1.0, 0.0]; 4],
            ],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0; 4]; 2]; 2],
                terminal: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                table: None,
            },
            false,
        )
        .unwrap();
        let tree = HistoryTree::build(&g, History::root(0), 2, None).unwrap();
        (g, tree)
    }

    #[test]
    fn enumerate_uniform_has_quarter_each() {
        let (g, tree) = uniform_2x2_one_stage();
        let profile = uniform_profile(&g);
        let table = enumerate(&g, &tree, &profile, tree.root()).unwrap();
        assert_eq!(table.rows.len(), 4);
        for r in &table.rows {
            assert!((r.prob - 0.25).abs() < 1e-12);
        }
        assert!((table.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_profile_single_row() {
        let (g, tree) = uniform_2x2_one_stage();
        let mut tp = TreeProfile::new(&tree);
        tp.set(
            tree.root(),
            vec![MixedAction::pure(2, 0), MixedAction::pure(2, 1)],
        );
        let bound = crate::strategy::BoundTreeProfile { tree: &tree, profile: &tp };
        let table = enumerate(&g, &tree, &bound, tree.root()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!((table.rows[0].prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn best_response_beats_any_fixed_strategy() {
        let (g, tree) = uniform_2x2_one_stage();
        let profile = uniform_profile(&g);
        let (br, strat) = best_response_value(&g, &tree, &profile, 0, tree.root()).unwrap();
        // against uniform opponent, both actions give 0.5
        assert!((br - 0.5).abs() < 1e-12);
        let bound = crate::strategy::BoundTreeProfile { tree: &tree, profile: &strat };
        let v = expected_payoff(&g, &tree, &bound, tree.root()).unwrap()[0];
        assert!((v - br).abs() < 1e-12);
    }

    #[test]
    fn brute_force_matches_dp_best_response() {
        let (g, tree) = uniform_2x2_one_stage();
        let profile = uniform_profile(&g);
        let (br, _) = best_response_value(&g, &tree, &profile, 0, tree.root()).unwrap();
        let brute =
            brute_force_best_response(&g, &tree, &profile, 0, tree.root(), 100_000).unwrap();
        assert!((br - brute).abs() < 1e-12);
    }

    #[test]
    fn grid_minmax_matches_lp_for_two_players() {
        let (g, tree) = uniform_2x2_one_stage();
        let cfg = crate::oneshot::SolverConfig::default();
        let table = crate::values::values_finite_horizon(&g, &tree, &cfg).unwrap();
        let grid = grid_minmax(&g, &tree, 0, 64).unwrap();
        let root = tree.root();
        // grid upper bound must dominate the exact value and approach it
        assert!(grid[root] >= table.minmax(0, root) - 1e-9);
        assert!(grid[root] - table.minmax(0, root) < 1.0 / 32.0);
        // refining never increases the bound
        let coarse = grid_minmax(&g, &tree, 0, 1).unwrap();
        assert!(coarse[root] >= grid[root] - 1e-12);
    }

    #[test]
    fn zero_sum_check_accepts_and_rejects() {
        let (g, tree) = uniform_2x2_one_stage();
        // this game: p0 gets 1 on match, p1 gets 1 on mismatch; sum == 1, not zero-sum
        let cfg = crate::oneshot::SolverConfig::default();
        let table = crate::values::values_finite_horizon(&g, &tree, &cfg).unwrap();
        let rep = zero_sum_total_check(&g, &tree, &table, 1e-6).unwrap();
        assert!(!rep.certified_zero_sum);
        assert!(rep.witness.is_some());
    }
}
