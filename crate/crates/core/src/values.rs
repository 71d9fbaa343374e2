//! Stochastic-game minmax and maxmin value tables.
//!
//! The coalition value against a jointly-randomizing adversary is exact (a
//! matrix-game LP) and serves as the canonical value and as the bracket lower
//! bound for the minmax against independent opponents; the bracket upper
//! bound comes from the best product profile found by descent plus grid
//! refinement. For two players the bracket collapses. The maxmin against
//! independent opponents is exact for any player count because the inner
//! minimum is attained at pure opponent profiles.

use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{EvalMode, Game, History, HistoryTree, MixedAction, PayoffKind};
use crate::lp::solve_matrix_game;
use crate::oneshot::{OneShotTensor, SolverConfig};

/// Per-stage arithmetic budget for certified recursions.
pub const STAGE_TOL: f64 = 1e-9;

/// Minmax/maxmin values per player at every node of a history tree.
#[derive(Clone, Debug, Serialize)]
pub struct ValueTable {
    pub depth: usize,
    pub tolerance: f64,
    pub bracket_certified: bool,
    pub max_bracket_width: f64,
    /// Exact coalition (correlated) minmax; canonical value `[player][node]`.
    pub minmax_lower: Vec<Vec<f64>>,
    /// Upper bound from the best independent opponent product profile.
    pub minmax_upper: Vec<Vec<f64>>,
    /// Exact maxmin (equals the coalition value at every node).
    pub maxmin: Vec<Vec<f64>>,
    /// Optimal mixed action of the maximizing player per node.
    #[serde(skip)]
    pub maxmin_strategy: Vec<Vec<Option<MixedAction>>>,
    /// Correlated coalition minimizer over joint opponent profiles per node.
    #[serde(skip)]
    pub coalition_correlated: Vec<Vec<Option<Vec<f64>>>>,
    /// Independent punisher product per node (opponents in player order).
    #[serde(skip)]
    pub coalition_product: Vec<Vec<Option<Vec<MixedAction>>>>,
}

impl ValueTable {
    fn empty(n: usize, nodes: usize, depth: usize) -> Self {
        Self {
            depth,
            tolerance: 0.0,
            bracket_certified: true,
            max_bracket_width: 0.0,
            minmax_lower: vec![vec![0.0; nodes]; n],
            minmax_upper: vec![vec![0.0; nodes]; n],
            maxmin: vec![vec![0.0; nodes]; n],
            maxmin_strategy: vec![vec![None; nodes]; n],
            coalition_correlated: vec![vec![None; nodes]; n],
            coalition_product: vec![vec![None; nodes]; n],
        }
    }

    /// Canonical scalar minmax value used by the synthesis chain.
    pub fn minmax(&self, player: usize, node: usize) -> f64 {
        self.minmax_lower[player][node]
    }

    pub fn width(&self, player: usize, node: usize) -> f64 {
        self.minmax_upper[player][node] - self.minmax_lower[player][node]
    }
}

/// Build the one-shot tensor at `node` from per-player child values.
pub fn tensor_from_values(
    game: &Game,
    tree: &HistoryTree,
    node: usize,
    values: &[Vec<f64>],
) -> OneShotTensor {
    let n = game.num_players();
    let np = game.num_profiles();
    let mut payoffs = vec![vec![0.0; np]; n];
    for &(p, s2, child) in tree.children(node) {
        let prob = game.transition_row(tree.state(node), p)[s2];
        for i in 0..n {
            payoffs[i][p] += prob * values[i][child];
        }
    }
    OneShotTensor {
        action_counts: (0..n).map(|i| game.num_actions(i)).collect(),
        payoffs,
        history_key: Some(tree.history(node).key()),
    }
}

/// Prefer the lexicographically-first pure action attaining the matrix-game
/// value; fall back to the LP strategy.
fn prefer_pure_row(matrix: &[Vec<f64>], value: f64, lp_row: Vec<f64>) -> MixedAction {
    for (a, row) in matrix.iter().enumerate() {
        let worst = row.iter().cloned().fold(f64::INFINITY, f64::min);
        if worst >= value - 1e-12 {
            return MixedAction::pure(matrix.len(), a);
        }
    }
    MixedAction::new(lp_row).expect("lp row strategy")
}

/// Exact finite-horizon backward induction over a tree built to stage T+1.
pub fn values_finite_horizon(
    game: &Game,
    tree: &HistoryTree,
    config: &SolverConfig,
) -> Result<ValueTable> {
    let n = game.num_players();
    let horizon = match &game.payoff.kind {
        PayoffKind::FiniteHorizon { horizon, .. } => *horizon,
        other => {
            return Err(GameError::Unsupported {
                class: other.class_name().into(),
                what: "finite-horizon backward induction".into(),
            })
        }
    };
    let root_stage = tree.stage(tree.root());
    let need = horizon + 1;
    if tree.depth() < need && root_stage < need {
        return Err(GameError::Invalid(format!(
            "tree depth {} shallower than horizon stage {need}",
            tree.depth()
        )));
    }
    let mut table = ValueTable::empty(n, tree.len(), tree.depth());
    let mut max_gap = 0.0f64;
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            let out = game.payoff_eval(tree.history(node), EvalMode::Exact)?;
            for i in 0..n {
                table.minmax_lower[i][node] = out.values[i];
                table.minmax_upper[i][node] = out.values[i];
                table.maxmin[i][node] = out.values[i];
            }
            continue;
        }
        let lo_tensor = tensor_from_values(game, tree, node, &table.minmax_lower);
        for i in 0..n {
            let (matrix, _) = lo_tensor.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            max_gap = max_gap.max(sol.duality_gap.abs());
            table.minmax_lower[i][node] = sol.value;
            table.maxmin[i][node] = sol.value;
            table.coalition_correlated[i][node] = Some(sol.col_strategy.clone());
            table.maxmin_strategy[i][node] =
                Some(prefer_pure_row(&matrix, sol.value, sol.row_strategy));
            if n == 2 {
                table.minmax_upper[i][node] = sol.value;
                table.coalition_product[i][node] =
                    Some(vec![MixedAction::new(sol.col_strategy.clone())?]);
            }
        }
        if n > 2 {
            // a reduced search budget keeps the recursion fast; the achieved
            // value of the returned product profile is an upper bound either way
            let inner = SolverConfig {
                grid_resolution: config.grid_resolution.min(12),
                multistart: config.multistart.min(4),
                ..config.clone()
            };
            let up_tensor = tensor_from_values(game, tree, node, &table.minmax_upper);
            for i in 0..n {
                let res = crate::oneshot::minmax_vs_independent(&up_tensor, i, &inner)?;
                let product = res.coalition_product.clone().expect("product bound");
                let opponents: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let achieved =
                    crate::oneshot::product_response_value(&up_tensor, i, &opponents, &product);
                table.minmax_upper[i][node] = achieved;
                table.coalition_product[i][node] = Some(product);
            }
        }
        for i in 0..n {
            let w = table.width(i, node);
            table.max_bracket_width = table.max_bracket_width.max(w);
        }
    }
    table.tolerance = (tree.depth() as f64) * STAGE_TOL.max(max_gap);
    table.bracket_certified = table.max_bracket_width <= config.certification_tol;
    Ok(table)
}

// ---------------------------------------------------------------------------
// State-indexed values for discounted and reachability payoffs
// ---------------------------------------------------------------------------

/// Stationary values per player and state with a certified error bound.
#[derive(Clone, Debug, Serialize)]
pub struct StateValueTable {
    pub lo: Vec<Vec<f64>>, // [player][state]
    pub up: Vec<Vec<f64>>,
    pub error_bound: f64,
    pub iterations: usize,
    /// One-sided approximation: values iterate downward from above, so the
    /// true value lies in `[v - error_bound, v]`.
    pub from_above: bool,
    #[serde(skip)]
    pub maxmin_strategy: Vec<Vec<MixedAction>>, // [player][state]
    #[serde(skip)]
    pub punisher_correlated: Vec<Vec<Vec<f64>>>, // [player][state] joint q
    #[serde(skip)]
    pub punisher_product: Vec<Vec<Option<Vec<MixedAction>>>>,
}

fn stage_tensor_discounted(
    game: &Game,
    rewards: &[Vec<Vec<f64>>],
    discount: f64,
    state: usize,
    cont: &[Vec<f64>],
) -> OneShotTensor {
    let n = game.num_players();
    let np = game.num_profiles();
    let mut payoffs = vec![vec![0.0; np]; n];
    for p in 0..np {
        for i in 0..n {
            let mut v = (1.0 - discount) * rewards[i][state][p];
            for (s2, pr) in game.successors(state, p) {
                v += discount * pr * cont[i][s2];
            }
            payoffs[i][p] = v;
        }
    }
    OneShotTensor {
        action_counts: (0..n).map(|i| game.num_actions(i)).collect(),
        payoffs,
        history_key: None,
    }
}

/// Value iteration for the discounted payoff, initialized at 1 so the
/// iterates approach the value from above. Stops when the contraction bound
/// certifies `error_bound <= target`, erring if the budget runs out first.
pub fn values_discounted(
    game: &Game,
    config: &SolverConfig,
    target: f64,
    max_iters: usize,
) -> Result<StateValueTable> {
    let (rewards, discount) = match &game.payoff.kind {
        PayoffKind::Discounted { rewards, discount } => (rewards, *discount),
        other => {
            return Err(GameError::Unsupported {
                class: other.class_name().into(),
                what: "discounted value iteration".into(),
            })
        }
    };
    let n = game.num_players();
    let ns = game.num_states();
    let mut lo = vec![vec![1.0; ns]; n];
    let mut up = vec![vec![1.0; ns]; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iters {
        iterations += 1;
        let mut new_lo = vec![vec![0.0; ns]; n];
        let mut new_up = vec![vec![0.0; ns]; n];
        residual = 0.0f64;
        for s in 0..ns {
            let t_lo = stage_tensor_discounted(game, rewards, discount, s, &lo);
            for i in 0..n {
                let (matrix, _) = t_lo.coalition_matrix(i);
                let sol = solve_matrix_game(&matrix)?;
                new_lo[i][s] = sol.value;
                residual = residual.max((new_lo[i][s] - lo[i][s]).abs());
            }
            if n == 2 {
                for i in 0..n {
                    new_up[i][s] = new_lo[i][s];
                }
            } else {
                let t_up = stage_tensor_discounted(game, rewards, discount, s, &up);
                for i in 0..n {
                    let res = crate::oneshot::minmax_vs_independent(&t_up, i, config)?;
                    new_up[i][s] = res.upper;
                    residual = residual.max((new_up[i][s] - up[i][s]).abs());
                }
            }
        }
        lo = new_lo;
        up = new_up;
        let bound = residual * discount / (1.0 - discount);
        if bound <= target {
            break;
        }
    }
    let error_bound = residual * discount / (1.0 - discount);
    if error_bound > target {
        return Err(GameError::SolverFailure {
            context: format!("discounted value iteration ({iterations} iterations)"),
            best_residual: error_bound,
        });
    }
    // final strategies at the fixed point
    let mut maxmin_strategy = vec![Vec::new(); n];
    let mut punisher_correlated = vec![Vec::new(); n];
    let mut punisher_product = vec![vec![None; ns]; n];
    for s in 0..ns {
        let t_lo = stage_tensor_discounted(game, rewards, discount, s, &lo);
        for i in 0..n {
            let (matrix, _) = t_lo.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            maxmin_strategy[i].push(prefer_pure_row(&matrix, sol.value, sol.row_strategy));
            punisher_correlated[i].push(sol.col_strategy.clone());
            if n == 2 {
                punisher_product[i][s] = Some(vec![MixedAction::new(sol.col_strategy)?]);
            }
        }
        if n > 2 {
            let t_up = stage_tensor_discounted(game, rewards, discount, s, &up);
            for i in 0..n {
                let res = crate::oneshot::minmax_vs_independent(&t_up, i, config)?;
                punisher_product[i][s] = res.coalition_product;
            }
        }
    }
    Ok(StateValueTable {
        lo,
        up,
        error_bound,
        iterations,
        from_above: true,
        maxmin_strategy,
        punisher_correlated,
        punisher_product,
    })
}

/// Monotone fixed-point iteration for per-player reachability values on the
/// player-vs-coalition zero-sum reduction, iterated at least `10 |S|` times.
pub fn values_reachability(game: &Game, config: &SolverConfig) -> Result<StateValueTable> {
    let targets = match &game.payoff.kind {
        PayoffKind::Reachability { targets } => targets.clone(),
        other => {
            return Err(GameError::Unsupported {
                class: other.class_name().into(),
                what: "reachability fixed point".into(),
            })
        }
    };
    let n = game.num_players();
    let ns = game.num_states();
    let np = game.num_profiles();
    let iters = (10 * ns).max(100);
    let mut lo = vec![vec![0.0; ns]; n];
    let mut up = vec![vec![0.0; ns]; n];
    for i in 0..n {
        for &s in &targets[i] {
            lo[i][s] = 1.0;
            up[i][s] = 1.0;
        }
    }
    let tensor_at = |state: usize, cont: &Vec<Vec<f64>>, i: usize| -> OneShotTensor {
        let mut payoffs = vec![vec![0.0; np]; n];
        for p in 0..np {
            let mut v = 0.0;
            for (s2, pr) in game.successors(state, p) {
                v += pr * cont[i][s2];
            }
            payoffs[i][p] = v;
        }
        OneShotTensor {
            action_counts: (0..n).map(|j| game.num_actions(j)).collect(),
            payoffs,
            history_key: None,
        }
    };
    let mut residual = 0.0f64;
    let mut iterations = 0;
    for it in 0..iters {
        iterations = it + 1;
        residual = 0.0;
        let mut new_lo = lo.clone();
        let mut new_up = up.clone();
        for i in 0..n {
            for s in 0..ns {
                if targets[i].contains(&s) {
                    continue;
                }
                let t = tensor_at(s, &lo, i);
                let (matrix, _) = t.coalition_matrix(i);
                let sol = solve_matrix_game(&matrix)?;
                new_lo[i][s] = sol.value;
                residual = residual.max((new_lo[i][s] - lo[i][s]).abs());
                if n == 2 {
                    new_up[i][s] = sol.value;
                } else {
                    let tu = tensor_at(s, &up, i);
                    let res = crate::oneshot::minmax_vs_independent(&tu, i, config)?;
                    new_up[i][s] = res.upper;
                    residual = residual.max((new_up[i][s] - up[i][s]).abs());
                }
            }
        }
        lo = new_lo;
        up = new_up;
        if residual < 1e-12 && it >= 10 * ns {
            break;
        }
    }
    let mut maxmin_strategy = vec![Vec::new(); n];
    let mut punisher_correlated = vec![Vec::new(); n];
    let mut punisher_product = vec![vec![None; ns]; n];
    for s in 0..ns {
        for i in 0..n {
            let t = tensor_at(s, &lo, i);
            let (matrix, _) = t.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            maxmin_strategy[i].push(prefer_pure_row(&matrix, sol.value, sol.row_strategy));
            punisher_correlated[i].push(sol.col_strategy.clone());
            if n == 2 {
                punisher_product[i][s] = Some(vec![MixedAction::new(sol.col_strategy)?]);
            } else {
                let tu = tensor_at(s, &up, i);
                let res = crate::oneshot::minmax_vs_independent(&tu, i, config)?;
                punisher_product[i][s] = res.coalition_product;
            }
        }
    }
    Ok(StateValueTable {
        lo,
        up,
        error_bound: residual,
        iterations,
        from_above: false,
        maxmin_strategy,
        punisher_correlated,
        punisher_product,
    })
}

/// Materialize state values onto a history tree, composing the prefix payoff.
pub fn materialize_state_values(
    game: &Game,
    tree: &HistoryTree,
    sv: &StateValueTable,
) -> Result<ValueTable> {
    let n = game.num_players();
    let mut table = ValueTable::empty(n, tree.len(), tree.depth());
    table.tolerance = sv.error_bound;
    for node in tree.node_ids() {
        let h = tree.history(node);
        let trunc = game.payoff_eval(h, EvalMode::Truncated)?;
        let weight = continuation_weight(game, h);
        for i in 0..n {
            let w = weight[i] * game.payoff.view_scale[i];
            table.minmax_lower[i][node] = trunc.values[i] + w * sv.lo[i][tree.state(node)];
            table.minmax_upper[i][node] = trunc.values[i] + w * sv.up[i][tree.state(node)];
            table.maxmin[i][node] = table.minmax_lower[i][node];
            let s = tree.state(node);
            table.maxmin_strategy[i][node] = Some(sv.maxmin_strategy[i][s].clone());
            table.coalition_correlated[i][node] = Some(sv.punisher_correlated[i][s].clone());
            table.coalition_product[i][node] = sv.punisher_product[i][s].clone();
            table.max_bracket_width = table.max_bracket_width.max(table.width(i, node));
        }
    }
    table.bracket_certified = table.max_bracket_width <= sv.error_bound.max(1e-9);
    Ok(table)
}

/// Weight multiplying the continuation value at a history: discount factor
/// for discounted payoffs, not-yet-hit indicator for reachability.
fn continuation_weight(game: &Game, h: &History) -> Vec<f64> {
    let n = game.num_players();
    match &game.payoff.kind {
        PayoffKind::Discounted { discount, .. } => {
            vec![discount.powi((h.stage() - 1) as i32); n]
        }
        PayoffKind::Reachability { targets } => (0..n)
            .map(|i| {
                let hit = (1..=h.stage()).any(|k| targets[i].contains(&h.state_at(k)));
                if hit {
                    0.0
                } else {
                    1.0
                }
            })
            .collect(),
        _ => vec![1.0; n],
    }
}

// ---------------------------------------------------------------------------
// Public dispatchers
// ---------------------------------------------------------------------------

/// Compute the minmax value table from initial state `s1`.
pub fn compute_minmax_values(
    game: &Game,
    s1: usize,
    depth: Option<usize>,
    config: &SolverConfig,
) -> Result<(HistoryTree, ValueTable)> {
    match &game.payoff.kind {
        PayoffKind::FiniteHorizon { horizon, .. } => {
            let tree = HistoryTree::build(game, History::root(s1), horizon + 1, None)?;
            let table = values_finite_horizon(game, &tree, config)?;
            Ok((tree, table))
        }
        PayoffKind::Discounted { .. } => {
            let d = depth.unwrap_or(3);
            let tree = HistoryTree::build(game, History::root(s1), d, None)?;
            let sv = values_discounted(game, config, 1e-9, 100_000)?;
            let table = materialize_state_values(game, &tree, &sv)?;
            Ok((tree, table))
        }
        PayoffKind::Reachability { .. } => {
            let d = depth.unwrap_or(3);
            let tree = HistoryTree::build(game, History::root(s1), d, None)?;
            let sv = values_reachability(game, config)?;
            let table = materialize_state_values(game, &tree, &sv)?;
            Ok((tree, table))
        }
        PayoffKind::MeanPayoff { .. } => Err(GameError::Unsupported {
            class: "mean_payoff".into(),
            what: "exact value computation".into(),
        }),
    }
}

/// Compute the maxmin value table; shares the coalition machinery with the
/// minmax lower bound, which it equals history by history.
pub fn compute_maxmin_values(
    game: &Game,
    s1: usize,
    depth: Option<usize>,
    config: &SolverConfig,
) -> Result<(HistoryTree, ValueTable)> {
    compute_minmax_values(game, s1, depth, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stage_game(terminal: Vec<Vec<f64>>, transitions: Vec<Vec<Vec<f64>>>) -> Game {
        let n = terminal.len();
        let ns = transitions.len();
        let np = transitions[0].len();
        Game::new(
            (0..n).map(|i| format!("p{i}")).collect(),
            (0..ns).map(|s| format!("s{s}")).collect(),
            vec![vec!["a".into(), "b".into()]; n],
            transitions,
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0; np]; ns]; n],
                terminal,
                table: None,
            },
            false,
        )
        .unwrap()
    }

    #[test]
    fn one_stage_matching_pennies_value() {
        // two states: win (1 for p0) / lose; matching pennies on transitions
        let t = vec![
            vec![1.0, 0.0], // profiles (0,0),(0,1),(1,0),(1,1) -> states
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let g = one_stage_game(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![t.clone(), t],
        );
        let cfg = SolverConfig::default();
        let (tree, table) = compute_minmax_values(&g, 0, None, &cfg).unwrap();
        let root = tree.root();
        assert!((table.minmax(0, root) - 0.5).abs() < 1e-9);
        assert!((table.maxmin[0][root] - 0.5).abs() < 1e-9);
        assert!(table.width(0, root) < 1e-9);
    }

    #[test]
    fn constant_payoff_gives_constant_values() {
        let t = vec![vec![1.0]; 4];
        let g = one_stage_game(vec![vec![0.3], vec![0.3]], vec![t]);
        let cfg = SolverConfig::default();
        let (tree, table) = compute_minmax_values(&g, 0, None, &cfg).unwrap();
        for node in tree.node_ids() {
            assert!((table.minmax(0, node) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn maxmin_below_minmax_upper_everywhere() {
        // pseudo-random 3-player game, T=2
        let mut x = 0.5f64;
        let mut next = || {
            x = (x * 91.7 + 0.713).fract();
            x
        };
        let ns = 2;
        let np = 8;
        let transitions: Vec<Vec<Vec<f64>>> = (0..ns)
            .map(|_| {
                (0..np)
                    .map(|_| {
                        let a = next();
                        vec![a, 1.0 - a]
                    })
                    .collect()
            })
            .collect();
        let g = Game::new(
            vec!["p0".into(), "p1".into(), "p2".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into(), "b".into()]; 3],
            transitions,
            PayoffKind::FiniteHorizon {
                horizon: 2,
                rewards: vec![vec![vec![0.0; np]; ns]; 3],
                terminal: (0..3).map(|_| (0..ns).map(|_| next()).collect()).collect(),
                table: None,
            },
            false,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let (tree, table) = compute_minmax_values(&g, 0, None, &cfg).unwrap();
        for node in tree.node_ids() {
            for i in 0..3 {
                assert!(table.maxmin[i][node] <= table.minmax_upper[i][node] + 1e-9);
                assert!(table.minmax_lower[i][node] <= table.minmax_upper[i][node] + 1e-9);
            }
        }
    }

    #[test]
    fn discounted_constant_reward_closed_form() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::Discounted { rewards: vec![vec![vec![0.6]]; 2], discount: 0.9 },
            false,
        )
        .unwrap();
        let sv = values_discounted(&g, &SolverConfig::default(), 1e-10, 100_000).unwrap();
        // normalized discounted value of constant reward c is c
        assert!((sv.lo[0][0] - 0.6).abs() < 1e-8, "value {}", sv.lo[0][0]);
    }

    #[test]
    fn reachability_certain_and_impossible() {
        // p0 wants s1: reachable with probability 1 by any action;
        // p1 wants s2 which does not exist in the graph from s0
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into(), "s2".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0]],
            ],
            PayoffKind::Reachability { targets: vec![vec![1], vec![2]] },
            false,
        )
        .unwrap();
        let sv = values_reachability(&g, &SolverConfig::default()).unwrap();
        assert!((sv.lo[0][0] - 1.0).abs() < 1e-9);
        assert!(sv.lo[1][0].abs() < 1e-9);
    }
}
