//! Strategy synthesis: subgame maxmin strategies, minmax-acceptable profiles
//! built from one-shot equilibria of the Martin-induced games, and punishment
//! plans certified by the best-response oracle.

use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{Game, HistoryTree, MixedAction, PayoffKind};
use crate::martin::MartinFunction;
use crate::nash::nash_equilibrium;
use crate::oneshot::SolverConfig;
use crate::oracle::{best_response_value, continuation_values};
use crate::strategy::{BoundTreeProfile, TreeProfile};
use crate::values::{tensor_from_values, ValueTable};

// ---------------------------------------------------------------------------
// Subgame maxmin strategies
// ---------------------------------------------------------------------------

/// Player `i`'s strategy that plays the maxmin-optimal mixed action of the
/// one-shot game induced by the maxmin Martin values at every history.
pub fn subgame_maxmin_strategy(
    game: &Game,
    tree: &HistoryTree,
    table: &ValueTable,
    i: usize,
) -> Result<TreeProfile> {
    if let PayoffKind::MeanPayoff { .. } = game.payoff.kind {
        return Err(GameError::Unsupported {
            class: "mean_payoff".into(),
            what: "subgame maxmin synthesis".into(),
        });
    }
    let mut out = TreeProfile::new(tree);
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            continue;
        }
        let x_i = table.maxmin_strategy[i][node]
            .clone()
            .ok_or_else(|| GameError::IncompleteMartin { key: tree.history(node).key() })?;
        let mut mix: Vec<MixedAction> = (0..game.num_players())
            .map(|j| MixedAction::pure(game.num_actions(j), 0))
            .collect();
        mix[i] = x_i;
        out.set(node, mix);
    }
    Ok(out)
}

/// Report of a per-history guarantee verification.
#[derive(Clone, Debug, Serialize)]
pub struct GuaranteeReport {
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Option<String>,
    pub checked: usize,
}

/// Verify the subgame maxmin guarantee: at every history, the exact minimum
/// over a jointly-randomizing adversary coalition (a pessimistic lower bound
/// on independent opponents) of the continuation payoff is at least the
/// maxmin value minus epsilon.
pub fn verify_subgame_maxmin(
    game: &Game,
    tree: &HistoryTree,
    strategy: &TreeProfile,
    i: usize,
    table: &ValueTable,
    epsilon: f64,
    tol: f64,
) -> Result<GuaranteeReport> {
    // worst-case DP against the fixed strategy of player i
    let n = game.num_players();
    let mut worst_val = vec![0.0f64; tree.len()];
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            worst_val[node] =
                game.payoff_eval(tree.history(node), crate::game::EvalMode::Exact)?.values[i];
            continue;
        }
        let mix = strategy
            .at(node)
            .ok_or_else(|| GameError::IncompleteStrategy { key: tree.history(node).key() })?;
        // adversary picks the joint opponent profile minimizing the expectation
        let opp_counts: Vec<usize> = (0..n).filter(|&j| j != i).map(|j| game.num_actions(j)).collect();
        let opp_total: usize = opp_counts.iter().product();
        let mut best_for_adv = f64::INFINITY;
        for mut c in 0..opp_total {
            let mut acts = vec![0usize; n];
            for j in (0..n).rev() {
                if j == i {
                    continue;
                }
                acts[j] = c % game.num_actions(j);
                c /= game.num_actions(j);
            }
            let mut v = 0.0;
            for a in 0..game.num_actions(i) {
                let w = mix[i].prob(a);
                if w == 0.0 {
                    continue;
                }
                acts[i] = a;
                let p = game.profile_index(&acts);
                for (s2, pr) in game.successors(tree.state(node), p) {
                    let child = tree
                        .children(node)
                        .iter()
                        .find(|&&(cp, cs, _)| cp == p && cs == s2)
                        .map(|&(_, _, id)| id)
                        .expect("child exists for positive transition");
                    v += w * pr * worst_val[child];
                }
            }
            best_for_adv = best_for_adv.min(v);
        }
        worst_val[node] = best_for_adv;
    }
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut checked = 0;
    for node in tree.node_ids() {
        checked += 1;
        let viol = table.maxmin[i][node] - epsilon - worst_val[node];
        if viol > worst {
            worst = viol;
            witness = Some(tree.history(node).key());
        }
    }
    Ok(GuaranteeReport { pass: worst <= tol, worst_violation: worst.max(0.0), witness, checked })
}

// ---------------------------------------------------------------------------
// Acceptable profiles
// ---------------------------------------------------------------------------

/// A profile of one-shot equilibria of the Martin-induced games, with the
/// per-history equilibrium residuals it was synthesized at.
#[derive(Debug)]
pub struct AcceptableProfile {
    pub profile: TreeProfile,
    pub regrets: Vec<f64>, // per node, worst player regret (0 at leaves)
    pub max_regret: f64,
}

/// Synthesize the acceptable profile: at every history an equilibrium of the
/// one-shot game induced by the Martin function.
pub fn acceptable_profile(
    game: &Game,
    tree: &HistoryTree,
    d: &MartinFunction,
    config: &SolverConfig,
) -> Result<AcceptableProfile> {
    let mut profile = TreeProfile::new(tree);
    let mut regrets = vec![0.0; tree.len()];
    let mut max_regret = 0.0f64;
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            continue;
        }
        let tensor = tensor_from_values(game, tree, node, &d.values);
        let nash = nash_equilibrium(&tensor, config).map_err(|e| match e {
            GameError::SolverFailure { best_residual, .. } => GameError::SolverFailure {
                context: format!("one-shot equilibrium at {}", tree.history(node).key()),
                best_residual,
            },
            other => other,
        })?;
        let worst = nash.regrets.iter().cloned().fold(0.0f64, f64::max);
        regrets[node] = worst;
        max_regret = max_regret.max(worst);
        profile.set(node, nash.profile);
    }
    Ok(AcceptableProfile { profile, regrets, max_regret })
}

/// Stationary acceptable profile for discounted payoffs: a per-state
/// equilibrium of the stage game induced by the value-iteration fixed point.
/// The history-indexed one-shot games induced by the discounted Martin
/// construction are positive affine transforms of these stage games, so the
/// same mixtures are equilibria at every history.
pub fn acceptable_profile_discounted(
    game: &Game,
    sv: &crate::values::StateValueTable,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<(crate::strategy::StrategyProfile, f64)> {
    let (rewards, discount) = match &game.payoff.kind {
        PayoffKind::Discounted { rewards, discount } => (rewards, *discount),
        other => {
            return Err(GameError::Unsupported {
                class: other.class_name().into(),
                what: "stationary acceptable synthesis".into(),
            })
        }
    };
    let n = game.num_players();
    let np = game.num_profiles();
    let mut per_player: Vec<Vec<MixedAction>> = vec![Vec::new(); n];
    let mut max_regret = 0.0f64;
    for s in 0..game.num_states() {
        let mut payoffs = vec![vec![0.0; np]; n];
        for p in 0..np {
            for i in 0..n {
                let mut v = (1.0 - discount) * rewards[i][s][p];
                for (s2, pr) in game.successors(s, p) {
                    v += discount * pr * (sv.lo[i][s2] - epsilon / 2.0);
                }
                payoffs[i][p] = v;
            }
        }
        let tensor = crate::oneshot::OneShotTensor {
            action_counts: (0..n).map(|i| game.num_actions(i)).collect(),
            payoffs,
            history_key: None,
        };
        let nash = nash_equilibrium(&tensor, config)?;
        max_regret = max_regret.max(nash.regrets.iter().cloned().fold(0.0, f64::max));
        for (i, m) in nash.profile.into_iter().enumerate() {
            per_player[i].push(m);
        }
    }
    let strategies = per_player
        .into_iter()
        .map(|per_state| {
            crate::strategy::BehaviorStrategy::Stationary(crate::strategy::StationaryStrategy {
                per_state,
            })
        })
        .collect();
    Ok((crate::strategy::StrategyProfile::new(strategies), max_regret))
}

/// Report of the acceptable-profile verification, including the per-history
/// inequality chain payoff >= one-shot minmax >= D >= minmax - eps.
#[derive(Clone, Debug, Serialize)]
pub struct AcceptableReport {
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Option<String>,
    pub chain_pass: bool,
    pub chain_worst: f64,
    pub checked: usize,
}

/// Verify minmax epsilon-acceptability exactly: `E_{h,profile}[f_i] >=
/// minmax_i(h) - eps - tol` for every player at every history, plus the full
/// inequality chain through the one-shot values and the Martin function.
pub fn verify_acceptable(
    game: &Game,
    tree: &HistoryTree,
    profile: &TreeProfile,
    table: &ValueTable,
    d: &MartinFunction,
    epsilon: f64,
    tol: f64,
) -> Result<AcceptableReport> {
    let n = game.num_players();
    let bound = BoundTreeProfile { tree, profile };
    let cont = continuation_values(game, tree, &bound)?;
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut chain_worst = 0.0f64;
    let mut checked = 0;
    for node in tree.node_ids() {
        for i in 0..n {
            checked += 1;
            let viol = table.minmax(i, node) - epsilon - cont[i][node];
            if viol > worst {
                worst = viol;
                witness = Some(tree.history(node).key());
            }
        }
        if !tree.is_leaf(node) {
            // chain: E >= oneshot minmax >= D >= minmax - eps, each within tol
            let tensor = tensor_from_values(game, tree, node, &d.values);
            for i in 0..n {
                let (matrix, _) = tensor.coalition_matrix(i);
                let sol = crate::lp::solve_matrix_game(&matrix)?;
                let c1 = sol.value - cont[i][node];
                let c2 = d.value(i, node) - sol.value;
                let c3 = (table.minmax(i, node) - epsilon) - d.value(i, node);
                chain_worst = chain_worst.max(c1).max(c2).max(c3);
            }
        }
    }
    Ok(AcceptableReport {
        pass: worst <= tol,
        worst_violation: worst.max(0.0),
        witness,
        chain_pass: chain_worst <= tol,
        chain_worst: chain_worst.max(0.0),
        checked,
    })
}

// ---------------------------------------------------------------------------
// Punishment plans
// ---------------------------------------------------------------------------

/// A coalition plan holding one player near her minmax value from an anchor
/// history, certified by the exact best-response oracle.
#[derive(Clone, Debug)]
pub struct PunishmentPlan {
    pub target: usize,
    pub anchor: usize,
    pub anchor_key: String,
    /// Mixed action of every player at every subtree node; the target's own
    /// entry is a placeholder (pure first action).
    pub coalition: TreeProfile,
    pub delta: f64,
    /// Exact value the target can still get against the plan.
    pub certified_bound: f64,
    /// Set when the certified bound exceeds minmax + delta (bracket slack).
    pub widened: bool,
    pub widened_delta: f64,
}

/// Build the punishment plan against player `i` anchored at `node`. The
/// coalition plays the stagewise minimizers from the value recursion: the
/// exact opponent optimum for two players, the product minimizers from the
/// bracket-upper recursion otherwise.
pub fn punishment_profile(
    game: &Game,
    tree: &HistoryTree,
    table: &ValueTable,
    i: usize,
    node: usize,
    delta: f64,
) -> Result<PunishmentPlan> {
    let n = game.num_players();
    let mut coalition = TreeProfile::new(tree);
    for u in tree.subtree(node) {
        if tree.is_leaf(u) {
            continue;
        }
        let product = table.coalition_product[i][u]
            .clone()
            .ok_or_else(|| GameError::IncompleteMartin { key: tree.history(u).key() })?;
        let mut mix: Vec<MixedAction> = Vec::with_capacity(n);
        let mut k = 0usize;
        for j in 0..n {
            if j == i {
                mix.push(MixedAction::pure(game.num_actions(j), 0));
            } else {
                mix.push(product[k].clone());
                k += 1;
            }
        }
        coalition.set(u, mix);
    }
    let bound_profile = BoundTreeProfile { tree, profile: &coalition };
    let (certified_bound, _) = best_response_value(game, tree, &bound_profile, i, node)?;
    let level = table.minmax(i, node) + delta;
    let widened = certified_bound > level + 1e-9;
    let widened_delta = if widened { certified_bound - table.minmax(i, node) } else { delta };
    Ok(PunishmentPlan {
        target: i,
        anchor: node,
        anchor_key: tree.history(node).key(),
        coalition,
        delta,
        certified_bound,
        widened,
        widened_delta,
    })
}

/// Best-response value of the punished player against the stagewise
/// punisher tables, at every node in one backward pass. The punishment plan
/// anchored at any node achieves exactly this value there, since the
/// coalition's play depends only on the current node.
pub fn punishment_values(
    game: &Game,
    tree: &HistoryTree,
    table: &ValueTable,
    i: usize,
) -> Result<Vec<f64>> {
    let n = game.num_players();
    let mut val = vec![0.0f64; tree.len()];
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            val[node] =
                game.payoff_eval(tree.history(node), crate::game::EvalMode::Exact)?.values[i];
            continue;
        }
        let product = table.coalition_product[i][node]
            .as_ref()
            .ok_or_else(|| GameError::IncompleteMartin { key: tree.history(node).key() })?;
        let mut best = f64::NEG_INFINITY;
        for a in 0..game.num_actions(i) {
            let mut v = 0.0;
            for &(p, s2, child) in tree.children(node) {
                let acts = game.profile_actions(p);
                if acts[i] != a {
                    continue;
                }
                let mut w = 1.0;
                let mut k = 0usize;
                for j in 0..n {
                    if j != i {
                        w *= product[k].prob(acts[j]);
                        k += 1;
                    }
                }
                if w > 0.0 {
                    v += w * game.transition_row(tree.state(node), p)[s2] * val[child];
                }
            }
            best = best.max(v);
        }
        val[node] = best;
    }
    Ok(val)
}

/// Stationary punishment for reachability payoffs, from the fixed-point
/// iteration minimizers; delta is inflated by the iteration residual.
pub fn punishment_profile_reachability(
    game: &Game,
    sv: &crate::values::StateValueTable,
    i: usize,
    delta: f64,
) -> Result<(Vec<Vec<MixedAction>>, f64)> {
    let n = game.num_players();
    let ns = game.num_states();
    let mut per_state: Vec<Vec<MixedAction>> = Vec::with_capacity(ns);
    for s in 0..ns {
        let product = sv.punisher_product[i][s]
            .clone()
            .ok_or_else(|| GameError::Invalid("missing stationary punisher".into()))?;
        let mut mix = Vec::with_capacity(n);
        let mut k = 0usize;
        for j in 0..n {
            if j == i {
                mix.push(MixedAction::pure(game.num_actions(j), 0));
            } else {
                mix.push(product[k].clone());
                k += 1;
            }
        }
        per_state.push(mix);
    }
    Ok((per_state, delta + sv.error_bound))
}
