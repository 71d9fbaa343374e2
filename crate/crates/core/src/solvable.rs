//! End-to-end construction of a solvable subgame: pick the detection
//! parameter, locate a target history where payoffs and value processes have
//! settled, build the good run set and its exit antichain, overlay blame and
//! punishment on the acceptable profile, and verify the equilibrium property
//! with exact best-response dynamic programming.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::detect::{
    exit_set, high_minmax_set, nu_stopping, theta_k, BlameFunction, DetectionConfig, ExitSet,
    TargetSet,
};
use crate::error::{GameError, Result};
use crate::game::{EvalMode, Game, History, HistoryTree, MixedAction};
use crate::martin::MartinFunction;
use crate::oneshot::SolverConfig;
use crate::oracle::{best_response_value, continuation_values, enumerate};
use crate::strategy::{
    BehaviorStrategy, BoundTreeProfile, ProfilePolicy, StrategyProfile, TabularStrategy,
    TreeProfile,
};
use crate::synth::{acceptable_profile, punishment_profile, PunishmentPlan};
use crate::values::ValueTable;

/// Largest power-of-two detection parameter compatible with epsilon:
/// `5 d + 4 (n+1) d^{1/4} < eps`.
pub fn choose_delta(epsilon: f64, num_players: usize) -> f64 {
    assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon must lie in (0,1]");
    for k in 1..200 {
        let d = 2f64.powi(-k);
        if 5.0 * d + 4.0 * (num_players as f64 + 1.0) * d.powf(0.25) < epsilon {
            return d;
        }
    }
    2f64.powi(-200)
}

/// Constants of the three settlement conditions; their sum must exceed 2.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MembershipConstants(pub f64, pub f64, pub f64);

impl Default for MembershipConstants {
    fn default() -> Self {
        Self(2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)
    }
}

/// The selected target history with the diagnostics of its selection.
#[derive(Clone, Debug, Serialize)]
pub struct TargetHistory {
    pub node: usize,
    pub key: String,
    pub stage: usize,
    /// Expected payoff vector at the target under the acceptable profile.
    pub c: Vec<f64>,
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    /// Measured root probabilities of the three settlement events at n0.
    pub settle_probs: [f64; 3],
    pub prob_settled_given_target: f64,
}

struct RunData {
    leaf: usize,
    prob_root: f64,
    min_n_f: usize,
    min_n_y: usize,
    min_n_w: usize,
}

fn prefix_nodes(tree: &HistoryTree, leaf: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cur = Some(leaf);
    while let Some(u) = cur {
        out.push(u);
        cur = tree.parent(u);
    }
    out.reverse();
    out
}

/// Locate the earliest history (breadth-first) from whose subgame the payoff
/// martingale and both value processes stay delta-settled with conditional
/// probability above `1 - delta`.
pub fn find_target_history(
    game: &Game,
    tree: &HistoryTree,
    sigma_star: &TreeProfile,
    d: &MartinFunction,
    delta: f64,
    constants: MembershipConstants,
) -> Result<TargetHistory> {
    let n = game.num_players();
    let bound = BoundTreeProfile { tree, profile: sigma_star };
    let f_mart = continuation_values(game, tree, &bound)?; // [player][node]
    // Y and W per node
    let y = &d.values;
    let mut w = vec![vec![0.0; tree.len()]; n];
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            for i in 0..n {
                w[i][node] = y[i][node];
            }
        } else {
            let mix = sigma_star
                .at(node)
                .ok_or_else(|| GameError::IncompleteStrategy { key: tree.history(node).key() })?;
            let tensor = crate::values::tensor_from_values(game, tree, node, y);
            for i in 0..n {
                w[i][node] = tensor.expect(i, mix);
            }
        }
    }
    // leaf probabilities under sigma_star from the root
    let table = enumerate(game, tree, &bound, tree.root())?;
    let mut runs = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let prefix = prefix_nodes(tree, row.node);
        let horizon_stage = tree.stage(row.node);
        // settle stage of the payoff martingale: |f(r) - F(r^m)| <= delta
        let mut min_n_f = 1usize;
        for (idx, &u) in prefix.iter().enumerate().rev() {
            let stage = tree.stage(u);
            let ok = (0..n).all(|i| (row.payoffs[i] - f_mart[i][u]).abs() <= delta);
            if !ok {
                min_n_f = stage + 1;
                break;
            }
            if idx == 0 {
                min_n_f = stage;
            }
        }
        // settle stage of Y/W: suffix spread per player at most delta
        let settle = |vals: &Vec<Vec<f64>>| -> usize {
            let mut hi = vec![f64::NEG_INFINITY; n];
            let mut lo = vec![f64::INFINITY; n];
            let mut res = horizon_stage;
            for (idx, &u) in prefix.iter().enumerate().rev() {
                for i in 0..n {
                    hi[i] = hi[i].max(vals[i][u]);
                    lo[i] = lo[i].min(vals[i][u]);
                }
                if (0..n).all(|i| hi[i] - lo[i] <= delta) {
                    res = tree.stage(u);
                } else {
                    break;
                }
                if idx == 0 {
                    res = tree.stage(u);
                }
            }
            res
        };
        runs.push(RunData {
            leaf: row.node,
            prob_root: row.prob,
            min_n_f,
            min_n_y: settle(y),
            min_n_w: settle(&w),
        });
    }
    let horizon = tree.depth();
    let settled_prob = |sel: &dyn Fn(&RunData) -> usize, at: usize| -> f64 {
        runs.iter().filter(|r| sel(r) <= at).map(|r| r.prob_root).sum()
    };
    let first_stage =
        |sel: &dyn Fn(&RunData) -> usize, c: f64| -> usize {
            (1..=horizon)
                .find(|&m| settled_prob(sel, m) > c)
                .unwrap_or(horizon)
        };
    let n1 = first_stage(&|r: &RunData| r.min_n_f, constants.0);
    let n2 = first_stage(&|r: &RunData| r.min_n_y, constants.1);
    let n3 = first_stage(&|r: &RunData| r.min_n_w, constants.2);
    let n0 = n1.max(n2).max(n3);
    // zero-probability leaves never reached under sigma_star stay outside
    let mut in_rhat: BTreeMap<usize, bool> = BTreeMap::new();
    for r in &runs {
        in_rhat.insert(r.leaf, r.min_n_f <= n0 && r.min_n_y <= n0 && r.min_n_w <= n0);
    }
    // per-node reach probability and settled-run mass, one bottom-up pass
    let mut reach = vec![0.0f64; tree.len()];
    let mut settled_mass = vec![0.0f64; tree.len()];
    for r in &runs {
        reach[r.leaf] = r.prob_root;
        if in_rhat[&r.leaf] {
            settled_mass[r.leaf] = r.prob_root;
        }
    }
    for node in tree.bottom_up() {
        if let Some(parent) = tree.parent(node) {
            reach[parent] += reach[node];
            settled_mass[parent] += settled_mass[node];
        }
    }
    // breadth-first scan for the earliest qualifying target
    for node in tree.node_ids() {
        if tree.stage(node) < n0 || reach[node] <= 0.0 {
            continue;
        }
        let conditional = settled_mass[node] / reach[node];
        if conditional > 1.0 - delta {
            let c = (0..n).map(|i| f_mart[i][node]).collect();
            return Ok(TargetHistory {
                node,
                key: tree.history(node).key(),
                stage: tree.stage(node),
                c,
                n0,
                n1,
                n2,
                n3,
                settle_probs: [
                    settled_prob(&|r: &RunData| r.min_n_f, n0),
                    settled_prob(&|r: &RunData| r.min_n_y, n0),
                    settled_prob(&|r: &RunData| r.min_n_w, n0),
                ],
                prob_settled_given_target: conditional,
            });
        }
    }
    Err(GameError::Assertion(format!(
        "no target history found at delta {delta}; best candidates settle below 1 - delta"
    )))
}

/// The good run set, its exit structure and the per-run detection data.
#[derive(Debug)]
pub struct GoodSet {
    pub leaves: Vec<usize>,
    pub in_k: BTreeMap<usize, bool>,
    pub prob_k: f64,
    pub prob_bound: f64,
    pub exit: ExitSet,
    pub blame: BlameFunction,
    pub q_sets: Vec<TargetSet>,
    /// zeta_i(run, n*, horizon) per player per leaf under the target.
    pub zeta_inf: Vec<BTreeMap<usize, f64>>,
    pub nu: Vec<BTreeMap<usize, Option<usize>>>,
}

/// Per-player classification of a full-horizon run for the gain
/// decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RunClass {
    GoodRuns,
    OtherBlamed,
    CaughtByStatistic,
    ExitBlamed,
}

impl GoodSet {
    pub fn classify(&self, tree: &HistoryTree, leaf: usize, player: usize) -> RunClass {
        if self.in_k[&leaf] {
            return RunClass::GoodRuns;
        }
        let theta = theta_k(tree, &self.exit, leaf).expect("bad runs have an exit prefix");
        let blamed = self
            .blame
            .blame_by_prefix(tree, leaf)
            .expect("bad runs have a blame entry");
        if blamed != player {
            return RunClass::OtherBlamed;
        }
        match self.nu[player][&leaf] {
            Some(nu) if nu <= theta => RunClass::CaughtByStatistic,
            _ => RunClass::ExitBlamed,
        }
    }
}

/// Build the good set: runs that settle from n0 on and whose reach statistics
/// stay below the threshold for every player; verify its measured mass and
/// derive the minimal exit antichain with its blame function.
pub fn build_good_set(
    game: &Game,
    tree: &HistoryTree,
    target: &TargetHistory,
    sigma_star: &TreeProfile,
    values: &ValueTable,
    detection: &DetectionConfig,
    in_rhat_n0: &dyn Fn(usize) -> bool,
) -> Result<GoodSet> {
    let n = game.num_players();
    let delta = detection.delta;
    let bound = BoundTreeProfile { tree, profile: sigma_star };
    let q_sets: Vec<TargetSet> = (0..n)
        .map(|i| high_minmax_set(tree, values, i, target.node, target.c[i], delta))
        .collect::<Result<_>>()?;
    let leaves = tree.leaves_under(target.node);
    let mut zeta_inf: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut nu: Vec<BTreeMap<usize, Option<usize>>> = vec![BTreeMap::new(); n];
    let mut in_k = BTreeMap::new();
    for &leaf in &leaves {
        let mut good = in_rhat_n0(leaf);
        for i in 0..n {
            let z = crate::detect::zeta(
                game,
                tree,
                leaf,
                i,
                target.stage,
                tree.stage(leaf),
                &q_sets[i],
                &bound,
            )?;
            let v = nu_stopping(
                game,
                tree,
                leaf,
                i,
                target.stage,
                detection.threshold,
                &q_sets[i],
                &bound,
            )?;
            zeta_inf[i].insert(leaf, z);
            nu[i].insert(leaf, v);
            if z >= detection.threshold {
                good = false;
            }
        }
        in_k.insert(leaf, good);
    }
    // measured probability of K given the target
    let sub_table = enumerate(game, tree, &bound, target.node)?;
    let mut prob_k = 0.0;
    for row in &sub_table.rows {
        if in_k[&row.node] {
            prob_k += row.prob;
        }
    }
    let prob_bound = 1.0 - (n as f64 + 1.0) * detection.threshold;
    if prob_k <= prob_bound {
        return Err(GameError::Assertion(format!(
            "good set mass {prob_k} at or below the required {prob_bound}; delta too large"
        )));
    }
    let exit = exit_set(tree, target.node, &|leaf| in_k[&leaf])?;
    let blame = BlameFunction::build(game, tree, &exit, &bound)?;
    Ok(GoodSet { leaves, in_k, prob_k, prob_bound, exit, blame, q_sets, zeta_inf, nu })
}

/// The assembled equilibrium profile: the acceptable profile with a
/// punishment overlay triggered by the exit set. An automaton with one base
/// state plus one punishment state per player.
pub struct SigmaHat {
    pub base: TreeProfile,
    pub anchor: usize,
    pub exit: ExitSet,
    pub exit_blame: BTreeMap<usize, usize>,
    pub plans: BTreeMap<usize, PunishmentPlan>,
}

impl SigmaHat {
    pub fn automaton_state_count(&self, num_players: usize) -> usize {
        1 + num_players
    }

    /// Automaton state at a node: None = base, Some(player) = punishing.
    pub fn automaton_state(&self, tree: &HistoryTree, node: usize) -> Option<usize> {
        let mut cur = Some(node);
        while let Some(u) = cur {
            if let Some(&g) = self.exit_blame.get(&u) {
                return Some(g);
            }
            cur = tree.parent(u);
        }
        None
    }
}

/// `SigmaHat` bound to its tree, usable as a strategy profile.
pub struct SigmaHatPolicy<'a> {
    pub tree: &'a HistoryTree,
    pub hat: &'a SigmaHat,
}

impl ProfilePolicy for SigmaHatPolicy<'_> {
    fn mixed_profile(&self, _game: &Game, h: &History) -> Result<Vec<MixedAction>> {
        let node = self
            .tree
            .find(h)
            .ok_or_else(|| GameError::IncompleteStrategy { key: h.key() })?;
        // locate the exit prefix, if any
        let mut exit_node = None;
        let mut cur = Some(node);
        while let Some(u) = cur {
            if self.hat.exit_blame.contains_key(&u) {
                exit_node = Some(u);
                break;
            }
            cur = self.tree.parent(u);
        }
        let base = self
            .hat
            .base
            .at(node)
            .ok_or_else(|| GameError::IncompleteStrategy { key: h.key() })?;
        match exit_node {
            None => Ok(base.clone()),
            Some(e) => {
                let g = self.hat.exit_blame[&e];
                let plan = &self.hat.plans[&e];
                let mix = plan
                    .coalition
                    .at(node)
                    .ok_or_else(|| GameError::IncompleteStrategy { key: h.key() })?;
                let mut out = mix.clone();
                out[g] = base[g].clone();
                Ok(out)
            }
        }
    }
}

/// Overlay punishment on the acceptable profile: upon entering the exit set
/// at history h, the blamed player's opponents switch to the punishment plan
/// anchored at h.
pub fn assemble_sigma_hat(
    game: &Game,
    tree: &HistoryTree,
    values: &ValueTable,
    target: &TargetHistory,
    good: &GoodSet,
    delta: f64,
    sigma_star: &TreeProfile,
) -> Result<SigmaHat> {
    let mut exit_blame = BTreeMap::new();
    let mut plans = BTreeMap::new();
    for &e in &good.exit.set.nodes {
        let g = good.blame.blame_of(e)?;
        exit_blame.insert(e, g);
        plans.insert(e, punishment_profile(game, tree, values, g, e, delta)?);
    }
    Ok(SigmaHat {
        base: sigma_star.clone(),
        anchor: target.node,
        exit: good.exit.clone(),
        exit_blame,
        plans,
    })
}

/// Per-player diagnostics of the deviator's payoff decomposition over the
/// four run classes.
#[derive(Clone, Debug, Serialize)]
pub struct SubsetDiagnostics {
    pub player: usize,
    pub mass: [f64; 4],
    pub payoff_share: [f64; 4],
    pub bound: [f64; 4],
    pub within: [bool; 4],
    pub partition_exact: bool,
    pub nu_before_theta: usize,
}

/// Full report of the solvable-subgame verification.
#[derive(Clone, Debug, Serialize)]
pub struct SolvableReport {
    pub epsilon: f64,
    pub delta: f64,
    pub threshold: f64,
    pub eta: f64,
    pub target: TargetHistory,
    pub prob_k: f64,
    pub prob_k_bound: f64,
    pub exit_count: usize,
    pub no_exits: bool,
    pub on_path: Vec<f64>,
    pub on_path_bound: Vec<f64>,
    pub on_path_pass: bool,
    pub gains: Vec<f64>,
    pub gain_bound: f64,
    pub gains_pass: bool,
    pub widened_plans: bool,
    pub subsets: Vec<SubsetDiagnostics>,
    pub value_settled_worst: f64,
    pub target_value_slack_worst: f64,
    pub martingale_gap_worst: f64,
    pub arithmetic_bound_ok: bool,
    pub pass: bool,
}

/// Verify the assembled profile: on-path payoffs close to the target vector,
/// exact per-player best-deviation gains within epsilon, and the per-class
/// payoff decomposition against its bounds (informative when the heuristic
/// blame misses its target).
#[allow(clippy::too_many_arguments)]
pub fn verify_solvable(
    game: &Game,
    tree: &HistoryTree,
    values: &ValueTable,
    d: &MartinFunction,
    sigma_star: &TreeProfile,
    target: &TargetHistory,
    good: &GoodSet,
    hat: &SigmaHat,
    epsilon: f64,
    detection: &DetectionConfig,
    tol: f64,
) -> Result<SolvableReport> {
    let n = game.num_players();
    let delta = detection.delta;
    let policy = SigmaHatPolicy { tree, hat };
    let on_path = crate::oracle::expected_payoff(game, tree, &policy, target.node)?;
    let on_path_bound: Vec<f64> = (0..n)
        .map(|i| target.c[i] - 2.0 * (n as f64 + 1.0) * detection.threshold - tol)
        .collect();
    let on_path_pass = (0..n).all(|i| on_path[i] >= on_path_bound[i]);

    let mut gains = Vec::with_capacity(n);
    let mut subsets = Vec::with_capacity(n);
    let widened = hat.plans.values().any(|p| p.widened);
    for i in 0..n {
        let (br, strat) = best_response_value(game, tree, &policy, i, target.node)?;
        gains.push(br - on_path[i]);
        // decomposition under the optimal deviation
        let dev_bound = BoundTreeProfile { tree, profile: &strat };
        let dist = enumerate(game, tree, &dev_bound, target.node)?;
        let mut mass = [0.0f64; 4];
        let mut payoff_share = [0.0f64; 4];
        let mut nu_before_theta = 0usize;
        for row in &dist.rows {
            let class = good.classify(tree, row.node, i);
            let idx = class as usize;
            mass[idx] += row.prob;
            payoff_share[idx] += row.prob * row.payoffs[i];
            if !good.in_k[&row.node] {
                let theta = theta_k(tree, &good.exit, row.node).unwrap_or(usize::MAX);
                if let Some(nu) = good.nu[i][&row.node] {
                    if nu < theta {
                        nu_before_theta += 1;
                    }
                }
            }
        }
        let c_i = target.c[i];
        let bound = [
            mass[0] * (c_i + delta) + tol,
            detection.eta + tol,
            mass[2] * (c_i + 5.0 * delta) + detection.eta + tol,
            mass[3] * (c_i + 3.0 * delta) + detection.threshold + tol,
        ];
        let within = [
            payoff_share[0] <= bound[0],
            mass[1] <= bound[1],
            payoff_share[2] <= bound[2],
            payoff_share[3] <= bound[3],
        ];
        let partition_exact = (mass.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        subsets.push(SubsetDiagnostics {
            player: i,
            mass,
            payoff_share,
            bound,
            within,
            partition_exact,
            nu_before_theta,
        });
    }
    let gain_bound = epsilon + tol;
    let gains_pass = gains.iter().all(|&g| g <= gain_bound);

    // invariants: settled values on K, target value slack, martingale gap
    let mut value_settled_worst = 0.0f64;
    for (&leaf, &ink) in &good.in_k {
        if !ink {
            continue;
        }
        for &u in &prefix_nodes(tree, leaf) {
            if tree.stage(u) < target.stage {
                continue;
            }
            for i in 0..n {
                value_settled_worst = value_settled_worst
                    .max(values.minmax(i, u) - (target.c[i] + 2.0 * delta));
            }
        }
    }
    let mut target_value_slack_worst = 0.0f64;
    for i in 0..n {
        target_value_slack_worst =
            target_value_slack_worst.max(values.minmax(i, target.node) - delta - target.c[i]);
    }
    let mut martingale_gap_worst = 0.0f64;
    if !tree.is_leaf(target.node) {
        let mix = sigma_star
            .at(target.node)
            .ok_or_else(|| GameError::IncompleteStrategy { key: target.key.clone() })?;
        let tensor = crate::values::tensor_from_values(game, tree, target.node, &d.values);
        for i in 0..n {
            let w = tensor.expect(i, mix);
            martingale_gap_worst =
                martingale_gap_worst.max((d.value(i, target.node) - w).abs() - 2.0 * delta);
        }
    }
    let arithmetic_bound_ok = 5.0 * delta
        + detection.eta
        + detection.threshold
        + 2.0 * (n as f64 + 1.0) * detection.threshold
        <= epsilon;

    let pass = on_path_pass && gains_pass && arithmetic_bound_ok;
    Ok(SolvableReport {
        epsilon,
        delta,
        threshold: detection.threshold,
        eta: detection.eta,
        target: target.clone(),
        prob_k: good.prob_k,
        prob_k_bound: good.prob_bound,
        exit_count: good.exit.set.nodes.len(),
        no_exits: good.exit.no_exits,
        on_path,
        on_path_bound,
        on_path_pass,
        gains,
        gain_bound,
        gains_pass,
        widened_plans: widened,
        subsets,
        value_settled_worst,
        target_value_slack_worst,
        martingale_gap_worst,
        arithmetic_bound_ok,
        pass,
    })
}

/// Run the whole pipeline on a finite-horizon game.
pub fn solve_subgame(
    game: &Game,
    s1: usize,
    epsilon: f64,
    delta_override: Option<f64>,
    config: &SolverConfig,
) -> Result<SolvableReport> {
    let n = game.num_players();
    let delta = delta_override.unwrap_or_else(|| choose_delta(epsilon, n));
    let detection = DetectionConfig::new(delta, epsilon, n, config.seed)?;
    let (tree, values, d) = crate::martin::finite_horizon_stack(game, s1, config)?;
    let acc = acceptable_profile(game, &tree, &d, config)?;
    let target = find_target_history(
        game,
        &tree,
        &acc.profile,
        &d,
        delta,
        MembershipConstants::default(),
    )?;
    // recompute run membership for the good set
    let bound = BoundTreeProfile { tree: &tree, profile: &acc.profile };
    let f_mart = continuation_values(game, &tree, &bound)?;
    let mut w = vec![vec![0.0; tree.len()]; n];
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            for i in 0..n {
                w[i][node] = d.values[i][node];
            }
        } else {
            let mix = acc.profile.at(node).expect("profile defined");
            let tensor = crate::values::tensor_from_values(game, &tree, node, &d.values);
            for i in 0..n {
                w[i][node] = tensor.expect(i, mix);
            }
        }
    }
    let in_rhat = |leaf: usize| -> bool {
        let prefix = prefix_nodes(&tree, leaf);
        let payoff = game
            .payoff_eval(tree.history(leaf), EvalMode::Exact)
            .expect("leaf payoff")
            .values;
        let from = target.n0;
        // payoff martingale settled
        for &u in &prefix {
            if tree.stage(u) < from {
                continue;
            }
            for i in 0..n {
                if (payoff[i] - f_mart[i][u]).abs() > delta {
                    return false;
                }
            }
        }
        // Y and W suffix spreads
        for vals in [&d.values, &w] {
            for i in 0..n {
                let mut hi = f64::NEG_INFINITY;
                let mut lo = f64::INFINITY;
                for &u in &prefix {
                    if tree.stage(u) < from {
                        continue;
                    }
                    hi = hi.max(vals[i][u]);
                    lo = lo.min(vals[i][u]);
                }
                if hi - lo > delta {
                    return false;
                }
            }
        }
        true
    };
    let good = build_good_set(game, &tree, &target, &acc.profile, &values, &detection, &in_rhat)?;
    let hat = assemble_sigma_hat(game, &tree, &values, &target, &good, delta, &acc.profile)?;
    verify_solvable(
        game,
        &tree,
        &values,
        &d,
        &acc.profile,
        &target,
        &good,
        &hat,
        epsilon,
        &detection,
        1e-6,
    )
}

// ---------------------------------------------------------------------------
// Shift-invariant lift
// ---------------------------------------------------------------------------

/// Outcome of the shift-invariance validation.
#[derive(Clone, Debug, Serialize)]
pub struct ShiftInvarianceCheck {
    pub accepted: bool,
    pub statistical: bool,
    pub witness: Option<(String, String)>,
}

/// Validate a declared shift-invariant payoff by exhaustive prefix-swap
/// testing at small depth: any two prefixes ending at the same state must
/// induce the same payoff for every common continuation. Exact classes are
/// compared exactly; mean-payoff comparisons are truncated and flagged.
pub fn validate_shift_invariance(game: &Game, depth: usize) -> Result<ShiftInvarianceCheck> {
    if !game.payoff.declared_shift_invariant {
        return Ok(ShiftInvarianceCheck {
            accepted: false,
            statistical: false,
            witness: None,
        });
    }
    let statistical = matches!(
        game.payoff.kind,
        crate::game::PayoffKind::MeanPayoff { .. } | crate::game::PayoffKind::Discounted { .. }
    );
    // collect prefixes up to `depth` stages from every initial state
    let mut prefixes: Vec<History> = Vec::new();
    for s1 in 0..game.num_states() {
        let tree = HistoryTree::build(game, History::root(s1), depth, None)?;
        for u in tree.node_ids() {
            prefixes.push(tree.history(u).clone());
        }
    }
    for a in 0..prefixes.len() {
        for b in (a + 1)..prefixes.len() {
            let (ha, hb) = (&prefixes[a], &prefixes[b]);
            if ha.last_state() != hb.last_state() {
                continue;
            }
            if let Some(w) = prefix_pair_violation(game, ha, hb, statistical)? {
                return Ok(ShiftInvarianceCheck {
                    accepted: false,
                    statistical,
                    witness: Some(w),
                });
            }
        }
    }
    Ok(ShiftInvarianceCheck { accepted: true, statistical, witness: None })
}

/// Compare payoffs of common continuations of two same-state prefixes.
/// Exact classes enumerate every continuation; statistical classes compare
/// long sampled continuations truncated at a common round count, which damps
/// the prefix contribution of shift-invariant payoffs below the tolerance.
fn prefix_pair_violation(
    game: &Game,
    ha: &History,
    hb: &History,
    statistical: bool,
) -> Result<Option<(String, String)>> {
    if !statistical {
        let continuation_depth = match &game.payoff.kind {
            crate::game::PayoffKind::FiniteHorizon { horizon, .. } => horizon + 1,
            _ => 4,
        };
        let ctree =
            HistoryTree::build(game, History::root(ha.last_state()), continuation_depth, None)?;
        for leaf in ctree.leaves_under(ctree.root()) {
            let cont = ctree.history(leaf);
            let ra = ha.concat(cont)?;
            let rb = hb.concat(cont)?;
            let pa = game.payoff_eval(&ra, EvalMode::Truncated)?.values;
            let pb = game.payoff_eval(&rb, EvalMode::Truncated)?.values;
            if pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > 1e-9) {
                return Ok(Some((ra.key(), rb.key())));
            }
        }
        return Ok(None);
    }
    // sample a few long continuations; truncate both composites at the same
    // round count so a shift-invariant payoff contributes the prefixes only
    // through an O(prefix/rounds) term
    let rounds = 400usize;
    let uniform = crate::strategy::uniform_profile(game);
    for k in 0..4u64 {
        let cont = crate::game::sample_run(
            game,
            &uniform,
            &History::root(ha.last_state()),
            rounds,
            0x51f1 ^ k,
        )?;
        let ra = ha.concat(&cont)?.prefix(rounds);
        let rb = hb.concat(&cont)?.prefix(rounds);
        let pa = game.payoff_eval(&ra, EvalMode::Truncated)?.values;
        let pb = game.payoff_eval(&rb, EvalMode::Truncated)?.values;
        let slack = (ha.stage() + hb.stage()) as f64 / rounds as f64 + 0.01;
        if pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > slack) {
            return Ok(Some((ra.key(), rb.key())));
        }
    }
    Ok(None)
}

/// Re-anchor the equilibrium of the subgame at the target history as a
/// profile from its final state, valid for shift-invariant payoffs.
pub fn shift_invariant_lift(
    game: &Game,
    tree: &HistoryTree,
    target: &TargetHistory,
    hat: &SigmaHat,
    validation_depth: usize,
) -> Result<(usize, StrategyProfile)> {
    let check = validate_shift_invariance(game, validation_depth)?;
    if !check.accepted {
        return Err(GameError::Assertion(match check.witness {
            Some((a, b)) => format!("shift-invariance violated by prefixes {a} and {b}"),
            None => "payoff not declared shift-invariant".into(),
        }));
    }
    let s = tree.state(target.node);
    let policy = SigmaHatPolicy { tree, hat };
    let n = game.num_players();
    let mut tabs: Vec<TabularStrategy> =
        (0..n).map(|_| TabularStrategy::new(tree.depth())).collect();
    let anchor_h = tree.history(target.node).clone();
    for u in tree.subtree(target.node) {
        if tree.is_leaf(u) {
            continue;
        }
        let mix = policy.mixed_profile(game, tree.history(u))?;
        // re-key to the continuation history starting at the anchor state
        let full = tree.history(u);
        let cont = History::from_key(&{
            let mut h = History::root(s);
            for &(p, st) in &full.steps()[anchor_h.steps().len()..] {
                h = h.child(p, st);
            }
            h.key()
        })?;
        for i in 0..n {
            tabs[i].insert(&cont, mix[i].clone());
        }
    }
    Ok((s, StrategyProfile::new(tabs.into_iter().map(BehaviorStrategy::Tabular).collect())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::PayoffKind;

    #[test]
    fn choose_delta_satisfies_and_is_monotone() {
        for &(eps, n) in &[(1.0, 2usize), (0.1, 2), (0.1, 3), (0.02, 3)] {
            let d = choose_delta(eps, n);
            assert!(5.0 * d + 4.0 * (n as f64 + 1.0) * d.powf(0.25) < eps);
            // the next larger grid point must violate the bound
            let d2 = d * 2.0;
            assert!(5.0 * d2 + 4.0 * (n as f64 + 1.0) * d2.powf(0.25) >= eps);
        }
        assert!(choose_delta(0.5, 2) >= choose_delta(0.1, 2));
    }

    fn constant_game() -> Game {
        Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into(), "b".into()]; 2],
            vec![vec![vec![1.0]; 4]],
            PayoffKind::FiniteHorizon {
                horizon: 2,
                rewards: vec![vec![vec![0.0; 4]; 1]; 2],
                terminal: vec![vec![0.5], vec![0.5]],
                table: None,
            },
            false,
        )
        .unwrap()
    }

    #[test]
    fn constant_game_target_is_root_and_gains_zero() {
        let g = constant_game();
        let cfg = SolverConfig::default();
        let rep = solve_subgame(&g, 0, 0.1, None, &cfg).unwrap();
        assert_eq!(rep.target.stage, 1, "constant game settles immediately");
        assert!(rep.pass, "report: {rep:?}");
        assert!(rep.gains.iter().all(|&g| g.abs() < 1e-9));
        assert!(rep.no_exits);
    }

    #[test]
    fn random_two_player_games_pass_at_epsilon_tenth() {
        let cfg = SolverConfig::default();
        let mut x = 0.77f64;
        let mut next = move || {
            x = (x * 57.11 + 0.832).fract();
            x
        };
        for round in 0..4 {
            let np = 4;
            let ns = 2;
            let transitions: Vec<Vec<Vec<f64>>> = (0..ns)
                .map(|_| {
                    (0..np)
                        .map(|_| {
                            let a = next() + 0.01;
                            let b = next() + 0.01;
                            let s = a + b;
                            vec![a / s, b / s]
                        })
                        .collect()
                })
                .collect();
            let g = Game::new(
                vec!["p0".into(), "p1".into()],
                vec!["s0".into(), "s1".into()],
                vec![vec!["a".into(), "b".into()]; 2],
                transitions,
                PayoffKind::FiniteHorizon {
                    horizon: 2,
                    rewards: vec![vec![vec![0.0; np]; ns]; 2],
                    terminal: (0..2).map(|_| (0..ns).map(|_| next()).collect()).collect(),
                    table: None,
                },
                false,
            )
            .unwrap();
            let rep = solve_subgame(&g, 0, 0.1, None, &cfg).unwrap();
            assert!(
                rep.gains_pass && rep.on_path_pass,
                "round {round}: gains {:?} on-path {:?}",
                rep.gains,
                rep.on_path
            );
        }
    }

    #[test]
    fn shift_invariance_rejects_discounted_and_accepts_mean() {
        let mk = |kind: PayoffKind, declared: bool| {
            Game::new(
                vec!["p0".into(), "p1".into()],
                vec!["s0".into(), "s1".into()],
                vec![vec!["a".into(), "b".into()]; 2],
                vec![
                    vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]],
                    vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]],
                ],
                kind,
                declared,
            )
            .unwrap()
        };
        let disc = mk(
            PayoffKind::Discounted {
                rewards: vec![
                    vec![vec![0.9, 0.1, 0.5, 0.3], vec![0.2, 0.8, 0.4, 0.6]],
                    vec![vec![0.1, 0.9, 0.5, 0.7], vec![0.8, 0.2, 0.6, 0.4]],
                ],
                discount: 0.7,
            },
            true,
        );
        let rep = validate_shift_invariance(&disc, 2).unwrap();
        assert!(!rep.accepted);
        assert!(rep.witness.is_some());
        let mean = mk(
            PayoffKind::MeanPayoff {
                rewards: vec![
                    vec![vec![0.9, 0.1, 0.5, 0.3], vec![0.2, 0.8, 0.4, 0.6]],
                    vec![vec![0.1, 0.9, 0.5, 0.7], vec![0.8, 0.2, 0.6, 0.4]],
                ],
            },
            true,
        );
        let rep = validate_shift_invariance(&mean, 2).unwrap();
        assert!(rep.accepted);
        assert!(rep.statistical);
    }
}
