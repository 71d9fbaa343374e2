//! Deviation detection machinery: reach statistics for antichain target sets
//! (with the exact expectation identity), first-crossing minmax sets,
//! stopping times, minimal exit sets and blame functions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{Game, HistoryTree};
use crate::oracle::enumerate;
use crate::strategy::{ProfilePolicy, TreeProfile, WithDeviation};
use crate::values::ValueTable;

// ---------------------------------------------------------------------------
// Target sets
// ---------------------------------------------------------------------------

/// A finite antichain of tree nodes: no element an extension of another.
#[derive(Clone, Debug, Serialize)]
pub struct TargetSet {
    pub nodes: Vec<usize>,
}

impl TargetSet {
    pub fn new(tree: &HistoryTree, mut nodes: Vec<usize>) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        let set: std::collections::BTreeSet<usize> = nodes.iter().copied().collect();
        for &u in &nodes {
            let mut cur = tree.parent(u);
            while let Some(p) = cur {
                if set.contains(&p) {
                    return Err(GameError::Invalid(format!(
                        "target set is not an antichain: {} extends {}",
                        tree.history(u).key(),
                        tree.history(p).key()
                    )));
                }
                cur = tree.parent(p);
            }
        }
        Ok(Self { nodes })
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Stage of the unique prefix of `node` lying in the set, if any
    /// (including `node` itself).
    pub fn entry_stage(&self, tree: &HistoryTree, node: usize) -> Option<usize> {
        let mut cur = Some(node);
        while let Some(u) = cur {
            if self.contains(u) {
                return Some(tree.stage(u));
            }
            cur = tree.parent(u);
        }
        None
    }
}

/// Detection thresholds derived from delta, checked against the ambient
/// epsilon: `5 delta + 4 (n+1) delta^{1/4} < epsilon`.
#[derive(Clone, Debug, Serialize)]
pub struct DetectionConfig {
    pub delta: f64,
    pub threshold: f64,
    pub eta: f64,
    pub seed: u64,
}

impl DetectionConfig {
    pub fn new(delta: f64, epsilon: f64, num_players: usize, seed: u64) -> Result<Self> {
        if !(0.0 < delta && delta < 1.0) {
            return Err(GameError::Invalid(format!("delta {delta} outside (0,1)")));
        }
        let lhs = 5.0 * delta + 4.0 * (num_players as f64 + 1.0) * delta.powf(0.25);
        if lhs >= epsilon {
            return Err(GameError::Invalid(format!(
                "delta {delta} too large for epsilon {epsilon}: bound {lhs}"
            )));
        }
        Ok(Self {
            delta,
            threshold: delta.sqrt(),
            eta: 2.0 * num_players as f64 * delta.powf(0.25),
            seed,
        })
    }
}

// ---------------------------------------------------------------------------
// Reach statistics
// ---------------------------------------------------------------------------

/// Probability that the next-stage history lies in `q` when player `i` plays
/// `a_i` at `node` and the opponents follow the profile. Zero whenever a
/// prefix of the node (including itself) already lies in `q`.
pub fn lambda(
    game: &Game,
    tree: &HistoryTree,
    node: usize,
    i: usize,
    a_i: usize,
    q: &TargetSet,
    opponents: &dyn ProfilePolicy,
) -> Result<f64> {
    if q.entry_stage(tree, node).is_some() {
        return Ok(0.0);
    }
    let mix = opponents.mixed_profile(game, tree.history(node))?;
    let mut total = 0.0;
    for &(p, s2, child) in tree.children(node) {
        if !q.contains(child) {
            continue;
        }
        let acts = game.profile_actions(p);
        if acts[i] != a_i {
            continue;
        }
        let w: f64 = acts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, &a)| mix[j].prob(a))
            .product();
        total += w * game.transition_row(tree.state(node), p)[s2];
    }
    Ok(total)
}

/// Accumulated reach statistic along the run ending at `run_node`, summing
/// the lambda terms for target stages `from..=to` (clamped to the run).
/// Zero when `from > to`.
pub fn zeta(
    game: &Game,
    tree: &HistoryTree,
    run_node: usize,
    i: usize,
    from: usize,
    to: usize,
    q: &TargetSet,
    opponents: &dyn ProfilePolicy,
) -> Result<f64> {
    if from > to {
        return Ok(0.0);
    }
    // collect the run's prefix nodes
    let mut prefix = Vec::new();
    let mut cur = Some(run_node);
    while let Some(u) = cur {
        prefix.push(u);
        cur = tree.parent(u);
    }
    prefix.reverse();
    let root_stage = tree.stage(prefix[0]);
    let mut total = 0.0;
    for k in from.max(root_stage + 1)..=to.min(tree.stage(run_node)) {
        // prefix node at stage k-1, and player i's action leading to stage k
        let prev = prefix[k - 1 - root_stage];
        let at_k = prefix[k - root_stage];
        let (profile, _) = tree.incoming(at_k).expect("non-root has an incoming edge");
        let a_i = game.profile_actions(profile)[i];
        total += lambda(game, tree, prev, i, a_i, q, opponents)?;
    }
    Ok(total)
}

/// First stage `k >= from` with `zeta(run, from, k) >= threshold`, if any.
pub fn nu_stopping(
    game: &Game,
    tree: &HistoryTree,
    run_node: usize,
    i: usize,
    from: usize,
    threshold: f64,
    q: &TargetSet,
    opponents: &dyn ProfilePolicy,
) -> Result<Option<usize>> {
    let mut prefix = Vec::new();
    let mut cur = Some(run_node);
    while let Some(u) = cur {
        prefix.push(u);
        cur = tree.parent(u);
    }
    prefix.reverse();
    let root_stage = tree.stage(prefix[0]);
    let mut acc = 0.0;
    for k in from..=tree.stage(run_node) {
        if k > root_stage {
            let prev = prefix[k - 1 - root_stage];
            let at_k = prefix[k - root_stage];
            let (profile, _) = tree.incoming(at_k).expect("incoming edge");
            let a_i = game.profile_actions(profile)[i];
            acc += lambda(game, tree, prev, i, a_i, q, opponents)?;
        }
        if acc >= threshold {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Incrementally maintained detection statistics for one simulated run.
#[derive(Clone, Debug)]
pub struct DetectionState {
    pub start_stage: usize,
    pub threshold: f64,
    pub zeta: Vec<f64>,
    pub nu: Vec<Option<usize>>,
    pub theta: Option<usize>,
    pub blame: Option<usize>,
}

impl DetectionState {
    pub fn new(num_players: usize, start_stage: usize, threshold: f64) -> Self {
        Self {
            start_stage,
            threshold,
            zeta: vec![0.0; num_players],
            nu: vec![None; num_players],
            theta: None,
            blame: None,
        }
    }

    /// Account one observed step into `child` at stage `stage`.
    pub fn step(
        &mut self,
        game: &Game,
        tree: &HistoryTree,
        parent: usize,
        child: usize,
        stage: usize,
        q_sets: &[TargetSet],
        opponents: &dyn ProfilePolicy,
        exit: Option<(&ExitSet, &BlameFunction)>,
    ) -> Result<()> {
        if stage < self.start_stage.max(tree.stage(parent) + 1) {
            return Ok(());
        }
        let (profile, _) = tree.incoming(child).expect("incoming edge");
        for (i, q) in q_sets.iter().enumerate() {
            let a_i = game.profile_actions(profile)[i];
            self.zeta[i] += lambda(game, tree, parent, i, a_i, q, opponents)?;
            if self.nu[i].is_none() && self.zeta[i] >= self.threshold {
                self.nu[i] = Some(stage);
            }
        }
        if let Some((z, g)) = exit {
            if self.theta.is_none() && z.set.contains(child) {
                self.theta = Some(stage);
                self.blame = Some(g.blame_of(child)?);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The expectation identity
// ---------------------------------------------------------------------------

/// Report of one exact identity check.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub expectation: f64,
    pub probability: f64,
    pub discrepancy: f64,
    pub pass: bool,
}

/// Exact check that the expectation of the reach statistic equals the
/// probability of hitting `q` between `from` and the stopping time, by full
/// enumeration: `E[zeta(r, from, theta(r))] = P(r^k in q for some k in
/// [from, theta(r)])`. The stopping rule is a per-node predicate, evaluated
/// along each run; `None` never stops.
pub fn verify_zeta_identity(
    game: &Game,
    tree: &HistoryTree,
    profile: &dyn ProfilePolicy,
    i: usize,
    q: &TargetSet,
    from: usize,
    stop: Option<&dyn Fn(usize) -> bool>,
    tol: f64,
) -> Result<IdentityReport> {
    let table = enumerate(game, tree, profile, tree.root())?;
    let mut expectation = 0.0;
    let mut probability = 0.0;
    for row in &table.rows {
        // stopping stage along this run
        let mut prefix = Vec::new();
        let mut cur = Some(row.node);
        while let Some(u) = cur {
            prefix.push(u);
            cur = tree.parent(u);
        }
        prefix.reverse();
        let theta = match stop {
            None => usize::MAX,
            Some(rule) => prefix
                .iter()
                .find(|&&u| rule(u))
                .map(|&u| tree.stage(u))
                .unwrap_or(usize::MAX),
        };
        let to = theta.min(tree.stage(row.node));
        let z = zeta(game, tree, row.node, i, from, to, q, profile)?;
        expectation += row.prob * z;
        let hit = prefix.iter().any(|&u| {
            let st = tree.stage(u);
            st >= from && st <= theta && q.contains(u)
        });
        if hit {
            probability += row.prob;
        }
    }
    let discrepancy = (expectation - probability).abs();
    Ok(IdentityReport { expectation, probability, discrepancy, pass: discrepancy <= tol })
}

/// Monte Carlo variant of the identity check: sampled mean of zeta against
/// the sampled hit frequency, compared within `z_score` standard errors.
pub fn verify_zeta_identity_mc(
    game: &Game,
    tree: &HistoryTree,
    profile: &dyn ProfilePolicy,
    i: usize,
    q: &TargetSet,
    from: usize,
    rollouts: usize,
    seed: u64,
    z_score: f64,
) -> Result<IdentityReport> {
    if rollouts == 0 {
        return Err(GameError::Invalid("zero rollouts".into()));
    }
    let root_h = tree.history(tree.root()).clone();
    let stages = tree.depth() - tree.stage(tree.root());
    let mut diffs = Vec::with_capacity(rollouts);
    let mut expectation = 0.0;
    let mut probability = 0.0;
    for k in 0..rollouts {
        let run = crate::game::sample_run(game, profile, &root_h, stages, seed ^ (k as u64))?;
        let node = tree.find(&run).ok_or_else(|| {
            GameError::Invalid("sampled run leaves the enumerated tree".into())
        })?;
        let z = zeta(game, tree, node, i, from, tree.stage(node), q, profile)?;
        let mut hit = 0.0;
        let mut cur = Some(node);
        while let Some(u) = cur {
            if tree.stage(u) >= from && q.contains(u) {
                hit = 1.0;
                break;
            }
            cur = tree.parent(u);
        }
        expectation += z;
        probability += hit;
        diffs.push(z - hit);
    }
    let samples = rollouts as f64;
    expectation /= samples;
    probability /= samples;
    let mean = expectation - probability;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (samples - 1.0).max(1.0);
    let se = (var / samples).sqrt();
    let discrepancy = mean.abs();
    Ok(IdentityReport {
        expectation,
        probability,
        discrepancy,
        pass: discrepancy <= z_score * se.max(1e-12),
    })
}

// ---------------------------------------------------------------------------
// High-minmax sets
// ---------------------------------------------------------------------------

/// Minimal histories in the subtree of `from` where the player's minmax value
/// first exceeds `c_i + 3 delta`.
pub fn high_minmax_set(
    tree: &HistoryTree,
    values: &ValueTable,
    i: usize,
    from: usize,
    c_i: f64,
    delta: f64,
) -> Result<TargetSet> {
    let bar = c_i + 3.0 * delta;
    let mut nodes = Vec::new();
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        if values.minmax(i, u) > bar && u != from {
            nodes.push(u);
            continue; // minimal: do not descend further
        }
        if values.minmax(i, u) > bar && u == from {
            // the anchor itself qualifies; by minimality it is the set
            nodes.push(u);
            continue;
        }
        stack.extend(tree.children(u).iter().map(|&(_, _, id)| id));
    }
    TargetSet::new(tree, nodes)
}

// ---------------------------------------------------------------------------
// Exit sets
// ---------------------------------------------------------------------------

/// Minimal antichain of histories whose cylinders cover the complement of a
/// good set of full-horizon runs within the subtree of an anchor.
#[derive(Clone, Debug, Serialize)]
pub struct ExitSet {
    pub anchor: usize,
    pub set: TargetSet,
    /// True when the good set covers everything: no exits.
    pub no_exits: bool,
}

/// Build the exit set by a bottom-up sweep: a node is all-bad when every leaf
/// under it lies outside the good set; exits are the maximal all-bad nodes,
/// which merges full action-fans by construction.
pub fn exit_set(
    tree: &HistoryTree,
    anchor: usize,
    good_leaf: &dyn Fn(usize) -> bool,
) -> Result<ExitSet> {
    let sub = tree.subtree(anchor);
    let mut all_bad: BTreeMap<usize, bool> = BTreeMap::new();
    for &u in sub.iter().rev() {
        let bad = if tree.is_leaf(u) {
            !good_leaf(u)
        } else {
            tree.children(u).iter().all(|&(_, _, c)| all_bad[&c])
        };
        all_bad.insert(u, bad);
    }
    let mut nodes = Vec::new();
    if all_bad[&anchor] {
        nodes.push(anchor);
    } else {
        for &u in &sub {
            if u == anchor {
                continue;
            }
            if all_bad[&u] && !all_bad[&tree.parent(u).expect("subtree non-root")] {
                nodes.push(u);
            }
        }
    }
    let empty = nodes.is_empty();
    Ok(ExitSet { anchor, set: TargetSet::new(tree, nodes)?, no_exits: empty })
}

/// Stage of the unique prefix of `node` lying in the exit set, if any.
pub fn theta_k(tree: &HistoryTree, z: &ExitSet, node: usize) -> Option<usize> {
    z.set.entry_stage(tree, node)
}

// ---------------------------------------------------------------------------
// Blame
// ---------------------------------------------------------------------------

/// Heuristic blame function on an exit set: for each exit history, blame the
/// player whose realized action sequence has the smallest likelihood under
/// the reference profile (lexicographic tie-break). It depends only on the
/// exit prefix, and its accuracy against the eta target is measured, not
/// assumed.
#[derive(Clone, Debug)]
pub struct BlameFunction {
    pub anchor: usize,
    /// exit node -> (blamed player, tie flag)
    pub table: BTreeMap<usize, (usize, bool)>,
}

impl BlameFunction {
    pub fn build(
        game: &Game,
        tree: &HistoryTree,
        z: &ExitSet,
        reference: &dyn ProfilePolicy,
    ) -> Result<Self> {
        let n = game.num_players();
        let mut table = BTreeMap::new();
        for &exit in &z.set.nodes {
            // likelihood of each player's actions along anchor -> exit
            let mut path = Vec::new();
            let mut cur = exit;
            while cur != z.anchor {
                path.push(cur);
                cur = tree.parent(cur).ok_or_else(|| {
                    GameError::Invalid("exit node does not extend the anchor".into())
                })?;
            }
            path.reverse();
            let mut likelihood = vec![1.0f64; n];
            let mut node = z.anchor;
            for &next in &path {
                let mix = reference.mixed_profile(game, tree.history(node))?;
                let (profile, _) = tree.incoming(next).expect("incoming edge");
                let acts = game.profile_actions(profile);
                for j in 0..n {
                    likelihood[j] *= mix[j].prob(acts[j]);
                }
                node = next;
            }
            let min = likelihood.iter().cloned().fold(f64::INFINITY, f64::min);
            let blamed = likelihood.iter().position(|&l| l <= min + 0.0).unwrap_or(0);
            let ties = likelihood.iter().filter(|&&l| (l - min).abs() < 1e-15).count();
            table.insert(exit, (blamed, ties > 1));
        }
        Ok(Self { anchor: z.anchor, table })
    }

    /// Blame for a node with a prefix in the exit set.
    pub fn blame_of(&self, exit_node: usize) -> Result<usize> {
        self.table
            .get(&exit_node)
            .map(|&(p, _)| p)
            .ok_or_else(|| GameError::Invalid("node not in the exit set".into()))
    }

    /// Blame for any node whose prefix lies in the exit set.
    pub fn blame_by_prefix(&self, tree: &HistoryTree, node: usize) -> Option<usize> {
        let mut cur = Some(node);
        while let Some(u) = cur {
            if let Some(&(p, _)) = self.table.get(&u) {
                return Some(p);
            }
            cur = tree.parent(u);
        }
        None
    }
}

/// Measured false-blame rates: for each player and each deviation strategy in
/// the library, the exact probability of reaching the exit set while the
/// blame lands on someone else.
#[derive(Clone, Debug, Serialize)]
pub struct BlameErrorReport {
    /// `rates[player][deviation]`
    pub rates: Vec<Vec<f64>>,
    pub eta: f64,
    pub worst: f64,
    pub pass: bool,
}

pub fn measure_blame_error(
    game: &Game,
    tree: &HistoryTree,
    z: &ExitSet,
    blame: &BlameFunction,
    reference: &dyn ProfilePolicy,
    deviations: &[TreeProfile],
    eta: f64,
) -> Result<BlameErrorReport> {
    let n = game.num_players();
    let mut rates = vec![Vec::new(); n];
    let mut worst = 0.0f64;
    for i in 0..n {
        for dev in deviations {
            let dev_policy = crate::strategy::BoundTreeProfile { tree, profile: dev };
            let one = OnePlayerView { inner: &dev_policy, player: i };
            let with = WithDeviation { base: reference, player: i, deviation: &one };
            let table = enumerate(game, tree, &with, z.anchor)?;
            let mut rate = 0.0;
            for row in &table.rows {
                if let Some(stage) = z.set.entry_stage(tree, row.node) {
                    let _ = stage;
                    let mut cur = Some(row.node);
                    let mut exit_node = None;
                    while let Some(u) = cur {
                        if z.set.contains(u) {
                            exit_node = Some(u);
                            break;
                        }
                        cur = tree.parent(u);
                    }
                    if let Some(e) = exit_node {
                        if blame.blame_of(e)? != i {
                            rate += row.prob;
                        }
                    }
                }
            }
            worst = worst.max(rate);
            rates[i].push(rate);
        }
    }
    Ok(BlameErrorReport { rates, eta, worst, pass: worst <= eta })
}

/// Adapter viewing one player's row of a profile as a single-player policy.
struct OnePlayerView<'a> {
    inner: &'a dyn ProfilePolicy,
    player: usize,
}

impl crate::strategy::Policy for OnePlayerView<'_> {
    fn mixed_action(
        &self,
        game: &Game,
        h: &crate::game::History,
    ) -> Result<crate::game::MixedAction> {
        Ok(self.inner.mixed_profile(game, h)?[self.player].clone())
    }
}
