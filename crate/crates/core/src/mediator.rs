//! The mediated game: private recommendation messages, the follow-the-
//! recommendation profile with deviation detection and punishment, and the
//! exact best-deviation evaluation by dynamic programming over public
//! histories and the deviator's current recommendation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{EvalMode, Game, HistoryTree, MixedAction};
use crate::martin::MartinFunction;
use crate::oneshot::SolverConfig;
use crate::oracle::{continuation_values, enumerate};
use crate::strategy::{BoundTreeProfile, TreeProfile};
use crate::synth::{acceptable_profile, punishment_profile, PunishmentPlan};
use crate::values::ValueTable;

/// Message sets of the mediated game: a pair (previous recommendation
/// profile, current private recommendation) per player.
#[derive(Clone, Debug, Serialize)]
pub struct MediatedGame {
    /// `|M_i| = |A| * |A_i|` per player.
    pub message_counts: Vec<usize>,
    /// Fixed placeholder profile filling the first coordinate at stage 1.
    pub placeholder_profile: usize,
}

/// One private message: the previous full recommendation profile and the
/// current recommended action for the receiving player.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Message {
    pub previous_profile: usize,
    pub recommendation: usize,
}

/// The mediator plus the follow-recommendations profile and the punishment
/// machinery built on an acceptable profile.
pub struct MediatedSystem {
    pub epsilon: f64,
    pub delta: f64,
    pub game_desc: MediatedGame,
    pub tree: HistoryTree,
    pub values: ValueTable,
    pub martin: MartinFunction,
    pub sigma_star: TreeProfile,
    pub max_regret: f64,
    /// Punishment plans cached by post-deviation anchor node.
    plans: std::cell::RefCell<BTreeMap<(usize, usize), PunishmentPlan>>,
}

/// First detected deviation in a mediated play record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeviationRecord {
    pub stage: usize,
    pub player: usize,
}

/// Scan a public record of (recommended profile, played profile) pairs for
/// the earliest mismatch; ties go to the minimal player index.
pub fn detect_deviation(game: &Game, record: &[(usize, usize)]) -> Option<DeviationRecord> {
    for (k, &(rec, played)) in record.iter().enumerate() {
        if rec == played {
            continue;
        }
        let ra = game.profile_actions(rec);
        let pa = game.profile_actions(played);
        let player = (0..game.num_players())
            .find(|&i| ra[i] != pa[i])
            .expect("profiles differ");
        return Some(DeviationRecord { stage: k + 1, player });
    }
    None
}

/// Build the mediated system for a finite-horizon game: delta = epsilon/2,
/// the acceptable profile for delta, and on-demand punishment plans.
pub fn build_mediated(
    game: &Game,
    s1: usize,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<MediatedSystem> {
    let delta = epsilon / 2.0;
    let (tree, values, martin) = crate::martin::finite_horizon_stack(game, s1, config)?;
    let acc = acceptable_profile(game, &tree, &martin, config)?;
    let message_counts = (0..game.num_players())
        .map(|i| game.num_profiles() * game.num_actions(i))
        .collect();
    Ok(MediatedSystem {
        epsilon,
        delta,
        game_desc: MediatedGame { message_counts, placeholder_profile: 0 },
        tree,
        values,
        martin,
        sigma_star: acc.profile,
        max_regret: acc.max_regret,
        plans: std::cell::RefCell::new(BTreeMap::new()),
    })
}

impl MediatedSystem {
    /// Recommendation mixture at a public-history node.
    pub fn recommendation_mix(&self, node: usize) -> Result<&Vec<MixedAction>> {
        self.sigma_star
            .at(node)
            .ok_or_else(|| GameError::IncompleteStrategy { key: self.tree.history(node).key() })
    }

    /// Punishment plan against `player` anchored at `node`, built on demand
    /// and cached by the anchor history.
    pub fn plan(&self, game: &Game, player: usize, node: usize) -> Result<PunishmentPlan> {
        if let Some(p) = self.plans.borrow().get(&(player, node)) {
            return Ok(p.clone());
        }
        let plan = punishment_profile(game, &self.tree, &self.values, player, node, self.delta)?;
        self.plans.borrow_mut().insert((player, node), plan.clone());
        Ok(plan)
    }
}

/// Draw the per-player messages at a mediator history: identical first
/// coordinates (the previous recommendation profile) and conditionally
/// independent second coordinates sampled from the acceptable profile.
pub fn mediator_step(
    system: &MediatedSystem,
    public_node: usize,
    previous_recommendation: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Message>, usize)> {
    let mix = system.recommendation_mix(public_node)?;
    let recs: Vec<usize> = mix.iter().map(|m| m.sample(rng)).collect();
    let prev = previous_recommendation.unwrap_or(system.game_desc.placeholder_profile);
    let messages = recs
        .iter()
        .map(|&r| Message { previous_profile: prev, recommendation: r })
        .collect();
    let mut profile = 0usize;
    for (m, &r) in mix.iter().zip(&recs) {
        profile = profile * m.len() + r;
    }
    Ok((messages, profile))
}

/// One stage of a simulated mediated play.
#[derive(Clone, Debug, Serialize)]
pub struct MediatedStage {
    pub state: usize,
    pub messages: Vec<Message>,
    pub recommended_profile: usize,
    pub played_profile: usize,
    pub next_state: usize,
}

/// Full transcript of one rollout.
#[derive(Clone, Debug, Serialize)]
pub struct MediatedTranscript {
    pub stages: Vec<MediatedStage>,
    pub payoffs: Vec<f64>,
}

/// Simulate mediated play. Compliant players follow their recommendations;
/// an optional deviator plays a fixed policy instead, and on detection the
/// others switch to the punishment plan anchored one stage after the
/// deviation. Deterministic given the seed.
pub fn simulate_mediated(
    game: &Game,
    system: &MediatedSystem,
    deviator: Option<(usize, &dyn crate::strategy::Policy)>,
    rollouts: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<MediatedTranscript>)> {
    if rollouts == 0 {
        return Err(GameError::Invalid("zero rollouts".into()));
    }
    let n = game.num_players();
    let mut sums = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let mut transcripts = Vec::new();
    for k in 0..rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut node = self_root(system);
        let mut prev_rec: Option<usize> = None;
        let mut punishing: Option<(usize, PunishmentPlan)> = None;
        let mut stages = Vec::new();
        while !system.tree.is_leaf(node) {
            let h = system.tree.history(node);
            let (messages, rec_profile) = mediator_step(system, node, prev_rec, &mut rng)?;
            let rec_actions = game.profile_actions(rec_profile);
            let mut played = rec_actions.clone();
            if let Some((who, plan)) = &punishing {
                let mix = plan
                    .coalition
                    .at(node)
                    .ok_or_else(|| GameError::IncompleteStrategy { key: h.key() })?;
                for j in 0..n {
                    if j != *who {
                        played[j] = mix[j].sample(&mut rng);
                    }
                }
                // the punished player best-responds only through an explicit
                // deviator policy; otherwise she keeps following
                if let Some((dev, policy)) = deviator {
                    if dev == *who {
                        played[dev] = policy.mixed_action(game, h)?.sample(&mut rng);
                    }
                }
            } else if let Some((dev, policy)) = deviator {
                played[dev] = policy.mixed_action(game, h)?.sample(&mut rng);
            }
            let played_profile = game.profile_index(&played);
            // transition
            let row = game.transition_row(system.tree.state(node), played_profile);
            let u: f64 = rand::Rng::gen(&mut rng);
            let mut acc = 0.0;
            let mut next_state = row.len() - 1;
            for (s2, &pr) in row.iter().enumerate() {
                acc += pr;
                if u < acc {
                    next_state = s2;
                    break;
                }
            }
            let child = system
                .tree
                .children(node)
                .iter()
                .find(|&&(p, s2, _)| p == played_profile && s2 == next_state)
                .map(|&(_, _, id)| id)
                .ok_or_else(|| GameError::Invalid("walked off the tree".into()))?;
            stages.push(MediatedStage {
                state: system.tree.state(node),
                messages,
                recommended_profile: rec_profile,
                played_profile,
                next_state,
            });
            // detection: mismatch becomes public at the next stage
            if punishing.is_none() && played_profile != rec_profile {
                let rec = detect_deviation(
                    game,
                    &[(rec_profile, played_profile)],
                )
                .expect("profiles differ");
                let plan = system.plan(game, rec.player, child)?;
                punishing = Some((rec.player, plan));
            }
            prev_rec = Some(rec_profile);
            node = child;
        }
        let payoffs = game.payoff_eval(system.tree.history(node), EvalMode::Exact)?.values;
        for i in 0..n {
            sums[i] += payoffs[i];
            sumsq[i] += payoffs[i] * payoffs[i];
        }
        if transcripts.len() < 16 {
            transcripts.push(MediatedTranscript { stages: stages.clone(), payoffs });
        }
    }
    let m = rollouts as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let ses: Vec<f64> = (0..n)
        .map(|i| {
            let var = (sumsq[i] / m - means[i] * means[i]).max(0.0);
            (var / m).sqrt()
        })
        .collect();
    Ok((means, ses, transcripts))
}

fn self_root(system: &MediatedSystem) -> usize {
    system.tree.root()
}

/// Report of the exact best-deviation evaluation for one player.
#[derive(Clone, Debug, Serialize)]
pub struct DeviationGainReport {
    pub player: usize,
    pub comply_value: f64,
    pub best_deviation_value: f64,
    pub gain: f64,
    pub bound: f64,
    pub pass: bool,
    /// Any punishment plan used was flagged widened (bracket slack).
    pub widened_plans: bool,
}

/// Exact maximum gain of player `i` over all deviation strategies in the
/// mediated game, by dynamic programming over (public history, current
/// recommendation); the belief over the others' current recommendations is
/// their recommendation mixture by conditional independence. The deviator
/// plays optimally during punishment as well. Asserts the gain against
/// `2 delta = epsilon` plus tolerance.
pub fn best_deviation_gain(
    game: &Game,
    system: &MediatedSystem,
    i: usize,
    tol: f64,
) -> Result<DeviationGainReport> {
    let tree = &system.tree;
    let n = game.num_players();

    // exact punishment continuation value at every possible anchor, one pass
    let pun = crate::synth::punishment_values(game, tree, &system.values, i)?;
    let mut widened = false;
    for node in tree.node_ids() {
        if pun[node] > system.values.minmax(i, node) + system.delta + 1e-9 {
            widened = true;
        }
    }
    let pun_at = |node: usize, _w: &mut bool| -> Result<f64> { Ok(pun[node]) };

    // U[node][rec]: optimal continuation value with its recommendation known
    let mut u: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    for node in tree.bottom_up() {
        if tree.is_leaf(node) {
            let p = game.payoff_eval(tree.history(node), EvalMode::Exact)?.values[i];
            u[node] = vec![p; game.num_actions(i)];
            continue;
        }
        let mix = system.recommendation_mix(node)?.clone();
        let mut per_rec = Vec::with_capacity(game.num_actions(i));
        for rec in 0..game.num_actions(i) {
            let mut best = f64::NEG_INFINITY;
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
                    if w == 0.0 {
                        continue;
                    }
                    let tp = game.transition_row(tree.state(node), p)[s2];
                    let cont = if a == rec {
                        // still compliant: average over the next recommendation
                        if tree.is_leaf(child) {
                            u[child][0]
                        } else {
                            let next_mix = system.recommendation_mix(child)?;
                            (0..game.num_actions(i))
                                .map(|r2| next_mix[i].prob(r2) * u[child][r2])
                                .sum()
                        }
                    } else {
                        // detected next stage: punished from the child on
                        pun_at(child, &mut widened)?
                    };
                    v += w * tp * cont;
                }
                best = best.max(v);
            }
            per_rec.push(best);
        }
        u[node] = per_rec;
    }
    let root = tree.root();
    let comply = {
        let bound = BoundTreeProfile { tree, profile: &system.sigma_star };
        continuation_values(game, tree, &bound)?[i][root]
    };
    let best_dev = if tree.is_leaf(root) {
        u[root][0]
    } else {
        let mix = system.recommendation_mix(root)?;
        (0..game.num_actions(i)).map(|r| mix[i].prob(r) * u[root][r]).sum()
    };
    let gain = best_dev - comply;
    let bound = 2.0 * system.delta + tol;
    let _ = n;
    Ok(DeviationGainReport {
        player: i,
        comply_value: comply,
        best_deviation_value: best_dev,
        gain,
        bound,
        pass: gain <= bound,
        widened_plans: widened,
    })
}

/// Exact leaf distribution of compliant mediated play, walking the tree with
/// the mediator's recommendation draws and the follow-recommendation rule.
pub fn mediated_compliant_distribution(
    game: &Game,
    system: &MediatedSystem,
) -> Result<BTreeMap<usize, f64>> {
    let tree = &system.tree;
    let mut prob = vec![0.0f64; tree.len()];
    prob[tree.root()] = 1.0;
    let mut out = BTreeMap::new();
    for node in tree.node_ids() {
        if prob[node] == 0.0 {
            continue;
        }
        if tree.is_leaf(node) {
            out.insert(node, prob[node]);
            continue;
        }
        // the mediator draws recommendations independently per player; the
        // compliant profile plays exactly the recommended profile
        let mix = system.recommendation_mix(node)?;
        for &(p, s2, child) in tree.children(node) {
            let acts = game.profile_actions(p);
            let w: f64 = acts.iter().enumerate().map(|(j, &a)| mix[j].prob(a)).product();
            if w > 0.0 {
                prob[child] += prob[node] * w * game.transition_row(tree.state(node), p)[s2];
            }
        }
    }
    Ok(out)
}

/// Exact check that compliant mediated play induces the same distribution
/// over full-horizon histories as the underlying acceptable profile.
pub fn verify_no_deviation_distribution(
    game: &Game,
    system: &MediatedSystem,
    tol: f64,
) -> Result<(bool, f64)> {
    let bound = BoundTreeProfile { tree: &system.tree, profile: &system.sigma_star };
    let direct = enumerate(game, &system.tree, &bound, system.tree.root())?;
    let mediated = mediated_compliant_distribution(game, system)?;
    let mut worst = 0.0f64;
    let mut seen = 0usize;
    for row in &direct.rows {
        let m = mediated.get(&row.node).copied().unwrap_or(0.0);
        worst = worst.max((row.prob - m).abs());
        if m > 0.0 {
            seen += 1;
        }
    }
    if seen != mediated.len() {
        return Ok((false, f64::INFINITY));
    }
    Ok((worst <= tol, worst))
}
