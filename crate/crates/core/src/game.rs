//! Game model: states, actions, transitions, payoff specifications, histories
//! and exact forward evaluation for finite-horizon play.
//!
//! Payoffs are normalized into [0,1] at load time; the recorded affine maps
//! let reports denormalize back to the original scale.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Tolerance for probability-vector validation (row sums, mixed actions).
pub const PROB_TOL: f64 = 1e-12;

/// Default cap on the number of enumerated histories.
pub const DEFAULT_HISTORY_CAP: usize = 200_000;

/// Cap on full-horizon histories used by oracle enumeration.
pub const ORACLE_LEAF_CAP: usize = 20_000;

// ---------------------------------------------------------------------------
// Mixed actions
// ---------------------------------------------------------------------------

/// A probability distribution over one player's actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedAction {
    probs: Vec<f64>,
}

impl MixedAction {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(GameError::Invalid("mixed action over empty set".into()));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < -PROB_TOL) || (sum - 1.0).abs() > 1e-9 {
            return Err(GameError::Invalid(format!(
                "mixed action not a probability vector (sum {sum})"
            )));
        }
        let probs = probs.iter().map(|&p| p.max(0.0)).collect();
        Ok(Self { probs })
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[action] = 1.0;
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(a, _)| a)
            .collect()
    }

    /// Sample an action; deterministic given the rng state.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.probs.len() - 1
    }
}

/// One mixed action per player.
pub type MixedActionProfile = Vec<MixedAction>;

// ---------------------------------------------------------------------------
// Histories
// ---------------------------------------------------------------------------

/// A finite alternating sequence of states and action profiles with positive
/// transition probability throughout. `stage` counts states, so the trivial
/// history at the initial state has stage 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct History {
    initial: usize,
    steps: Vec<(usize, usize)>, // (profile index, next state)
}

impl History {
    pub fn root(initial: usize) -> Self {
        Self { initial, steps: Vec::new() }
    }

    pub fn stage(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    pub fn last_state(&self) -> usize {
        self.steps.last().map(|&(_, s)| s).unwrap_or(self.initial)
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    /// State at a 1-based stage index (stage 1 is the initial state).
    pub fn state_at(&self, stage: usize) -> usize {
        if stage == 1 {
            self.initial
        } else {
            self.steps[stage - 2].1
        }
    }

    /// Profile played at a 1-based stage index (leading from stage to stage+1).
    pub fn profile_at(&self, stage: usize) -> usize {
        self.steps[stage - 1].0
    }

    pub fn child(&self, profile: usize, state: usize) -> Self {
        let mut steps = self.steps.clone();
        steps.push((profile, state));
        Self { initial: self.initial, steps }
    }

    pub fn prefix(&self, stage: usize) -> Self {
        assert!(stage >= 1 && stage <= self.stage());
        Self { initial: self.initial, steps: self.steps[..stage - 1].to_vec() }
    }

    pub fn is_prefix_of(&self, other: &History) -> bool {
        self.initial == other.initial
            && self.steps.len() <= other.steps.len()
            && self.steps[..] == other.steps[..self.steps.len()]
    }

    /// Concatenation; `other` must start at this history's final state.
    pub fn concat(&self, other: &History) -> Result<Self> {
        if other.initial != self.last_state() {
            return Err(GameError::Invalid(format!(
                "cannot concatenate: history ends at state {} but continuation starts at {}",
                self.last_state(),
                other.initial
            )));
        }
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        Ok(Self { initial: self.initial, steps })
    }

    /// Canonical string key, part of the serialization contract.
    pub fn key(&self) -> String {
        let mut s = self.initial.to_string();
        for &(p, st) in &self.steps {
            s.push('|');
            s.push_str(&p.to_string());
            s.push('.');
            s.push_str(&st.to_string());
        }
        s
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let mut parts = key.split('|');
        let initial = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GameError::Parse(format!("bad history key {key}")))?;
        let mut steps = Vec::new();
        for part in parts {
            let (p, s) = part
                .split_once('.')
                .ok_or_else(|| GameError::Parse(format!("bad history key {key}")))?;
            steps.push((
                p.parse().map_err(|_| GameError::Parse(format!("bad history key {key}")))?,
                s.parse().map_err(|_| GameError::Parse(format!("bad history key {key}")))?,
            ));
        }
        Ok(Self { initial, steps })
    }
}

// ---------------------------------------------------------------------------
// Payoff specification
// ---------------------------------------------------------------------------

/// Affine record mapping normalized values back to the original scale:
/// `raw = offset + scale * normalized`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Self { scale: 1.0, offset: 0.0 }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.offset + self.scale * v
    }
}

/// Stage rewards, indexed `[player][state][profile]`.
pub type Rewards = Vec<Vec<Vec<f64>>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PayoffKind {
    FiniteHorizon {
        horizon: usize,
        rewards: Rewards,
        terminal: Vec<Vec<f64>>, // [player][state]
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<BTreeMap<String, Vec<f64>>>, // full-horizon history key -> payoffs
    },
    Discounted {
        rewards: Rewards,
        discount: f64,
    },
    Reachability {
        targets: Vec<Vec<usize>>, // per player, state ids
    },
    MeanPayoff {
        rewards: Rewards,
    },
}

impl PayoffKind {
    pub fn class_name(&self) -> &'static str {
        match self {
            PayoffKind::FiniteHorizon { .. } => "finite_horizon",
            PayoffKind::Discounted { .. } => "discounted",
            PayoffKind::Reachability { .. } => "reachability",
            PayoffKind::MeanPayoff { .. } => "mean_payoff",
        }
    }
}

/// Payoff specification. Evaluation composes three layers:
/// normalized kind evaluation, then the per-player view map
/// `view_shift + view_scale * value` (used by subgame views), with `norm`
/// recording how to map back to the original scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub norm: Vec<Affine>,
    pub view_scale: Vec<f64>,
    pub view_shift: Vec<f64>,
    #[serde(default)]
    pub declared_shift_invariant: bool,
}

/// Result of a payoff evaluation.
#[derive(Clone, Debug)]
pub struct PayoffOutcome {
    pub values: Vec<f64>,
    pub exact: bool,
    pub truncation_stage: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    Truncated,
}

// ---------------------------------------------------------------------------
// Game
// ---------------------------------------------------------------------------

/// A finite multiplayer stochastic game. Action sets are state-independent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Game {
    pub players: Vec<String>,
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>, // per player
    /// Dense transitions `[state][profile][state]`, profile index in
    /// lexicographic action order with player 0 most significant.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub payoff: PayoffSpec,
}

/// One invariant violation found by `validate`.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
}

impl Game {
    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self, player: usize) -> usize {
        self.actions[player].len()
    }

    pub fn num_profiles(&self) -> usize {
        self.actions.iter().map(|a| a.len()).product()
    }

    /// Decode a profile index into per-player actions (player 0 most significant).
    pub fn profile_actions(&self, mut profile: usize) -> Vec<usize> {
        let n = self.num_players();
        let mut out = vec![0; n];
        for i in (0..n).rev() {
            let k = self.num_actions(i);
            out[i] = profile % k;
            profile /= k;
        }
        out
    }

    pub fn profile_index(&self, actions: &[usize]) -> usize {
        let mut idx = 0;
        for (i, &a) in actions.iter().enumerate() {
            idx = idx * self.num_actions(i) + a;
        }
        idx
    }

    pub fn transition_row(&self, state: usize, profile: usize) -> &[f64] {
        &self.transitions[state][profile]
    }

    pub fn successors(&self, state: usize, profile: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.transitions[state][profile]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| (s, p))
    }

    /// Probability that the action profile `a_{-i}` (encoded as a full profile
    /// whose i-th component is ignored) is drawn by the opponents.
    pub fn opponents_prob(&self, profile_actions: &[usize], i: usize, mix: &[MixedAction]) -> f64 {
        profile_actions
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, &a)| mix[j].prob(a))
            .product()
    }

    // -- construction and validation ----------------------------------------

    /// Build a game from raw parts, normalizing payoffs into [0,1].
    pub fn new(
        players: Vec<String>,
        states: Vec<String>,
        actions: Vec<Vec<String>>,
        transitions: Vec<Vec<Vec<f64>>>,
        kind: PayoffKind,
        declared_shift_invariant: bool,
    ) -> Result<Self> {
        let n = players.len();
        let (kind, norm) = normalize_payoffs(kind, n)?;
        let payoff = PayoffSpec {
            kind,
            norm,
            view_scale: vec![1.0; n],
            view_shift: vec![0.0; n],
            declared_shift_invariant,
        };
        Ok(Self { players, states, actions, transitions, payoff })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GameFile =
            serde_json::from_str(text).map_err(|e| GameError::Parse(e.to_string()))?;
        file.into_game()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GameFile::from_game(self)).expect("serializable")
    }

    /// Check every structural invariant; an empty report means the game is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind: &str, detail: String| {
            out.push(Violation { kind: kind.into(), detail });
        };
        if self.players.len() < 2 {
            push("players", format!("need at least 2 players, got {}", self.players.len()));
        }
        if self.states.is_empty() {
            push("states", "no states".into());
        }
        for (i, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                push("empty action set", format!("player {i} has no actions"));
            }
        }
        if self.actions.len() != self.players.len() {
            push("actions", "action sets do not match player count".into());
        }
        let np = self.num_profiles();
        if self.transitions.len() != self.states.len() {
            push("transitions", "transition table does not match state count".into());
        }
        for (s, rows) in self.transitions.iter().enumerate() {
            if rows.len() != np {
                push("transitions", format!("state {s} has {} profile rows, expected {np}", rows.len()));
                continue;
            }
            for (p, row) in rows.iter().enumerate() {
                if row.len() != self.states.len() {
                    push("transitions", format!("row ({s},{p}) has wrong length"));
                    continue;
                }
                if row.iter().any(|&x| x < 0.0) {
                    push("row negative", format!("row ({s},{p}) has a negative entry"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    push("row sum", format!("row ({s},{p}) sums to {sum}"));
                }
            }
        }
        match &self.payoff.kind {
            PayoffKind::FiniteHorizon { horizon, rewards, terminal, table } => {
                if *horizon == 0 && self.payoff.view_scale.iter().any(|&s| s != 0.0) {
                    push("horizon", "horizon must be positive".into());
                }
                self.check_rewards(rewards, &mut push);
                if terminal.len() != self.players.len()
                    || terminal.iter().any(|t| t.len() != self.states.len())
                {
                    push("terminal", "terminal payoff table has wrong shape".into());
                }
                if let Some(tbl) = table {
                    self.check_table(tbl, *horizon, &mut push);
                }
            }
            PayoffKind::Discounted { rewards, discount } => {
                self.check_rewards(rewards, &mut push);
                if !(*discount > 0.0 && *discount < 1.0) {
                    push("discount", format!("discount {discount} outside (0,1)"));
                }
            }
            PayoffKind::Reachability { targets } => {
                if targets.len() != self.players.len() {
                    push("targets", "per-player target sets missing".into());
                }
                for (i, t) in targets.iter().enumerate() {
                    for &s in t {
                        if s >= self.states.len() {
                            push("unknown state", format!("player {i} target state {s} unknown"));
                        }
                    }
                }
            }
            PayoffKind::MeanPayoff { rewards } => self.check_rewards(rewards, &mut push),
        }
        out
    }

    fn check_rewards(&self, rewards: &Rewards, push: &mut impl FnMut(&str, String)) {
        if rewards.len() != self.players.len() {
            push("rewards", "reward table does not match player count".into());
            return;
        }
        let np = self.num_profiles();
        for (i, per_state) in rewards.iter().enumerate() {
            if per_state.len() != self.states.len()
                || per_state.iter().any(|r| r.len() != np)
            {
                push("rewards", format!("reward table for player {i} has wrong shape"));
            }
        }
    }

    fn check_table(
        &self,
        table: &BTreeMap<String, Vec<f64>>,
        horizon: usize,
        push: &mut impl FnMut(&str, String),
    ) {
        // The explicit table must cover exactly all positive-probability
        // full-horizon histories from every state.
        for s1 in 0..self.num_states() {
            let tree = match HistoryTree::build(self, History::root(s1), horizon + 1, None) {
                Ok(t) => t,
                Err(e) => {
                    push("table", format!("cannot enumerate horizon tree: {e}"));
                    return;
                }
            };
            for node in tree.node_ids() {
                if tree.stage(node) == horizon + 1 {
                    let key = tree.history(node).key();
                    match table.get(&key) {
                        None => push("table", format!("missing entry for history {key}")),
                        Some(v) if v.len() != self.num_players() => {
                            push("table", format!("entry for {key} has wrong arity"))
                        }
                        _ => {}
                    }
                }
            }
        }
        let full: usize = (0..self.num_states())
            .map(|s1| {
                HistoryTree::build(self, History::root(s1), horizon + 1, None)
                    .map(|t| t.node_ids().filter(|&n| t.stage(n) == horizon + 1).count())
                    .unwrap_or(0)
            })
            .sum();
        if table.len() > full {
            push("table", format!("table has {} entries, expected {full}", table.len()));
        }
    }

    // -- payoff evaluation ---------------------------------------------------

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.payoff.norm)
            .map(|(&v, a)| a.denormalize(v))
            .collect()
    }

    /// Evaluate the (normalized) payoff on a history prefix.
    pub fn payoff_eval(&self, prefix: &History, mode: EvalMode) -> Result<PayoffOutcome> {
        let n = self.num_players();
        let spec = &self.payoff;
        let finish = |raw: Vec<f64>, exact: bool, trunc: Option<usize>| PayoffOutcome {
            values: raw
                .iter()
                .enumerate()
                .map(|(i, &v)| spec.view_shift[i] + spec.view_scale[i] * v)
                .collect(),
            exact,
            truncation_stage: trunc,
        };
        match &spec.kind {
            PayoffKind::FiniteHorizon { horizon, rewards, terminal, table } => {
                let need = horizon + 1;
                if mode == EvalMode::Exact && prefix.stage() < need {
                    return Err(GameError::Invalid(format!(
                        "exact finite-horizon payoff needs stage >= {need}, prefix has stage {}",
                        prefix.stage()
                    )));
                }
                if let Some(tbl) = table {
                    if prefix.stage() >= need {
                        let key = prefix.prefix(need).key();
                        let vals = tbl.get(&key).ok_or_else(|| {
                            GameError::Invalid(format!("payoff table missing history {key}"))
                        })?;
                        return Ok(finish(vals.clone(), true, None));
                    }
                    // Truncated: unknown continuation, report accumulated zero.
                    return Ok(finish(vec![0.0; n], false, Some(prefix.stage())));
                }
                let upto = prefix.stage().min(need);
                let mut raw = vec![0.0; n];
                for stage in 1..upto {
                    let s = prefix.state_at(stage);
                    let p = prefix.profile_at(stage);
                    for i in 0..n {
                        raw[i] += rewards[i][s][p];
                    }
                }
                let exact = prefix.stage() >= need;
                if exact {
                    let s_t = prefix.state_at(need);
                    for i in 0..n {
                        raw[i] += terminal[i][s_t];
                    }
                }
                Ok(finish(raw, exact, if exact { None } else { Some(prefix.stage()) }))
            }
            PayoffKind::Discounted { rewards, discount } => {
                if mode == EvalMode::Exact {
                    return Err(GameError::Unsupported {
                        class: "discounted".into(),
                        what: "exact payoff from a finite prefix".into(),
                    });
                }
                let mut raw = vec![0.0; n];
                let mut w = 1.0 - discount;
                for stage in 1..prefix.stage() {
                    let s = prefix.state_at(stage);
                    let p = prefix.profile_at(stage);
                    for i in 0..n {
                        raw[i] += w * rewards[i][s][p];
                    }
                    w *= discount;
                }
                Ok(finish(raw, false, Some(prefix.stage())))
            }
            PayoffKind::Reachability { targets } => {
                let mut raw = vec![0.0; n];
                let mut undecided = Vec::new();
                for i in 0..n {
                    let hit = (1..=prefix.stage()).any(|k| targets[i].contains(&prefix.state_at(k)));
                    if hit {
                        raw[i] = 1.0;
                    } else if mode == EvalMode::Exact {
                        if self.target_reachable(prefix.last_state(), &targets[i]) {
                            undecided.push(i);
                        }
                        // certified unreachable: payoff stays 0 exactly
                    }
                }
                if mode == EvalMode::Exact && !undecided.is_empty() {
                    return Err(GameError::Invalid(format!(
                        "reachability not decided by prefix for players {undecided:?}"
                    )));
                }
                let exact = mode == EvalMode::Exact;
                Ok(finish(raw, exact, if exact { None } else { Some(prefix.stage()) }))
            }
            PayoffKind::MeanPayoff { rewards } => {
                if mode == EvalMode::Exact {
                    return Err(GameError::Unsupported {
                        class: "mean_payoff".into(),
                        what: "exact payoff evaluation".into(),
                    });
                }
                let rounds = prefix.stage().saturating_sub(1).max(1);
                let mut raw = vec![0.0; n];
                for stage in 1..prefix.stage() {
                    let s = prefix.state_at(stage);
                    let p = prefix.profile_at(stage);
                    for i in 0..n {
                        raw[i] += rewards[i][s][p] / rounds as f64;
                    }
                }
                Ok(finish(raw, false, Some(prefix.stage())))
            }
        }
    }

    /// True when some state in `targets` is reachable from `from` under some
    /// action sequence (graph reachability over positive-probability edges).
    fn target_reachable(&self, from: usize, targets: &[usize]) -> bool {
        let mut seen = vec![false; self.num_states()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(s) = stack.pop() {
            if targets.contains(&s) {
                return true;
            }
            for p in 0..self.num_profiles() {
                for (s2, _) in self.successors(s, p) {
                    if !seen[s2] {
                        seen[s2] = true;
                        stack.push(s2);
                    }
                }
            }
        }
        false
    }

    /// Horizon needed to evaluate payoffs exactly on tree leaves, if any.
    pub fn exact_depth(&self) -> Option<usize> {
        match &self.payoff.kind {
            PayoffKind::FiniteHorizon { horizon, .. } => Some(horizon + 1),
            _ => None,
        }
    }

    // -- subgame views --------------------------------------------------------

    /// The subgame starting at `h`: same dynamics from `h`'s final state, with
    /// the payoff composing the prefix: `f_{i,h}(r) = f_i(hr)`.
    pub fn subgame_view(&self, h: &History) -> Result<SubgameView> {
        let n = self.num_players();
        let m = h.stage();
        let mut g = self.clone();
        let mut degenerate = false;
        match &self.payoff.kind {
            PayoffKind::FiniteHorizon { horizon, rewards, terminal, table } => {
                let consumed = m - 1;
                let remaining = horizon.saturating_sub(consumed);
                // accumulated normalized reward along the prefix
                let mut acc = vec![0.0; n];
                for stage in 1..m.min(horizon + 1) {
                    let s = h.state_at(stage);
                    let p = h.profile_at(stage);
                    for i in 0..n {
                        acc[i] += rewards[i][s][p];
                    }
                }
                if remaining == 0 {
                    // Degenerate: the payoff is fully determined by the prefix.
                    degenerate = true;
                    let full = h.prefix((horizon + 1).min(m));
                    let outcome = self.payoff_eval(&full, EvalMode::Exact)?;
                    for i in 0..n {
                        g.payoff.view_shift[i] = outcome.values[i];
                        g.payoff.view_scale[i] = 0.0;
                    }
                    g.payoff.kind = PayoffKind::FiniteHorizon {
                        horizon: 0,
                        rewards: rewards.clone(),
                        terminal: terminal.clone(),
                        table: None,
                    };
                } else {
                    for i in 0..n {
                        g.payoff.view_shift[i] += g.payoff.view_scale[i] * acc[i];
                    }
                    let new_table = match table {
                        None => None,
                        Some(tbl) => {
                            let mut t = BTreeMap::new();
                            for (key, vals) in tbl {
                                let full = History::from_key(key)?;
                                if h.is_prefix_of(&full) {
                                    let cont = History {
                                        initial: h.last_state(),
                                        steps: full.steps[m - 1..].to_vec(),
                                    };
                                    // table values already include the prefix part
                                    t.insert(cont.key(), vals.clone());
                                }
                            }
                            // undo the shift: the table carries run totals
                            for i in 0..n {
                                g.payoff.view_shift[i] -= g.payoff.view_scale[i] * acc[i];
                            }
                            Some(t)
                        }
                    };
                    g.payoff.kind = PayoffKind::FiniteHorizon {
                        horizon: remaining,
                        rewards: rewards.clone(),
                        terminal: terminal.clone(),
                        table: new_table,
                    };
                }
            }
            PayoffKind::Discounted { rewards, discount } => {
                let mut acc = vec![0.0; n];
                let mut w = 1.0 - discount;
                for stage in 1..m {
                    let s = h.state_at(stage);
                    let p = h.profile_at(stage);
                    for i in 0..n {
                        acc[i] += w * rewards[i][s][p];
                    }
                    w *= discount;
                }
                let scale = discount.powi((m - 1) as i32);
                for i in 0..n {
                    g.payoff.view_shift[i] += g.payoff.view_scale[i] * acc[i];
                    g.payoff.view_scale[i] *= scale;
                }
            }
            PayoffKind::Reachability { targets } => {
                for i in 0..n {
                    let hit = (1..=m).any(|k| targets[i].contains(&h.state_at(k)));
                    if hit {
                        g.payoff.view_shift[i] += g.payoff.view_scale[i];
                        g.payoff.view_scale[i] = 0.0;
                    }
                }
            }
            PayoffKind::MeanPayoff { .. } => {} // prefix-independent
        }
        Ok(SubgameView { initial_state: h.last_state(), game: g, degenerate })
    }
}

/// A subgame anchored at a history: the same dynamics with the payoff
/// composed with the prefix.
#[derive(Clone, Debug)]
pub struct SubgameView {
    pub initial_state: usize,
    pub game: Game,
    pub degenerate: bool,
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

fn minmax_of(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

fn normalize_payoffs(kind: PayoffKind, n: usize) -> Result<(PayoffKind, Vec<Affine>)> {
    let mut norm = vec![Affine::identity(); n];
    let kind = match kind {
        PayoffKind::FiniteHorizon { horizon, mut rewards, mut terminal, mut table } => {
            if horizon == 0 {
                return Err(GameError::Invalid("horizon must be positive".into()));
            }
            for i in 0..n {
                let (lo, hi) = if let Some(tbl) = &table {
                    minmax_of(tbl.values().map(|v| v[i]))
                } else {
                    let (zl, zh) = minmax_of(rewards[i].iter().flatten().copied());
                    let (gl, gh) = minmax_of(terminal[i].iter().copied());
                    (horizon as f64 * zl + gl, horizon as f64 * zh + gh)
                };
                if lo >= 0.0 && hi <= 1.0 {
                    continue;
                }
                let scale = if hi > lo { hi - lo } else { 1.0 };
                norm[i] = Affine { scale, offset: lo };
                if let Some(tbl) = &mut table {
                    for v in tbl.values_mut() {
                        v[i] = (v[i] - lo) / scale;
                    }
                    // keep rewards consistent (unused when a table is present)
                    for r in rewards[i].iter_mut().flatten() {
                        *r = 0.0;
                    }
                    for t in terminal[i].iter_mut() {
                        *t = 0.0;
                    }
                } else {
                    for r in rewards[i].iter_mut().flatten() {
                        *r /= scale;
                    }
                    // distribute the offset into the terminal payoff
                    for t in terminal[i].iter_mut() {
                        *t = (*t - lo) / scale;
                    }
                }
            }
            PayoffKind::FiniteHorizon { horizon, rewards, terminal, table }
        }
        PayoffKind::Discounted { mut rewards, discount } => {
            if !(discount > 0.0 && discount < 1.0) {
                return Err(GameError::Invalid(format!("discount {discount} outside (0,1)")));
            }
            for i in 0..n {
                let (lo, hi) = minmax_of(rewards[i].iter().flatten().copied());
                if lo >= 0.0 && hi <= 1.0 {
                    continue;
                }
                let scale = if hi > lo { hi - lo } else { 1.0 };
                norm[i] = Affine { scale, offset: lo };
                for r in rewards[i].iter_mut().flatten() {
                    *r = (*r - lo) / scale;
                }
            }
            PayoffKind::Discounted { rewards, discount }
        }
        PayoffKind::Reachability { targets } => PayoffKind::Reachability { targets },
        PayoffKind::MeanPayoff { mut rewards } => {
            for i in 0..n {
                let (lo, hi) = minmax_of(rewards[i].iter().flatten().copied());
                if lo >= 0.0 && hi <= 1.0 {
                    continue;
                }
                let scale = if hi > lo { hi - lo } else { 1.0 };
                norm[i] = Affine { scale, offset: lo };
                for r in rewards[i].iter_mut().flatten() {
                    *r = (*r - lo) / scale;
                }
            }
            PayoffKind::MeanPayoff { rewards }
        }
    };
    Ok((kind, norm))
}

// ---------------------------------------------------------------------------
// History tree
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct TreeNode {
    parent: Option<usize>,
    via: Option<(usize, usize)>, // (profile, state)
    state: usize,
    stage: usize,
    children: Vec<(usize, usize, usize)>, // (profile, state, node), sorted
}

/// All positive-probability histories extending a root history up to a depth,
/// enumerated breadth-first in deterministic lexicographic order.
#[derive(Clone, Debug)]
pub struct HistoryTree {
    nodes: Vec<TreeNode>,
    histories: Vec<History>,
    depth: usize,
}

impl HistoryTree {
    /// Enumerate histories with stage <= `depth` (absolute stages, counting the
    /// root history's stage). Fails with the count when the cap is exceeded.
    pub fn build(game: &Game, root: History, depth: usize, cap: Option<usize>) -> Result<Self> {
        let cap = cap.unwrap_or(DEFAULT_HISTORY_CAP);
        let root_stage = root.stage();
        if root_stage > depth {
            return Err(GameError::Invalid(format!(
                "root history has stage {root_stage}, beyond depth {depth}"
            )));
        }
        let mut nodes = vec![TreeNode {
            parent: None,
            via: None,
            state: root.last_state(),
            stage: root_stage,
            children: Vec::new(),
        }];
        let mut histories = vec![root];
        let mut next = 0usize;
        while next < nodes.len() {
            let u = next;
            next += 1;
            if nodes[u].stage >= depth {
                continue;
            }
            let s = nodes[u].state;
            let stage = nodes[u].stage;
            for p in 0..game.num_profiles() {
                for (s2, _) in game.successors(s, p) {
                    let id = nodes.len();
                    if id >= cap {
                        return Err(GameError::CapExceeded { count: id + 1, cap });
                    }
                    nodes.push(TreeNode {
                        parent: Some(u),
                        via: Some((p, s2)),
                        state: s2,
                        stage: stage + 1,
                        children: Vec::new(),
                    });
                    let h = histories[u].child(p, s2);
                    histories.push(h);
                    nodes[u].children.push((p, s2, id));
                }
            }
        }
        Ok(Self { nodes, histories, depth })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_ids(&self) -> impl Iterator<Item = usize> {
        0..self.nodes.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn state(&self, node: usize) -> usize {
        self.nodes[node].state
    }

    pub fn stage(&self, node: usize) -> usize {
        self.nodes[node].stage
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    /// Edge (profile, state) leading from the parent into `node`.
    pub fn incoming(&self, node: usize) -> Option<(usize, usize)> {
        self.nodes[node].via
    }

    pub fn children(&self, node: usize) -> &[(usize, usize, usize)] {
        &self.nodes[node].children
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.nodes[node].children.is_empty()
    }

    pub fn history(&self, node: usize) -> &History {
        &self.histories[node]
    }

    /// Locate a history in the tree by walking down from the root.
    pub fn find(&self, h: &History) -> Option<usize> {
        let root_h = &self.histories[0];
        if !root_h.is_prefix_of(h) {
            return None;
        }
        let mut node = 0usize;
        for &(p, s) in &h.steps[root_h.steps.len()..] {
            node = self.nodes[node]
                .children
                .iter()
                .find(|&&(cp, cs, _)| cp == p && cs == s)
                .map(|&(_, _, id)| id)?;
        }
        Some(node)
    }

    /// Nodes in decreasing stage order (children before parents).
    pub fn bottom_up(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.nodes.len()).collect();
        ids.sort_by_key(|&u| std::cmp::Reverse(self.nodes[u].stage));
        ids
    }

    /// All node ids in the subtree rooted at `node` (including it), BFS order.
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            let u = out[i];
            i += 1;
            out.extend(self.nodes[u].children.iter().map(|&(_, _, id)| id));
        }
        out
    }

    /// Leaves of the subtree rooted at `node`.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        self.subtree(node).into_iter().filter(|&u| self.is_leaf(u)).collect()
    }
}

/// Enumerate all positive-probability histories from `s1` up to `depth` stages.
pub fn histories_up_to(
    game: &Game,
    s1: usize,
    depth: usize,
    cap: Option<usize>,
) -> Result<Vec<History>> {
    let tree = HistoryTree::build(game, History::root(s1), depth, cap)?;
    Ok(tree.histories.clone())
}

// ---------------------------------------------------------------------------
// Serialized game file
// ---------------------------------------------------------------------------

/// On-disk JSON schema. Transitions are dense `[state][profile][state]` and
/// the profile index runs in lexicographic action order (player 0 most
/// significant); state and player order are part of the format contract.
#[derive(Serialize, Deserialize)]
struct GameFile {
    players: Vec<String>,
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    transitions: Vec<Vec<Vec<f64>>>,
    payoff: PayoffFile,
    #[serde(default)]
    declared_shift_invariant: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum PayoffFile {
    FiniteHorizon {
        horizon: usize,
        #[serde(default)]
        rewards: Option<Rewards>,
        terminal: Vec<Vec<f64>>,
        #[serde(default)]
        table: Option<BTreeMap<String, Vec<f64>>>,
    },
    Discounted {
        rewards: Rewards,
        discount: f64,
    },
    Reachability {
        targets: Vec<Vec<String>>,
    },
    MeanPayoff {
        rewards: Rewards,
    },
}

impl GameFile {
    fn into_game(self) -> Result<Game> {
        let n = self.players.len();
        let ns = self.states.len();
        let np: usize = self.actions.iter().map(|a| a.len()).product();
        let zero_rewards = || vec![vec![vec![0.0; np]; ns]; n];
        let kind = match self.payoff {
            PayoffFile::FiniteHorizon { horizon, rewards, terminal, table } => {
                PayoffKind::FiniteHorizon {
                    horizon,
                    rewards: rewards.unwrap_or_else(zero_rewards),
                    terminal,
                    table,
                }
            }
            PayoffFile::Discounted { rewards, discount } => {
                PayoffKind::Discounted { rewards, discount }
            }
            PayoffFile::Reachability { targets } => {
                let mut ids = Vec::new();
                for t in &targets {
                    let mut per = Vec::new();
                    for name in t {
                        match self.states.iter().position(|s| s == name) {
                            Some(i) => per.push(i),
                            None => {
                                return Err(GameError::Parse(format!(
                                    "reachability target references unknown state {name}"
                                )))
                            }
                        }
                    }
                    ids.push(per);
                }
                PayoffKind::Reachability { targets: ids }
            }
            PayoffFile::MeanPayoff { rewards } => PayoffKind::MeanPayoff { rewards },
        };
        Game::new(
            self.players,
            self.states,
            self.actions,
            self.transitions,
            kind,
            self.declared_shift_invariant,
        )
    }

    fn from_game(game: &Game) -> Self {
        // Serialization keeps the normalized payoff; the norm record is not
        // part of the interchange format.
        let payoff = match &game.payoff.kind {
            PayoffKind::FiniteHorizon { horizon, rewards, terminal, table } => {
                PayoffFile::FiniteHorizon {
                    horizon: *horizon,
                    rewards: Some(rewards.clone()),
                    terminal: terminal.clone(),
                    table: table.clone(),
                }
            }
            PayoffKind::Discounted { rewards, discount } => PayoffFile::Discounted {
                rewards: rewards.clone(),
                discount: *discount,
            },
            PayoffKind::Reachability { targets } => PayoffFile::Reachability {
                targets: targets
                    .iter()
                    .map(|t| t.iter().map(|&s| game.states[s].clone()).collect())
                    .collect(),
            },
            PayoffKind::MeanPayoff { rewards } => {
                PayoffFile::MeanPayoff { rewards: rewards.clone() }
            }
        };
        GameFile {
            players: game.players.clone(),
            states: game.states.clone(),
            actions: game.actions.clone(),
            transitions: game.transitions.clone(),
            payoff,
            declared_shift_invariant: game.payoff.declared_shift_invariant,
        }
    }
}

// ---------------------------------------------------------------------------
// Run sampling
// ---------------------------------------------------------------------------

/// Sample a positive-probability extension of `h`, stage by stage.
/// Deterministic given the seed.
pub fn sample_run(
    game: &Game,
    policy: &dyn crate::strategy::ProfilePolicy,
    h: &History,
    stages: usize,
    seed: u64,
) -> Result<History> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = h.clone();
    for _ in 0..stages {
        let mix = policy.mixed_profile(game, &cur)?;
        let actions: Vec<usize> = mix.iter().map(|m| m.sample(&mut rng)).collect();
        let p = game.profile_index(&actions);
        let row = game.transition_row(cur.last_state(), p);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (s2, &pr) in row.iter().enumerate() {
            acc += pr;
            if u < acc {
                next = s2;
                break;
            }
        }
        // never step onto a zero-probability state
        if row[next] <= 0.0 {
            next = row
                .iter()
                .enumerate()
                .rev()
                .find(|(_, &pr)| pr > 0.0)
                .map(|(s2, _)| s2)
                .ok_or_else(|| GameError::Invalid("transition row all zero".into()))?;
        }
        cur = cur.child(p, next);
    }
    Ok(cur)
}

/// Monte Carlo estimate of the expected payoff under a profile from `h`:
/// seeded rollouts of `stages` rounds, evaluated exactly when the class
/// allows and truncated otherwise. Returns per-player means and standard
/// errors.
pub fn expected_payoff_mc(
    game: &Game,
    policy: &dyn crate::strategy::ProfilePolicy,
    h: &History,
    stages: usize,
    rollouts: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rollouts == 0 {
        return Err(GameError::Invalid("zero rollouts".into()));
    }
    let n = game.num_players();
    let mut sums = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    for k in 0..rollouts {
        let run = sample_run(game, policy, h, stages, seed.wrapping_add(k as u64))?;
        let mode = if game.exact_depth().map(|d| run.stage() >= d).unwrap_or(false) {
            EvalMode::Exact
        } else {
            EvalMode::Truncated
        };
        let vals = game.payoff_eval(&run, mode)?.values;
        for i in 0..n {
            sums[i] += vals[i];
            sumsq[i] += vals[i] * vals[i];
        }
    }
    let m = rollouts as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let ses = (0..n)
        .map(|i| ((sumsq[i] / m - means[i] * means[i]).max(0.0) / m).sqrt())
        .collect();
    Ok((means, ses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{uniform_profile, ProfilePolicy};

    pub(crate) fn tiny_game() -> Game {
        // 2 players, 2 actions each, 1 state, T=2, terminal-only payoff.
        Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into(), "b".into()], vec!["a".into(), "b".into()]],
            vec![vec![vec![1.0]; 4]],
            PayoffKind::FiniteHorizon {
                horizon: 2,
                rewards: vec![vec![vec![0.0; 4]; 1]; 2],
                terminal: vec![vec![0.7], vec![0.3]],
                table: None,
            },
            false,
        )
        .unwrap()
    }

    #[test]
    fn validate_reports_bad_row_sum() {
        let mut g = tiny_game();
        g.transitions[0][0][0] = 0.99;
        let report = g.validate();
        assert!(report.iter().any(|v| v.kind == "row sum"));
    }

    #[test]
    fn validate_minimal_game_is_clean() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0]; 1]; 2],
                terminal: vec![vec![0.0], vec![0.0]],
                table: None,
            },
            false,
        )
        .unwrap();
        assert!(g.validate().is_empty());
    }

    #[test]
    fn validate_reports_unknown_reachability_target() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::Reachability { targets: vec![vec![3], vec![]] },
            false,
        )
        .unwrap();
        assert!(g.validate().iter().any(|v| v.kind == "unknown state"));
    }

    #[test]
    fn histories_counts_match_tree_structure() {
        let g = tiny_game();
        // 1 state, 4 profiles, deterministic: depth 2 gives 1 + 4 histories.
        let hs = histories_up_to(&g, 0, 2, None).unwrap();
        assert_eq!(hs.len(), 5);
        let hs1 = histories_up_to(&g, 0, 1, None).unwrap();
        assert_eq!(hs1.len(), 1);
    }

    #[test]
    fn zero_probability_transitions_are_excluded() {
        let mut g = tiny_game();
        // profile 0 goes nowhere new; make a second state and forbid reaching it
        g.states.push("s1".into());
        g.transitions = vec![
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0]; 4],
        ];
        if let PayoffKind::FiniteHorizon { rewards, terminal, .. } = &mut g.payoff.kind {
            for r in rewards.iter_mut() {
                *r = vec![vec![0.0; 4]; 2];
            }
            for t in terminal.iter_mut() {
                t.push(0.0);
            }
        }
        let hs = histories_up_to(&g, 0, 2, None).unwrap();
        assert!(hs.iter().all(|h| h.last_state() == 0));
    }

    #[test]
    fn cap_guard_fires_with_count() {
        let g = tiny_game();
        match histories_up_to(&g, 0, 3, Some(3)) {
            Err(GameError::CapExceeded { count, cap }) => {
                assert!(count > cap);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn terminal_only_payoff_evaluates() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0]]; 2],
                terminal: vec![vec![0.7], vec![0.7]],
                table: None,
            },
            false,
        )
        .unwrap();
        let h = History::root(0).child(0, 0);
        let out = g.payoff_eval(&h, EvalMode::Exact).unwrap();
        assert!(out.exact);
        assert!((out.values[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn reachability_hit_pays_one() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            PayoffKind::Reachability { targets: vec![vec![1], vec![0]] },
            false,
        )
        .unwrap();
        let h = History::root(0).child(0, 1).child(0, 1);
        let out = g.payoff_eval(&h, EvalMode::Truncated).unwrap();
        assert_eq!(out.values, vec![1.0, 1.0]);
    }

    #[test]
    fn mean_payoff_constant_reward_averages() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::MeanPayoff { rewards: vec![vec![vec![0.3]]; 2] },
            false,
        )
        .unwrap();
        let mut h = History::root(0);
        for _ in 0..100 {
            h = h.child(0, 0);
        }
        let out = g.payoff_eval(&h, EvalMode::Truncated).unwrap();
        assert!((out.values[0] - 0.3).abs() < 1e-12);
        assert!(g.payoff_eval(&h, EvalMode::Exact).is_err());
    }

    #[test]
    fn normalization_maps_range_into_unit_interval() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into(), "b".into()], vec!["a".into()]],
            vec![vec![vec![1.0], vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![-2.0, 4.0]]; 2],
                terminal: vec![vec![1.0], vec![-1.0]],
                table: None,
            },
            false,
        )
        .unwrap();
        // raw range for player 0: [-2+1, 4+1] = [-1, 5]
        let h = History::root(0).child(1, 0); // action b for p0
        let out = g.payoff_eval(&h, EvalMode::Exact).unwrap();
        assert!(out.values[0] >= 0.0 && out.values[0] <= 1.0);
        let denorm = g.denormalize(&out.values);
        assert!((denorm[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn subgame_view_composes_prefix_rewards() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 2,
                rewards: vec![vec![vec![0.4]], vec![vec![0.0]]],
                terminal: vec![vec![0.0], vec![0.0]],
                table: None,
            },
            false,
        )
        .unwrap();
        let h = History::root(0).child(0, 0); // one round played, reward 0.4
        let view = g.subgame_view(&h).unwrap();
        assert!(!view.degenerate);
        if let PayoffKind::FiniteHorizon { horizon, .. } = &view.game.payoff.kind {
            assert_eq!(*horizon, 1);
        } else {
            panic!("wrong class");
        }
        // remaining payoff from the view: 0.4 accumulated + 0.4 remaining round
        let cont = History::root(0).child(0, 0);
        let out = view.game.payoff_eval(&cont, EvalMode::Exact).unwrap();
        assert!((out.values[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn subgame_view_beyond_horizon_is_degenerate_constant() {
        let g = tiny_game();
        let h = History::root(0).child(0, 0).child(0, 0); // stage 3 = T+1
        let view = g.subgame_view(&h).unwrap();
        assert!(view.degenerate);
        let cont = History::root(0).child(0, 0);
        let out = view.game.payoff_eval(&cont, EvalMode::Exact).unwrap();
        assert!((out.values[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn subgame_view_composes_twice() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into(), "b".into()], vec!["a".into()]],
            vec![vec![vec![1.0], vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 3,
                rewards: vec![vec![vec![0.1, 0.2]], vec![vec![0.0, 0.0]]],
                terminal: vec![vec![0.5], vec![0.0]],
                table: None,
            },
            false,
        )
        .unwrap();
        let h1 = History::root(0).child(0, 0);
        let h2 = History::root(0).child(1, 0);
        let via_both = g
            .subgame_view(&h1)
            .unwrap()
            .game
            .subgame_view(&h2)
            .unwrap();
        let direct = g.subgame_view(&h1.concat(&h2).unwrap()).unwrap();
        let cont = History::root(0).child(0, 0);
        let a = via_both.game.payoff_eval(&cont, EvalMode::Exact).unwrap();
        let b = direct.game.payoff_eval(&cont, EvalMode::Exact).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 1e-12);
    }

    #[test]
    fn sample_run_is_deterministic_given_seed() {
        let g = tiny_game();
        let profile = uniform_profile(&g);
        let h = History::root(0);
        let r1 = sample_run(&g, &profile, &h, 2, 99).unwrap();
        let r2 = sample_run(&g, &profile, &h, 2, 99).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn sample_run_state_frequencies_match_transition_row() {
        // 2 states, transition 0.3/0.7 regardless of action
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![0.3, 0.7]], vec![vec![0.3, 0.7]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0], vec![0.0]]; 2],
                terminal: vec![vec![0.0, 0.0]; 2],
                table: None,
            },
            false,
        )
        .unwrap();
        let profile = uniform_profile(&g);
        let h = History::root(0);
        let rollouts = 100_000;
        let mut hits = 0usize;
        for k in 0..rollouts {
            let r = sample_run(&g, &profile, &h, 1, 1234 + k as u64).unwrap();
            if r.last_state() == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / rollouts as f64;
        let se = (0.7f64 * 0.3 / rollouts as f64).sqrt();
        assert!((freq - 0.7).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn json_roundtrip_preserves_structure() {
        let g = tiny_game();
        let text = g.to_json();
        let g2 = Game::from_json(&text).unwrap();
        assert_eq!(g2.players, g.players);
        assert_eq!(g2.transitions, g.transitions);
        let _ = uniform_profile(&g2)
            .mixed_profile(&g2, &History::root(0))
            .unwrap();
    }

    #[test]
    fn history_key_roundtrip() {
        let h = History::root(2).child(3, 1).child(0, 2);
        assert_eq!(h.key(), "2|3.1|0.2");
        assert_eq!(History::from_key(&h.key()).unwrap(), h);
    }
}
