//! Behavior-strategy representations and the policy interfaces used by the
//! evaluators. Tabular strategies serialize as canonical-history-key maps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{Game, History, HistoryTree, MixedAction};

/// A single player's strategy: history -> mixed action.
pub trait Policy {
    fn mixed_action(&self, game: &Game, h: &History) -> Result<MixedAction>;
}

/// A full profile: history -> one mixed action per player.
pub trait ProfilePolicy {
    fn mixed_profile(&self, game: &Game, h: &History) -> Result<Vec<MixedAction>>;

    /// Probability the profile assigns to the full action profile `profile`.
    fn profile_prob(&self, game: &Game, h: &History, profile: usize) -> Result<f64> {
        let mix = self.mixed_profile(game, h)?;
        let acts = game.profile_actions(profile);
        Ok(acts.iter().enumerate().map(|(i, &a)| mix[i].prob(a)).product())
    }
}

/// Tabular strategy over canonical history keys, defined for all
/// positive-probability histories up to `depth` stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularStrategy {
    pub depth: usize,
    pub map: BTreeMap<String, MixedAction>,
}

impl TabularStrategy {
    pub fn new(depth: usize) -> Self {
        Self { depth, map: BTreeMap::new() }
    }

    pub fn insert(&mut self, h: &History, action: MixedAction) {
        self.map.insert(h.key(), action);
    }

    pub fn get(&self, h: &History) -> Option<&MixedAction> {
        self.map.get(&h.key())
    }
}

/// Stationary strategy: one mixed action per state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryStrategy {
    pub per_state: Vec<MixedAction>,
}

/// A single player's behavior strategy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BehaviorStrategy {
    Tabular(TabularStrategy),
    Stationary(StationaryStrategy),
}

impl Policy for BehaviorStrategy {
    fn mixed_action(&self, _game: &Game, h: &History) -> Result<MixedAction> {
        match self {
            BehaviorStrategy::Tabular(t) => t
                .get(h)
                .cloned()
                .ok_or_else(|| GameError::IncompleteStrategy { key: h.key() }),
            BehaviorStrategy::Stationary(s) => Ok(s.per_state[h.last_state()].clone()),
        }
    }
}

/// A full strategy profile, one behavior strategy per player.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub strategies: Vec<BehaviorStrategy>,
}

impl StrategyProfile {
    pub fn new(strategies: Vec<BehaviorStrategy>) -> Self {
        Self { strategies }
    }

    pub fn player(&self, i: usize) -> &BehaviorStrategy {
        &self.strategies[i]
    }
}

impl ProfilePolicy for StrategyProfile {
    fn mixed_profile(&self, game: &Game, h: &History) -> Result<Vec<MixedAction>> {
        self.strategies
            .iter()
            .map(|s| s.mixed_action(game, h))
            .collect()
    }
}

/// Uniform play for every player at every history.
pub fn uniform_profile(game: &Game) -> StrategyProfile {
    StrategyProfile::new(
        (0..game.num_players())
            .map(|i| {
                BehaviorStrategy::Stationary(StationaryStrategy {
                    per_state: vec![
                        MixedAction::uniform(game.num_actions(i));
                        game.num_states()
                    ],
                })
            })
            .collect(),
    )
}

/// Tabular profile aligned to a history tree: one mixed profile per node.
/// This is the workhorse representation produced by the synthesizers.
#[derive(Clone, Debug)]
pub struct TreeProfile {
    pub per_node: Vec<Option<Vec<MixedAction>>>,
}

impl TreeProfile {
    pub fn new(tree: &HistoryTree) -> Self {
        Self { per_node: vec![None; tree.len()] }
    }

    pub fn set(&mut self, node: usize, profile: Vec<MixedAction>) {
        self.per_node[node] = Some(profile);
    }

    pub fn at(&self, node: usize) -> Option<&Vec<MixedAction>> {
        self.per_node[node].as_ref()
    }

    /// Convert to serializable per-player tabular strategies.
    pub fn to_strategy_profile(&self, game: &Game, tree: &HistoryTree) -> StrategyProfile {
        let mut tabs: Vec<TabularStrategy> =
            (0..game.num_players()).map(|_| TabularStrategy::new(tree.depth())).collect();
        for node in tree.node_ids() {
            if let Some(mix) = &self.per_node[node] {
                let h = tree.history(node);
                for (i, m) in mix.iter().enumerate() {
                    tabs[i].insert(h, m.clone());
                }
            }
        }
        StrategyProfile::new(tabs.into_iter().map(BehaviorStrategy::Tabular).collect())
    }
}

/// A `TreeProfile` bound to its tree so it can answer by raw history.
pub struct BoundTreeProfile<'a> {
    pub tree: &'a HistoryTree,
    pub profile: &'a TreeProfile,
}

impl ProfilePolicy for BoundTreeProfile<'_> {
    fn mixed_profile(&self, game: &Game, h: &History) -> Result<Vec<MixedAction>> {
        match self.tree.find(h).and_then(|node| self.profile.at(node)) {
            Some(mix) => Ok(mix.clone()),
            None => {
                // Histories at or beyond the tree depth have no decision left
                // for finite-horizon payoffs; answer uniformly so simulations
                // can run past the horizon.
                if h.stage() >= self.tree.depth() {
                    Ok((0..game.num_players())
                        .map(|i| MixedAction::uniform(game.num_actions(i)))
                        .collect())
                } else {
                    Err(GameError::IncompleteStrategy { key: h.key() })
                }
            }
        }
    }
}

/// Profile with one player's strategy replaced by another policy.
pub struct WithDeviation<'a> {
    pub base: &'a dyn ProfilePolicy,
    pub player: usize,
    pub deviation: &'a dyn Policy,
}

impl ProfilePolicy for WithDeviation<'_> {
    fn mixed_profile(&self, game: &Game, h: &History) -> Result<Vec<MixedAction>> {
        let mut mix = self.base.mixed_profile(game, h)?;
        mix[self.player] = self.deviation.mixed_action(game, h)?;
        Ok(mix)
    }
}

/// A fixed pure action regardless of history.
pub struct ConstantAction(pub usize, pub usize); // (action, num_actions)

impl Policy for ConstantAction {
    fn mixed_action(&self, _game: &Game, _h: &History) -> Result<MixedAction> {
        Ok(MixedAction::pure(self.1, self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::PayoffKind;

    fn game() -> Game {
        Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into()],
            vec![vec!["a".into(), "b".into()], vec!["x".into()]],
            vec![vec![vec![1.0], vec![1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0, 0.0]]; 2],
                terminal: vec![vec![0.0]; 2],
                table: None,
            },
            false,
        )
        .unwrap()
    }

    #[test]
    fn tabular_lookup_errors_when_undefined() {
        let g = game();
        let t = TabularStrategy::new(2);
        let s = BehaviorStrategy::Tabular(t);
        let err = s.mixed_action(&g, &History::root(0)).unwrap_err();
        match err {
            GameError::IncompleteStrategy { key } => assert_eq!(key, "0"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tree_profile_binds_and_answers() {
        let g = game();
        let tree = HistoryTree::build(&g, History::root(0), 2, None).unwrap();
        let mut tp = TreeProfile::new(&tree);
        tp.set(
            tree.root(),
            vec![MixedAction::pure(2, 1), MixedAction::pure(1, 0)],
        );
        let bound = BoundTreeProfile { tree: &tree, profile: &tp };
        let mix = bound.mixed_profile(&g, &History::root(0)).unwrap();
        assert_eq!(mix[0].prob(1), 1.0);
    }
}
