//! Seeded random game generation for verification campaigns. Identical
//! (seed, parameters) pairs produce identical games.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::game::{Game, PayoffKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Dense,
    Sparse,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Independent uniform terminal payoffs (and optional stage rewards).
    General,
    /// The last player's rewards offset the others: payoffs sum to zero on
    /// every run.
    ZeroSumTotal,
    /// Mean-payoff rewards depending on the state only, declared
    /// shift-invariant.
    ShiftInvariantMean,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorpusParams {
    pub players: usize,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub density: Density,
    pub family: Family,
    pub stage_rewards: bool,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            players: 2,
            states: 2,
            actions: 2,
            horizon: 2,
            density: Density::Dense,
            family: Family::General,
            stage_rewards: false,
        }
    }
}

fn transition_row(rng: &mut ChaCha8Rng, states: usize, density: Density) -> Vec<f64> {
    match density {
        Density::Deterministic => {
            let mut row = vec![0.0; states];
            row[rng.gen_range(0..states)] = 1.0;
            row
        }
        Density::Sparse => {
            let mut row = vec![0.0; states];
            let k = 2.min(states);
            let mut picks = Vec::new();
            while picks.len() < k {
                let s = rng.gen_range(0..states);
                if !picks.contains(&s) {
                    picks.push(s);
                }
            }
            let mut mass = Vec::with_capacity(k);
            let mut left = 1.0;
            for idx in 0..k {
                if idx + 1 == k {
                    mass.push(left);
                } else {
                    let m = rng.gen_range(0.05..left - 0.05 * (k - idx - 1) as f64);
                    mass.push(m);
                    left -= m;
                }
            }
            for (s, m) in picks.into_iter().zip(mass) {
                row[s] = m;
            }
            row
        }
        Density::Dense => {
            let mut row: Vec<f64> = (0..states).map(|_| rng.gen_range(0.02..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            row
        }
    }
}

/// Generate one random game. Zero-sum-total games are built on raw rewards
/// and rely on load-time normalization to return to [0,1].
pub fn random_game(seed: u64, params: &CorpusParams) -> Result<Game> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.players;
    let ns = params.states;
    let np = params.actions.pow(n as u32);
    let players = (0..n).map(|i| format!("p{i}")).collect();
    let states: Vec<String> = (0..ns).map(|s| format!("s{s}")).collect();
    let actions = (0..n)
        .map(|_| (0..params.actions).map(|a| format!("a{a}")).collect())
        .collect();
    let transitions: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| (0..np).map(|_| transition_row(&mut rng, ns, params.density)).collect())
        .collect();
    let kind = match params.family {
        Family::General => {
            let rewards = if params.stage_rewards {
                (0..n)
                    .map(|_| {
                        (0..ns)
                            .map(|_| (0..np).map(|_| rng.gen_range(0.0..0.3)).collect())
                            .collect()
                    })
                    .collect()
            } else {
                vec![vec![vec![0.0; np]; ns]; n]
            };
            let terminal = (0..n)
                .map(|_| (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            PayoffKind::FiniteHorizon { horizon: params.horizon, rewards, terminal, table: None }
        }
        Family::ZeroSumTotal => {
            let mut rewards: Vec<Vec<Vec<f64>>> = (0..n - 1)
                .map(|_| {
                    (0..ns)
                        .map(|_| (0..np).map(|_| rng.gen_range(-0.5..0.5)).collect())
                        .collect()
                })
                .collect();
            let mut last = vec![vec![0.0; np]; ns];
            for s in 0..ns {
                for p in 0..np {
                    last[s][p] = -rewards.iter().map(|r| r[s][p]).sum::<f64>();
                }
            }
            rewards.push(last);
            let mut terminal: Vec<Vec<f64>> = (0..n - 1)
                .map(|_| (0..ns).map(|_| rng.gen_range(-0.5..0.5)).collect())
                .collect();
            let last_t = (0..ns)
                .map(|s| -terminal.iter().map(|t| t[s]).sum::<f64>())
                .collect();
            terminal.push(last_t);
            PayoffKind::FiniteHorizon { horizon: params.horizon, rewards, terminal, table: None }
        }
        Family::ShiftInvariantMean => {
            // rewards depend on the state only, so the long-run average is
            // genuinely prefix-independent
            let per_state: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let rewards = (0..n)
                .map(|i| (0..ns).map(|s| vec![per_state[i][s]; np]).collect())
                .collect();
            PayoffKind::MeanPayoff { rewards }
        }
    };
    Game::new(
        players,
        states,
        actions,
        transitions,
        kind,
        matches!(params.family, Family::ShiftInvariantMean),
    )
}

/// A generated corpus entry with its provenance.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusEntry {
    pub name: String,
    pub seed: u64,
    pub params: CorpusParams,
}

/// Generate `count` games, randomizing sizes within the given bounds.
/// Per-game seeds are derived deterministically from the corpus seed.
pub fn generate_corpus(
    seed: u64,
    count: usize,
    base: &CorpusParams,
    vary_players: &[usize],
) -> Result<Vec<(CorpusEntry, Game)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let game_seed: u64 = rng.gen();
        let mut params = *base;
        if !vary_players.is_empty() {
            params.players = vary_players[rng.gen_range(0..vary_players.len())];
        }
        params.states = rng.gen_range(1..=base.states.max(1));
        params.horizon = rng.gen_range(1..=base.horizon.max(1));
        params.density = match rng.gen_range(0..3) {
            0 => Density::Dense,
            1 => Density::Sparse,
            _ => Density::Deterministic,
        };
        let game = random_game(game_seed, &params)?;
        out.push((
            CorpusEntry { name: format!("game_{k:04}"), seed: game_seed, params },
            game,
        ));
    }
    Ok(out)
}
