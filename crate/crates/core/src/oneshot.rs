//! Auxiliary one-shot games induced at a history by a per-player value
//! assignment on the one-step extensions: zero-sum values, coalition minmax
//! (correlated lower bound and independent upper bound), and one-shot maxmin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::{Game, HistoryTree, MixedAction};
use crate::lp::{solve_matrix_game, MatrixGameSolution};

/// Payoff tensor of a one-shot game, indexed by full action profiles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneShotTensor {
    pub action_counts: Vec<usize>,
    /// `payoffs[player][profile]`.
    pub payoffs: Vec<Vec<f64>>,
    /// Canonical key of the history this tensor was built at, if any.
    pub history_key: Option<String>,
}

impl OneShotTensor {
    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_profiles(&self) -> usize {
        self.action_counts.iter().product()
    }

    pub fn profile_actions(&self, mut profile: usize) -> Vec<usize> {
        let n = self.num_players();
        let mut out = vec![0; n];
        for i in (0..n).rev() {
            out[i] = profile % self.action_counts[i];
            profile /= self.action_counts[i];
        }
        out
    }

    pub fn profile_index(&self, actions: &[usize]) -> usize {
        let mut idx = 0;
        for (i, &a) in actions.iter().enumerate() {
            idx = idx * self.action_counts[i] + a;
        }
        idx
    }

    /// Expected payoff of `player` under a mixed action profile.
    pub fn expect(&self, player: usize, mix: &[MixedAction]) -> f64 {
        let mut total = 0.0;
        for p in 0..self.num_profiles() {
            let acts = self.profile_actions(p);
            let w: f64 = acts.iter().enumerate().map(|(j, &a)| mix[j].prob(a)).product();
            if w > 0.0 {
                total += w * self.payoffs[player][p];
            }
        }
        total
    }

    /// Expected payoff of `player` when player `i` plays pure `a_i` and the
    /// others follow `mix`.
    pub fn expect_vs_pure(&self, player: usize, i: usize, a_i: usize, mix: &[MixedAction]) -> f64 {
        let mut total = 0.0;
        for p in 0..self.num_profiles() {
            let acts = self.profile_actions(p);
            if acts[i] != a_i {
                continue;
            }
            let w: f64 = acts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, &a)| mix[j].prob(a))
                .product();
            if w > 0.0 {
                total += w * self.payoffs[player][p];
            }
        }
        total
    }

    /// View player `i`'s payoffs as a matrix: rows indexed by `A_i`, columns
    /// by joint opponent profiles in lexicographic order.
    pub fn coalition_matrix(&self, i: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let n = self.num_players();
        let opp: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let opp_count: usize = opp.iter().map(|&j| self.action_counts[j]).product();
        let mut cols = Vec::with_capacity(opp_count);
        for c in 0..opp_count {
            let mut rem = c;
            let mut digits = vec![0usize; opp.len()];
            for k in (0..opp.len()).rev() {
                let base = self.action_counts[opp[k]];
                digits[k] = rem % base;
                rem /= base;
            }
            cols.push(digits);
        }
        let mut matrix = vec![vec![0.0; cols.len()]; self.action_counts[i]];
        for (ci, col) in cols.iter().enumerate() {
            for a_i in 0..self.action_counts[i] {
                let mut acts = vec![0usize; n];
                acts[i] = a_i;
                for (k, &j) in opp.iter().enumerate() {
                    acts[j] = col[k];
                }
                matrix[a_i][ci] = self.payoffs[i][self.profile_index(&acts)];
            }
        }
        (matrix, cols)
    }
}

/// Solver knobs shared by the one-shot machinery.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub regret_tol: f64,
    pub multistart: usize,
    pub grid_resolution: usize,
    pub pivot_tol: f64,
    pub seed: u64,
    /// Bracket width above which a minmax result is flagged uncertified.
    pub certification_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            regret_tol: 1e-7,
            multistart: 8,
            grid_resolution: 64,
            pivot_tol: 1e-11,
            seed: 0,
            certification_tol: 1e-6,
        }
    }
}

/// Result of a one-shot solve. `lower == upper` for exact methods.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub lower: f64,
    pub upper: f64,
    /// Strategy for the optimizing side, when meaningful.
    pub strategy: Option<MixedAction>,
    /// Correlated coalition minimizer over joint opponent profiles.
    pub coalition_correlated: Option<Vec<f64>>,
    /// Independent coalition minimizer (one mixed action per opponent, in
    /// player order with the optimizing player omitted).
    pub coalition_product: Option<Vec<MixedAction>>,
    pub residual: f64,
    pub method: &'static str,
    pub certified: bool,
    /// Several pure optimizers attain the value; the lexicographically-first
    /// is returned.
    pub nonunique: bool,
}

impl SolveResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Build the one-shot game at a tree node from per-player values on the
/// node's children: entry `(i, a)` is the expected child value of player `i`.
pub fn build_oneshot(
    game: &Game,
    tree: &HistoryTree,
    node: usize,
    child_values: &dyn Fn(usize, usize) -> Option<f64>,
) -> Result<OneShotTensor> {
    let n = game.num_players();
    let np = game.num_profiles();
    if tree.is_leaf(node) {
        return Err(GameError::IncompleteMartin { key: tree.history(node).key() });
    }
    let mut payoffs = vec![vec![0.0; np]; n];
    let mut seen = vec![0.0f64; np];
    for &(p, s2, child) in tree.children(node) {
        let prob = game.transition_row(tree.state(node), p)[s2];
        seen[p] += prob;
        for i in 0..n {
            let v = child_values(i, child).ok_or_else(|| GameError::IncompleteMartin {
                key: tree.history(child).key(),
            })?;
            payoffs[i][p] += prob * v;
        }
    }
    if seen.iter().any(|&w| (w - 1.0).abs() > 1e-9) {
        return Err(GameError::Invalid(format!(
            "transition mass missing at {}",
            tree.history(node).key()
        )));
    }
    Ok(OneShotTensor {
        action_counts: (0..n).map(|i| game.num_actions(i)).collect(),
        payoffs,
        history_key: Some(tree.history(node).key()),
    })
}

/// Exact value of a two-party zero-sum payoff matrix (row player maximizes).
pub fn zero_sum_value(matrix: &[Vec<f64>]) -> Result<SolveResult> {
    let sol = solve_matrix_game(matrix)?;
    Ok(from_matrix_solution(sol))
}

fn from_matrix_solution(sol: MatrixGameSolution) -> SolveResult {
    let certified = sol.duality_gap.abs() <= 1e-9;
    SolveResult {
        lower: sol.value,
        upper: sol.value,
        strategy: Some(MixedAction::new(sol.row_strategy).expect("row strategy")),
        coalition_correlated: Some(sol.col_strategy),
        coalition_product: None,
        residual: sol.duality_gap,
        method: "lp",
        certified,
        nonunique: false,
    }
}

/// One-shot minmax of player `i` against independent opponents.
///
/// Exact for two players. For three or more the correlated-coalition value
/// (a linear program) is a lower bound and the best product profile found by
/// multistart alternating descent plus grid refinement is an upper bound; the
/// bracket is reported, never collapsed.
pub fn minmax_vs_independent(
    tensor: &OneShotTensor,
    i: usize,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let n = tensor.num_players();
    let (matrix, _cols) = tensor.coalition_matrix(i);
    let lp = solve_matrix_game(&matrix)?;
    if n == 2 {
        let j = 1 - i;
        let product = vec![MixedAction::new(lp.col_strategy.clone())?];
        let _ = j;
        let mut out = from_matrix_solution(lp);
        out.coalition_product = Some(product);
        out.method = "lp-two-player";
        return Ok(out);
    }

    let opponents: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let (upper, product) = independent_upper(tensor, i, &opponents, config)?;
    let certified = upper - lp.value <= config.certification_tol;
    Ok(SolveResult {
        lower: lp.value,
        upper,
        strategy: Some(MixedAction::new(lp.row_strategy.clone())?),
        coalition_correlated: Some(lp.col_strategy),
        coalition_product: Some(product),
        residual: upper - lp.value,
        method: "lp-lower/descent-upper",
        certified,
        nonunique: false,
    })
}

/// Worst-case value of the product profile for the maximizing player:
/// `max_{a_i} E[tensor_i | a_i, product]`.
pub fn product_response_value(
    tensor: &OneShotTensor,
    i: usize,
    opponents: &[usize],
    product: &[MixedAction],
) -> f64 {
    let n = tensor.num_players();
    let mut full: Vec<MixedAction> = (0..n)
        .map(|j| MixedAction::uniform(tensor.action_counts[j]))
        .collect();
    for (k, &j) in opponents.iter().enumerate() {
        full[j] = product[k].clone();
    }
    (0..tensor.action_counts[i])
        .map(|a| tensor.expect_vs_pure(i, i, a, &full))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn independent_upper(
    tensor: &OneShotTensor,
    i: usize,
    opponents: &[usize],
    config: &SolverConfig,
) -> Result<(f64, Vec<MixedAction>)> {
    let mut starts: Vec<Vec<MixedAction>> = Vec::new();
    // pure opponent profiles, lexicographic
    let mut pure = vec![0usize; opponents.len()];
    loop {
        starts.push(
            opponents
                .iter()
                .zip(&pure)
                .map(|(&j, &a)| MixedAction::pure(tensor.action_counts[j], a))
                .collect(),
        );
        let mut k = opponents.len();
        let mut done = true;
        while k > 0 {
            k -= 1;
            pure[k] += 1;
            if pure[k] < tensor.action_counts[opponents[k]] {
                done = false;
                break;
            }
            pure[k] = 0;
        }
        if done {
            break;
        }
    }
    starts.push(
        opponents
            .iter()
            .map(|&j| MixedAction::uniform(tensor.action_counts[j]))
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e3779b97f4a7c15);
    for _ in 0..config.multistart {
        starts.push(
            opponents
                .iter()
                .map(|&j| {
                    let k = tensor.action_counts[j];
                    let mut v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let s: f64 = v.iter().sum();
                    for x in v.iter_mut() {
                        *x /= s;
                    }
                    MixedAction::new(v).unwrap()
                })
                .collect(),
        );
    }
    // grid refinement start (only enumerable shapes)
    if let Some(grid_start) = grid_search(tensor, i, opponents, config.grid_resolution) {
        starts.push(grid_start);
    }

    let mut best_val = f64::INFINITY;
    let mut best_prod: Vec<MixedAction> = starts[0].clone();
    for start in starts {
        let (v, prod) = alternating_descent(tensor, i, opponents, start)?;
        if v < best_val - 1e-15 {
            best_val = v;
            best_prod = prod;
        }
    }
    Ok((best_val, best_prod))
}

fn alternating_descent(
    tensor: &OneShotTensor,
    i: usize,
    opponents: &[usize],
    mut product: Vec<MixedAction>,
) -> Result<(f64, Vec<MixedAction>)> {
    let mut value = product_response_value(tensor, i, opponents, &product);
    for _ in 0..200 {
        let mut improved = false;
        for (k, &j) in opponents.iter().enumerate() {
            // matrix over (a_i, a_j) with other opponents averaged out
            let mut c = vec![vec![0.0; tensor.action_counts[j]]; tensor.action_counts[i]];
            for p in 0..tensor.num_profiles() {
                let acts = tensor.profile_actions(p);
                let w: f64 = opponents
                    .iter()
                    .enumerate()
                    .filter(|(kk, _)| *kk != k)
                    .map(|(kk, &jj)| product[kk].prob(acts[jj]))
                    .product();
                if w > 0.0 {
                    c[acts[i]][acts[j]] += w * tensor.payoffs[i][p];
                }
            }
            // minimize over x_j of max over a_i: minimizer's side of the matrix game
            let sol = solve_matrix_game(&c)?;
            let cand = MixedAction::new(sol.col_strategy)?;
            let mut trial = product.clone();
            trial[k] = cand;
            let tv = product_response_value(tensor, i, opponents, &trial);
            if tv < value - 1e-13 {
                value = tv;
                product = trial;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok((value, product))
}

/// Grid search over the opponents' product simplices; returns the best grid
/// point as a descent start. Skipped for shapes too large to enumerate.
fn grid_search(
    tensor: &OneShotTensor,
    i: usize,
    opponents: &[usize],
    resolution: usize,
) -> Option<Vec<MixedAction>> {
    let per_opp: Vec<Vec<Vec<f64>>> = opponents
        .iter()
        .map(|&j| simplex_grid(tensor.action_counts[j], resolution))
        .collect();
    let total: usize = per_opp.iter().map(|g| g.len()).product();
    if total == 0 || total > 300_000 {
        return None;
    }
    let mut idx = vec![0usize; opponents.len()];
    let mut best = f64::INFINITY;
    let mut best_point: Option<Vec<MixedAction>> = None;
    loop {
        let point: Vec<MixedAction> = idx
            .iter()
            .enumerate()
            .map(|(k, &t)| MixedAction::new(per_opp[k][t].clone()).unwrap())
            .collect();
        let v = product_response_value(tensor, i, opponents, &point);
        if v < best {
            best = v;
            best_point = Some(point);
        }
        let mut k = opponents.len();
        let mut done = true;
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_opp[k].len() {
                done = false;
                break;
            }
            idx[k] = 0;
        }
        if done {
            break;
        }
    }
    best_point
}

/// All points of the simplex over `n` actions with coordinates multiple of
/// 1/resolution.
pub fn simplex_grid(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(out: &mut Vec<Vec<f64>>, cur: &mut Vec<usize>, pos: usize, left: usize, res: usize) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.iter().map(|&k| k as f64 / res as f64).collect());
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(out, cur, pos + 1, left - k, res);
        }
    }
    if n == 0 {
        return out;
    }
    rec(&mut out, &mut cur, 0, resolution, resolution);
    out
}

/// One-shot maxmin of player `i`: exact for any player count, because the
/// inner minimum over independent opponents is attained at a pure opponent
/// profile, making the problem a matrix game against the joint coalition.
pub fn maxmin_oneshot(tensor: &OneShotTensor, i: usize) -> Result<SolveResult> {
    let (matrix, _) = tensor.coalition_matrix(i);
    let sol = solve_matrix_game(&matrix)?;
    // Prefer the lexicographically-first pure action attaining the value,
    // recording when the optimizer is not unique.
    let mut strategy = MixedAction::new(sol.row_strategy.clone())?;
    let mut attaining = 0usize;
    for a in 0..matrix.len() {
        let worst = matrix[a].iter().cloned().fold(f64::INFINITY, f64::min);
        if worst >= sol.value - 1e-12 {
            if attaining == 0 {
                strategy = MixedAction::pure(matrix.len(), a);
            }
            attaining += 1;
        }
    }
    let mut out = from_matrix_solution(sol);
    out.strategy = Some(strategy);
    out.method = "lp-maxmin";
    out.nonunique = attaining > 1;
    Ok(out)
}

/// Per-player regret of a mixed action profile: best pure deviation gain.
pub fn regret(tensor: &OneShotTensor, profile: &[MixedAction]) -> Vec<f64> {
    let n = tensor.num_players();
    (0..n)
        .map(|i| {
            let base = tensor.expect(i, profile);
            let best = (0..tensor.action_counts[i])
                .map(|a| tensor.expect_vs_pure(i, i, a, profile))
                .fold(f64::NEG_INFINITY, f64::max);
            best - base
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Game, History, PayoffKind};

    fn tensor3(payoffs_for: Vec<f64>) -> OneShotTensor {
        OneShotTensor {
            action_counts: vec![2, 2, 2],
            payoffs: vec![payoffs_for.clone(), payoffs_for.clone(), payoffs_for],
            history_key: None,
        }
    }

    #[test]
    fn build_oneshot_point_mass_and_average() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into()], vec!["a".into()]],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0], vec![0.0]]; 2],
                terminal: vec![vec![0.0, 1.0]; 2],
                table: None,
            },
            false,
        )
        .unwrap();
        let tree = HistoryTree::build(&g, History::root(0), 2, None).unwrap();
        let vals = |_i: usize, child: usize| Some(if tree.state(child) == 1 { 1.0 } else { 0.0 });
        let t = build_oneshot(&g, &tree, tree.root(), &vals).unwrap();
        assert!((t.payoffs[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_tensor_everything_is_constant() {
        let t = tensor3(vec![0.4; 8]);
        let cfg = SolverConfig::default();
        let mm = minmax_vs_independent(&t, 1, &cfg).unwrap();
        assert!((mm.lower - 0.4).abs() < 1e-9);
        assert!((mm.upper - 0.4).abs() < 1e-9);
        let mx = maxmin_oneshot(&t, 1).unwrap();
        assert!((mx.lower - 0.4).abs() < 1e-9);
        let r = regret(&t, &vec![MixedAction::uniform(2); 3]);
        assert!(r.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn two_player_reduction_matches_zero_sum() {
        let t = OneShotTensor {
            action_counts: vec![2, 2],
            payoffs: vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
            history_key: None,
        };
        let cfg = SolverConfig::default();
        let mm = minmax_vs_independent(&t, 0, &cfg).unwrap();
        assert!((mm.lower - 0.5).abs() < 1e-9);
        assert!(mm.width() < 1e-12);
        let zs = zero_sum_value(&t.coalition_matrix(0).0).unwrap();
        assert!((zs.lower - mm.lower).abs() < 1e-9);
    }

    #[test]
    fn three_player_bracket_brackets_grid_oracle() {
        // deterministic pseudo-random tensor
        let mut vals = Vec::new();
        let mut x = 0.123f64;
        for _ in 0..8 {
            x = (x * 97.13 + 0.417).fract();
            vals.push(x);
        }
        let t = OneShotTensor {
            action_counts: vec![2, 2, 2],
            payoffs: vec![vals.clone(), vals.clone(), vals],
            history_key: None,
        };
        let cfg = SolverConfig { grid_resolution: 64, ..Default::default() };
        let mm = minmax_vs_independent(&t, 0, &cfg).unwrap();
        assert!(mm.lower <= mm.upper + 1e-12);
        // exhaustive grid at 1/64 as oracle upper bound
        let opp = vec![1usize, 2];
        let grid = grid_search(&t, 0, &opp, 64).unwrap();
        let gv = product_response_value(&t, 0, &opp, &grid);
        assert!(mm.upper <= gv + 1e-9);
        // maxmin never exceeds the independent upper bound
        let mx = maxmin_oneshot(&t, 0).unwrap();
        assert!(mx.lower <= mm.upper + 1e-9);
        assert!((mx.lower - mm.lower).abs() < 1e-9); // both are the coalition LP value
    }

    #[test]
    fn dominant_action_maxmin_is_pure() {
        let t = OneShotTensor {
            action_counts: vec![2, 2],
            // action 0 of player 0 dominates
            payoffs: vec![vec![0.9, 0.8, 0.1, 0.2], vec![0.0; 4]],
            history_key: None,
        };
        let mx = maxmin_oneshot(&t, 0).unwrap();
        assert!((mx.lower - 0.8).abs() < 1e-9);
        assert_eq!(mx.strategy.unwrap().prob(0), 1.0);
    }

    #[test]
    fn regret_measures_pure_improvement() {
        let t = OneShotTensor {
            action_counts: vec![2, 2],
            payoffs: vec![vec![0.5, 0.5, 0.7, 0.7], vec![0.0; 4]],
            history_key: None,
        };
        // profile: both play action 0; player 0 could gain 0.2 by switching
        let prof = vec![MixedAction::pure(2, 0), MixedAction::pure(2, 0)];
        let r = regret(&t, &prof);
        assert!((r[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tensor_linearity_in_values() {
        let g = Game::new(
            vec!["p0".into(), "p1".into()],
            vec!["s0".into(), "s1".into()],
            vec![vec!["a".into(), "b".into()], vec!["a".into()]],
            vec![
                vec![vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            ],
            PayoffKind::FiniteHorizon {
                horizon: 1,
                rewards: vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]; 2],
                terminal: vec![vec![0.0, 0.0]; 2],
                table: None,
            },
            false,
        )
        .unwrap();
        let tree = HistoryTree::build(&g, History::root(0), 2, None).unwrap();
        let d1 = |_: usize, c: usize| Some(tree.state(c) as f64);
        let d2 = |_: usize, c: usize| Some(1.0 - tree.state(c) as f64);
        let combo = |i: usize, c: usize| Some(2.0 * d1(i, c).unwrap() + 3.0 * d2(i, c).unwrap());
        let t1 = build_oneshot(&g, &tree, 0, &d1).unwrap();
        let t2 = build_oneshot(&g, &tree, 0, &d2).unwrap();
        let tc = build_oneshot(&g, &tree, 0, &combo).unwrap();
        for p in 0..t1.num_profiles() {
            let want = 2.0 * t1.payoffs[0][p] + 3.0 * t2.payoffs[0][p];
            assert!((tc.payoffs[0][p] - want).abs() < 1e-12);
        }
    }
}
