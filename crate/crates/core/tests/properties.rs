//! Property tests for the structural invariants of the game model and the
//! one-shot solvers, driven by seeded random games.

use proptest::prelude::*;

use martin_games::corpus::{random_game, CorpusParams, Density, Family};
use martin_games::game::{histories_up_to, History, HistoryTree, MixedAction};
use martin_games::lp::solve_matrix_game;
use martin_games::oneshot::{maxmin_oneshot, minmax_vs_independent, OneShotTensor, SolverConfig};
use martin_games::oracle::expected_payoff;
use martin_games::strategy::{BoundTreeProfile, TreeProfile};

fn small_game(seed: u64, players: usize, dense: bool) -> martin_games::game::Game {
    let params = CorpusParams {
        players,
        states: 2,
        actions: 2,
        horizon: 2,
        density: if dense { Density::Dense } else { Density::Sparse },
        family: Family::General,
        stage_rewards: false,
    };
    random_game(seed, &params).expect("generated game")
}

fn mixed(seed: u64, n: usize) -> MixedAction {
    let mut x = (seed % 997) as f64 / 997.0 + 0.0137;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        x = (x * 61.17 + 0.317).fract();
        v.push(x + 0.01);
    }
    let s: f64 = v.iter().sum();
    MixedAction::new(v.into_iter().map(|p| p / s).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Restricting the deeper enumeration to a shallower stage yields exactly
    /// the shallower enumeration.
    #[test]
    fn history_enumeration_is_prefix_consistent(seed in 0u64..5000, depth in 1usize..3) {
        let g = small_game(seed, 2, seed % 2 == 0);
        let deep = histories_up_to(&g, 0, depth + 1, None).unwrap();
        let shallow = histories_up_to(&g, 0, depth, None).unwrap();
        let restricted: Vec<_> = deep.into_iter().filter(|h| h.stage() <= depth).collect();
        prop_assert_eq!(restricted, shallow);
    }

    /// The expected payoff is affine in any single history's mixed action.
    #[test]
    fn expected_payoff_multilinear(seed in 0u64..5000, lambda in 0.0f64..1.0) {
        let g = small_game(seed, 2, true);
        let tree = HistoryTree::build(&g, History::root(0), 3, None).unwrap();
        // baseline: uniform tabular profile on the tree
        let mut base = TreeProfile::new(&tree);
        for node in tree.node_ids() {
            if !tree.is_leaf(node) {
                base.set(node, vec![MixedAction::uniform(2), MixedAction::uniform(2)]);
            }
        }
        let target = tree.node_ids().find(|&u| !tree.is_leaf(u)).unwrap();
        let m0 = mixed(seed.wrapping_mul(3), 2);
        let m1 = mixed(seed.wrapping_mul(7) + 1, 2);
        let blend = MixedAction::new(
            m0.probs()
                .iter()
                .zip(m1.probs())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        )
        .unwrap();
        let eval = |m: &MixedAction| {
            let mut p = base.clone();
            let mut mix = p.at(target).unwrap().clone();
            mix[0] = m.clone();
            p.set(target, mix);
            let bound = BoundTreeProfile { tree: &tree, profile: &p };
            expected_payoff(&g, &tree, &bound, tree.root()).unwrap()[0]
        };
        let lhs = eval(&blend);
        let rhs = lambda * eval(&m0) + (1.0 - lambda) * eval(&m1);
        prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {} rhs {}", lhs, rhs);
    }

    /// Matrix-game solutions sit between the pure maximin and minimax bounds
    /// with a certified duality gap.
    #[test]
    fn matrix_game_value_between_pure_bounds(
        rows in 1usize..5,
        cols in 1usize..5,
        seed in 0u64..10_000,
    ) {
        let mut x = seed as f64 / 131.7 + 0.3;
        let mut next = move || { x = (x * 87.31 + 0.219).fract(); x };
        let m: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| next()).collect()).collect();
        let sol = solve_matrix_game(&m).unwrap();
        let maximin = (0..rows)
            .map(|r| m[r].iter().cloned().fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max);
        let minimax = (0..cols)
            .map(|c| (0..rows).map(|r| m[r][c]).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(sol.value >= maximin - 1e-9);
        prop_assert!(sol.value <= minimax + 1e-9);
        prop_assert!(sol.duality_gap.abs() <= 1e-9);
    }

    /// One-shot maxmin equals the coalition minmax lower bound and never
    /// exceeds the independent upper bound.
    #[test]
    fn oneshot_bracket_ordering(seed in 0u64..5000) {
        let mut x = seed as f64 / 271.3 + 0.11;
        let mut next = move || { x = (x * 53.91 + 0.473).fract(); x };
        let t = OneShotTensor {
            action_counts: vec![2, 2, 2],
            payoffs: (0..3).map(|_| (0..8).map(|_| next()).collect()).collect(),
            history_key: None,
        };
        let cfg = SolverConfig { multistart: 2, grid_resolution: 8, ..Default::default() };
        for i in 0..3 {
            let mm = minmax_vs_independent(&t, i, &cfg).unwrap();
            let mx = maxmin_oneshot(&t, i).unwrap();
            prop_assert!(mm.lower <= mm.upper + 1e-9);
            prop_assert!((mx.lower - mm.lower).abs() <= 1e-9);
            prop_assert!(mx.lower <= mm.upper + 1e-9);
        }
    }

    /// Subgame views compose: the view at a two-step extension equals the
    /// view of the view.
    #[test]
    fn subgame_views_compose(seed in 0u64..5000) {
        let g = small_game(seed, 2, true);
        let tree = HistoryTree::build(&g, History::root(0), 3, None).unwrap();
        let grandchild = tree
            .node_ids()
            .find(|&u| tree.stage(u) == 3)
            .unwrap();
        let h2 = tree.history(grandchild).clone();
        let h1 = h2.prefix(2);
        let tail = History::root(h1.last_state()).child(h2.steps()[1].0, h2.steps()[1].1);
        let direct = g.subgame_view(&h2).unwrap();
        let nested = g.subgame_view(&h1).unwrap().game.subgame_view(&tail).unwrap();
        // identical payoffs on every continuation
        let cont_tree = HistoryTree::build(
            &direct.game,
            History::root(direct.initial_state),
            direct.game.exact_depth().unwrap_or(1),
            None,
        )
        .unwrap();
        for leaf in cont_tree.leaves_under(cont_tree.root()) {
            let h = cont_tree.history(leaf);
            let a = direct.game.payoff_eval(h, martin_games::game::EvalMode::Exact).unwrap();
            let b = nested.game.payoff_eval(h, martin_games::game::EvalMode::Exact).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    /// Sampling respects the support of the mixed action.
    #[test]
    fn sampling_stays_in_support(seed in 0u64..5000) {
        use rand::SeedableRng;
        let m = MixedAction::new(vec![0.0, 0.3, 0.7, 0.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let a = m.sample(&mut rng);
            prop_assert!(a == 1 || a == 2);
        }
    }
}
