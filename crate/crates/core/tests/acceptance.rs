//! Acceptance suite: every library guarantee exercised end to end against
//! exact oracles on seeded random corpora, one pass/fail line per criterion.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::Instant;

use martin_games::corpus::{generate_corpus, CorpusEntry, CorpusParams, Density, Family};
use martin_games::detect::{verify_zeta_identity, verify_zeta_identity_mc, TargetSet};
use martin_games::game::{Game, HistoryTree};
use martin_games::martin::{
    cert_tol, certify_property1, certify_property2, certify_property3, finite_horizon_stack,
    submartingale_residual, MartinFunction,
};
use martin_games::mediator::{
    best_deviation_gain, build_mediated, verify_no_deviation_distribution,
};
use martin_games::oneshot::SolverConfig;
use martin_games::oracle::{
    best_response_value, brute_force_best_response, enumerate, zero_sum_total_check,
};
use martin_games::solvable::solve_subgame;
use martin_games::strategy::{uniform_profile, BoundTreeProfile};
use martin_games::synth::{
    acceptable_profile, subgame_maxmin_strategy, verify_acceptable, verify_subgame_maxmin,
    AcceptableProfile,
};
use martin_games::values::ValueTable;

const CORPUS_SEED: u64 = 0x6d61727469;

struct Stack {
    entry: CorpusEntry,
    game: Game,
    tree: HistoryTree,
    table: ValueTable,
    martin: MartinFunction,
    acc: AcceptableProfile,
}

static STACKS: OnceLock<Vec<Stack>> = OnceLock::new();

fn config() -> SolverConfig {
    SolverConfig { seed: CORPUS_SEED, ..Default::default() }
}

/// The shared 100-game corpus: 2-3 players, up to 3 states, binary actions,
/// horizon up to 3, mixed transition densities.
fn stacks() -> &'static Vec<Stack> {
    STACKS.get_or_init(|| {
        let base = CorpusParams {
            players: 2,
            states: 3,
            actions: 2,
            horizon: 3,
            density: Density::Dense,
            family: Family::General,
            stage_rewards: false,
        };
        let cfg = config();
        generate_corpus(CORPUS_SEED, 100, &base, &[2, 3])
            .expect("corpus generation")
            .into_iter()
            .map(|(entry, game)| {
                let (tree, table, martin) =
                    finite_horizon_stack(&game, 0, &cfg).expect("stack");
                let acc = acceptable_profile(&game, &tree, &martin, &cfg).expect("profile");
                Stack { entry, game, tree, table, martin, acc }
            })
            .collect()
    })
}

fn status(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

#[test]
fn criterion_01_martin_certification() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for s in stacks() {
        let tol = 1e-6;
        let c1 = certify_property1(&s.martin, &s.tree, &s.table, 0.0, tol);
        let c2 = certify_property2(&s.game, &s.tree, &s.martin, tol).expect("cert2");
        let bound = BoundTreeProfile { tree: &s.tree, profile: &s.acc.profile };
        let c3 = certify_property3(&s.game, &s.tree, &s.martin, &bound, s.tree.root(), tol)
            .expect("cert3");
        worst = worst
            .max(c1.worst_violation)
            .max(c2.worst_violation)
            .max(c3.local_worst.max(c3.global_worst));
        if !(c1.pass && c2.pass && c3.pass()) {
            failures.push(s.entry.name.clone());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && worst <= 1e-6 && elapsed <= 300.0;
    println!(
        "criterion 01 (martin certification, 100 games): {}: worst violation {:.3e}, {:.1}s",
        status(pass),
        worst,
        elapsed
    );
    assert!(pass, "failures: {failures:?}, worst {worst:.3e}, elapsed {elapsed:.1}s");
}

#[test]
fn criterion_02_subgame_maxmin() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for s in stacks() {
        for i in 0..s.game.num_players() {
            let strat = subgame_maxmin_strategy(&s.game, &s.tree, &s.table, i).expect("synth");
            let rep = verify_subgame_maxmin(&s.game, &s.tree, &strat, i, &s.table, 1e-6, 0.0)
                .expect("verify");
            worst = worst.max(rep.worst_violation);
            checked += rep.checked;
            assert!(rep.pass, "game {} player {i}: {:?}", s.entry.name, rep.witness);
        }
    }
    println!(
        "criterion 02 (subgame maxmin, {} history checks): {}: worst violation {:.3e}",
        checked,
        status(worst <= 0.0),
        worst
    );
}

#[test]
fn criterion_03_acceptable_profiles() {
    let mut worst = 0.0f64;
    let mut chain_worst = 0.0f64;
    for s in stacks() {
        let eps = 1e-6 + s.acc.max_regret;
        let tol = cert_tol(s.tree.depth()) + s.tree.depth() as f64 * s.acc.max_regret;
        let rep = verify_acceptable(
            &s.game,
            &s.tree,
            &s.acc.profile,
            &s.table,
            &s.martin,
            eps,
            tol,
        )
        .expect("verify");
        worst = worst.max(rep.worst_violation);
        chain_worst = chain_worst.max(rep.chain_worst);
        assert!(rep.pass, "game {}: witness {:?}", s.entry.name, rep.witness);
        assert!(rep.chain_pass, "game {}: chain {:.3e}", s.entry.name, rep.chain_worst);
    }
    println!(
        "criterion 03 (acceptable profiles): {}: worst violation {:.3e}, chain {:.3e}",
        status(true),
        worst,
        chain_worst
    );
}

#[test]
fn criterion_04_mediator_bound() {
    let cfg = config();
    let mut worst_gain_ratio = 0.0f64;
    let mut dist_worst = 0.0f64;
    for s in stacks().iter().take(50) {
        for &eps in &[0.02, 0.1] {
            let system = build_mediated(&s.game, 0, eps, &cfg).expect("mediated");
            for i in 0..s.game.num_players() {
                let rep = best_deviation_gain(&s.game, &system, i, 1e-6).expect("gain");
                assert!(
                    rep.gain <= eps + 1e-6,
                    "game {} eps {eps} player {i}: gain {:.3e} (widened {})",
                    s.entry.name,
                    rep.gain,
                    rep.widened_plans
                );
                worst_gain_ratio = worst_gain_ratio.max(rep.gain / eps);
            }
            let (ok, worst) =
                verify_no_deviation_distribution(&s.game, &system, 1e-12).expect("distribution");
            assert!(ok, "game {} eps {eps}: distribution gap {worst:.3e}", s.entry.name);
            dist_worst = dist_worst.max(worst);
        }
    }
    println!(
        "criterion 04 (mediator bound, 50 games x eps in {{0.02, 0.1}}): {}: worst gain/eps {:.3e}, distribution gap {:.3e}",
        status(true),
        worst_gain_ratio,
        dist_worst
    );
}

#[test]
fn criterion_05_zeta_identity() {
    // 200 exact (game, target set, stopping rule) triples at horizon <= 4
    let base = CorpusParams {
        players: 2,
        states: 2,
        actions: 2,
        horizon: 4,
        density: Density::Sparse,
        family: Family::General,
        stage_rewards: false,
    };
    let games = generate_corpus(CORPUS_SEED ^ 0x5a5a, 25, &base, &[2]).expect("corpus");
    let mut triples = 0usize;
    let mut worst = 0.0f64;
    for (gi, (_, game)) in games.iter().enumerate() {
        let depth = game.exact_depth().unwrap_or(5);
        let tree = HistoryTree::build(&game, martin_games::game::History::root(0), depth, None)
            .expect("tree");
        let profile = uniform_profile(game);
        for variant in 0..8usize {
            if triples >= 200 {
                break;
            }
            // pseudo-random antichain: a slice of one stage plus deeper nodes
            let stage = 2 + (variant % (depth - 1)).min(depth - 2);
            let picks: Vec<usize> = tree
                .node_ids()
                .filter(|&u| tree.stage(u) == stage && (u + gi + variant) % 3 != 0)
                .collect();
            let q = TargetSet::new(&tree, picks).expect("antichain");
            let player = variant % 2;
            let rep = match variant % 4 {
                0 => verify_zeta_identity(game, &tree, &profile, player, &q, 2, None, 1e-9),
                1 => {
                    let cut = stage + 1;
                    let tree_ref = &tree;
                    let stop = move |u: usize| tree_ref.stage(u) >= cut;
                    verify_zeta_identity(game, &tree, &profile, player, &q, 2, Some(&stop), 1e-9)
                }
                2 => {
                    let stop = |u: usize| tree.state(u) == 1;
                    verify_zeta_identity(game, &tree, &profile, player, &q, 2, Some(&stop), 1e-9)
                }
                _ => verify_zeta_identity(game, &tree, &profile, player, &q, 3, None, 1e-9),
            }
            .expect("identity");
            worst = worst.max(rep.discrepancy);
            assert!(rep.pass, "game {gi} variant {variant}: discrepancy {:.3e}", rep.discrepancy);
            triples += 1;
        }
    }
    assert_eq!(triples, 200);
    // Monte Carlo mode on 10 larger instances
    let base_mc = CorpusParams { states: 3, horizon: 3, density: Density::Dense, ..base };
    let mc_games = generate_corpus(CORPUS_SEED ^ 0x7c7c, 10, &base_mc, &[2]).expect("corpus");
    let mut mc_pass = 0usize;
    for (gi, (_, game)) in mc_games.iter().enumerate() {
        let depth = game.exact_depth().unwrap_or(4);
        let tree = HistoryTree::build(&game, martin_games::game::History::root(0), depth, None)
            .expect("tree");
        let profile = uniform_profile(game);
        let picks: Vec<usize> =
            tree.node_ids().filter(|&u| tree.stage(u) == 2 && u % 2 == 0).collect();
        let q = TargetSet::new(&tree, picks).expect("antichain");
        let rep = verify_zeta_identity_mc(
            game, &tree, &profile, 0, &q, 2, 100_000, CORPUS_SEED + gi as u64, 3.0,
        )
        .expect("mc identity");
        if rep.pass {
            mc_pass += 1;
        }
    }
    println!(
        "criterion 05 (zeta identity, 200 exact triples + 10 MC): {}: worst exact discrepancy {:.3e}, MC {}/10 within 3 SE",
        status(mc_pass >= 9),
        worst,
        mc_pass
    );
    // with 3 standard errors, one marginal miss in ten is within expectation
    assert!(mc_pass >= 9, "MC identity failed on {} of 10 instances", 10 - mc_pass);
}

#[test]
fn criterion_06_solvable_subgame() {
    let cfg = config();
    let eps = 0.1;
    let mut passes = 0usize;
    let mut failures = Vec::new();
    let mut slowest = 0.0f64;
    let total = 50usize;
    for s in stacks().iter().take(total) {
        let start = Instant::now();
        match solve_subgame(&s.game, 0, eps, None, &cfg) {
            Ok(rep) => {
                let within_time = start.elapsed().as_secs_f64() <= 30.0;
                slowest = slowest.max(start.elapsed().as_secs_f64());
                if rep.gains_pass && rep.on_path_pass && within_time {
                    passes += 1;
                } else {
                    failures.push(format!(
                        "{}: gains {:?} on-path pass {} time {:.1}s",
                        s.entry.name,
                        rep.gains,
                        rep.on_path_pass,
                        start.elapsed().as_secs_f64()
                    ));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", s.entry.name)),
        }
    }
    let rate = passes as f64 / total as f64;
    let pass = rate >= 0.95;
    println!(
        "criterion 06 (solvable subgame, eps=0.1 on {total} games): {}: {passes}/{total} pass, slowest {slowest:.1}s",
        status(pass)
    );
    if !failures.is_empty() {
        println!("  diagnostics: {failures:?}");
    }
    assert!(pass, "pass rate {rate}: {failures:?}");
}

#[test]
fn criterion_07_zero_sum_total() {
    let cfg = config();
    let base = CorpusParams {
        players: 3,
        states: 2,
        actions: 2,
        horizon: 2,
        density: Density::Dense,
        family: Family::ZeroSumTotal,
        stage_rewards: true,
    };
    let games = generate_corpus(CORPUS_SEED ^ 0x2e2e, 50, &base, &[3]).expect("corpus");
    let mut worst_sum = f64::NEG_INFINITY;
    for (entry, game) in &games {
        let (tree, table) =
            martin_games::values::compute_minmax_values(game, 0, None, &cfg).expect("values");
        let rep = zero_sum_total_check(game, &tree, &table, 1e-6).expect("check");
        assert!(rep.certified_zero_sum, "game {} not zero-sum: {:?}", entry.name, rep.witness);
        assert!(
            rep.pass,
            "game {}: minmax sum {:.3e} above {:.3e}",
            entry.name, rep.minmax_sum_denormalized, rep.bound
        );
        worst_sum = worst_sum.max(rep.minmax_sum_denormalized);
    }
    println!(
        "criterion 07 (zero-sum-total minmax bound, 50 games): {}: worst minmax sum {:.3e} <= 3e-6",
        status(worst_sum <= 3e-6),
        worst_sum
    );
    assert!(worst_sum <= 3e-6);
}

#[test]
fn criterion_08_submartingale() {
    let mut worst = 0.0f64;
    for s in stacks() {
        let bound = BoundTreeProfile { tree: &s.tree, profile: &s.acc.profile };
        let (residual, witness) =
            submartingale_residual(&s.game, &s.tree, &s.martin, &bound).expect("residual");
        worst = worst.max(residual);
        assert!(
            residual <= 1e-9,
            "game {}: submartingale residual {:.3e} at {:?}",
            s.entry.name,
            residual,
            witness
        );
    }
    println!(
        "criterion 08 (submartingale property on the corpus): {}: worst residual {:.3e}",
        status(worst <= 1e-9),
        worst
    );
}

#[test]
fn criterion_09_oracle_self_consistency() {
    let cfg = config();
    let base = CorpusParams {
        players: 2,
        states: 2,
        actions: 2,
        horizon: 2,
        density: Density::Sparse,
        family: Family::General,
        stage_rewards: false,
    };
    let games = generate_corpus(CORPUS_SEED ^ 0x9f9f, 20, &base, &[2]).expect("corpus");
    let mut worst = 0.0f64;
    for (entry, game) in &games {
        let (tree, _table, martin) = finite_horizon_stack(game, 0, &cfg).expect("stack");
        let acc = acceptable_profile(game, &tree, &martin, &cfg).expect("profile");
        let bound = BoundTreeProfile { tree: &tree, profile: &acc.profile };
        for i in 0..2 {
            let (dp, _) = best_response_value(game, &tree, &bound, i, tree.root()).expect("dp");
            let brute = brute_force_best_response(game, &tree, &bound, i, tree.root(), 1_000_000)
                .expect("brute force");
            worst = worst.max((dp - brute).abs());
            assert!(
                (dp - brute).abs() <= 1e-9,
                "game {} player {i}: dp {dp} vs brute {brute}",
                entry.name
            );
        }
        let table = enumerate(game, &tree, &bound, tree.root()).expect("enumerate");
        let total = table.total_probability();
        assert!((total - 1.0).abs() <= 1e-12, "game {}: mass {total}", entry.name);
    }
    println!(
        "criterion 09 (oracle self-consistency, 20 micro instances): {}: worst BR discrepancy {:.3e}",
        status(worst <= 1e-9),
        worst
    );
}

#[test]
fn criterion_10_determinism() {
    let cfg = config();
    let run = || -> String {
        let base = CorpusParams {
            players: 2,
            states: 2,
            actions: 2,
            horizon: 2,
            density: Density::Dense,
            family: Family::General,
            stage_rewards: false,
        };
        let games = generate_corpus(CORPUS_SEED ^ 0x1111, 3, &base, &[2, 3]).expect("corpus");
        let mut writer = martin_games::report::ReportWriter::new("acceptance-determinism", "corpus");
        for (entry, game) in &games {
            let rep = solve_subgame(game, 0, 0.1, None, &cfg).expect("pipeline");
            writer.record(&format!("solvable:{}", entry.name), &rep).expect("record");
            let system = build_mediated(game, 0, 0.1, &cfg).expect("mediated");
            for i in 0..game.num_players() {
                let gain = best_deviation_gain(game, &system, i, 1e-6).expect("gain");
                writer.record(&format!("mediator:{}:{}", entry.name, i), &gain).expect("record");
            }
        }
        writer.jsonl()
    };
    let a = run();
    let b = run();
    let pass = a == b;
    println!(
        "criterion 10 (determinism, byte-identical reports): {}: {} bytes",
        status(pass),
        a.len()
    );
    assert!(pass, "reports differ");
}
