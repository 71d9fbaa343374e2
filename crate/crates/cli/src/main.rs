//! Command-line front end: game validation, value computation, strategy
//! synthesis and verification pipelines, corpus generation and report
//! emission. Exit codes: 0 all assertions pass, 2 parse/input error,
//! 3 solver failure, 4 assertion failure, 5 cap exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use martin_games::corpus::{generate_corpus, CorpusParams, Density, Family};
use martin_games::error::GameError;
use martin_games::game::{Game, HistoryTree};
use martin_games::martin::{
    cert_tol, certify_property1, certify_property2, certify_property3, finite_horizon_stack,
};
use martin_games::mediator::{best_deviation_gain, build_mediated, simulate_mediated};
use martin_games::oneshot::SolverConfig;
use martin_games::oracle::zero_sum_total_check;
use martin_games::report::ReportWriter;
use martin_games::solvable::solve_subgame;
use martin_games::strategy::BoundTreeProfile;
use martin_games::synth::{
    acceptable_profile, subgame_maxmin_strategy, verify_acceptable, verify_subgame_maxmin,
};
use martin_games::values::compute_minmax_values;

#[derive(Parser)]
#[command(name = "martin-games", version, about = "Finite stochastic game solver and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Game file, or a directory of .json game files.
    #[arg(long)]
    game: PathBuf,
    /// Guarantee slack for the synthesized object.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Seed for all randomized search and sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo rollouts where sampling applies.
    #[arg(long, default_value_t = 0)]
    rollouts: usize,
    /// History depth for value tables of non-terminating payoff classes.
    #[arg(long)]
    depth: Option<usize>,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Numeric tolerance for verification assertions.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Fail on any flagged-uncertified result (wide brackets, widened
    /// punishment plans, statistical checks).
    #[arg(long, default_value_t = false)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check every structural invariant of a game file.
    Validate(CommonArgs),
    /// Compute minmax/maxmin value tables and dump them.
    Values(CommonArgs),
    /// Build the Martin function and certify its three properties.
    Martin(CommonArgs),
    /// Synthesize and verify a strategy object.
    Synth {
        /// maxmin or acceptable
        #[arg(value_parser = ["maxmin", "acceptable"])]
        what: String,
        /// Player index for maxmin synthesis.
        #[arg(long, default_value_t = 0)]
        player: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the mediated game and evaluate best-deviation gains.
    Mediate(CommonArgs),
    /// Run the full solvable-subgame pipeline.
    SolveSubgame(CommonArgs),
    /// Generate a seeded corpus of random games.
    Corpus {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        players: usize,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        /// general, zero_sum_total or shift_invariant_mean
        #[arg(long, default_value = "general")]
        family: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Certify a zero-sum-total game and bound the sum of minmax values.
    CheckZeroSum(CommonArgs),
}

fn exit_code_for(err: &GameError) -> u8 {
    match err {
        GameError::Parse(_) | GameError::Invalid(_) => 2,
        GameError::SolverFailure { .. }
        | GameError::IncompleteStrategy { .. }
        | GameError::IncompleteMartin { .. }
        | GameError::Unsupported { .. } => 3,
        GameError::Assertion(_) => 4,
        GameError::CapExceeded { .. } => 5,
    }
}

fn load_games(path: &Path) -> Result<Vec<(String, Game, String)>, GameError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| GameError::Parse(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        entries.sort();
        files.extend(entries);
    } else {
        files.push(path.to_path_buf());
    }
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| GameError::Parse(format!("{}: {e}", p.display())))?;
            let game = Game::from_json(&text)?;
            Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), game, text))
        })
        .collect()
}

fn solver_config(common: &CommonArgs) -> SolverConfig {
    SolverConfig { seed: common.seed, ..Default::default() }
}

fn config_text(common: &CommonArgs, extra: &str) -> String {
    format!(
        "epsilon={} seed={} rollouts={} depth={:?} tol={} strict={} {extra}",
        common.epsilon, common.seed, common.rollouts, common.depth, common.tol, common.strict
    )
}

struct Outcome {
    writer: ReportWriter,
    pass: bool,
    flagged: bool,
}

fn run_per_game<F>(common: &CommonArgs, extra: &str, f: F) -> Result<ExitCode, GameError>
where
    F: Fn(&str, &Game, &mut ReportWriter) -> Result<(bool, bool), GameError> + Sync,
{
    let games = load_games(&common.game)?;
    let outcomes: Vec<Result<Outcome, GameError>> = games
        .par_iter()
        .map(|(name, game, text)| {
            let mut writer = ReportWriter::new(&config_text(common, extra), text);
            let (pass, flagged) = f(name, game, &mut writer)?;
            Ok(Outcome { writer, pass, flagged })
        })
        .collect();
    let mut all_pass = true;
    let mut any_flagged = false;
    let all_texts: String = games.iter().map(|(_, _, t)| t.as_str()).collect();
    let mut merged = ReportWriter::new(&config_text(common, extra), &all_texts);
    for outcome in outcomes {
        let outcome = outcome?;
        all_pass &= outcome.pass;
        any_flagged |= outcome.flagged;
        merged.lines.extend(outcome.writer.lines);
        merged.summary.extend(outcome.writer.summary);
    }
    merged.write_to_dir(&common.out, extra)?;
    print!("{}", merged.markdown(extra));
    if !all_pass || (common.strict && any_flagged) {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(common: &CommonArgs) -> Result<ExitCode, GameError> {
    run_per_game(common, "validate", |name, game, writer| {
        let report = game.validate();
        writer.record("validate", &report)?;
        writer.note(name, if report.is_empty() { "valid".into() } else { format!("{report:?}") });
        Ok((report.is_empty(), false))
    })
}

fn cmd_values(common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    run_per_game(common, "values", |name, game, writer| {
        let (tree, table) = compute_minmax_values(game, 0, common.depth, &cfg)?;
        #[derive(serde::Serialize)]
        struct Row<'a> {
            history: &'a str,
            minmax_lower: Vec<f64>,
            minmax_upper: Vec<f64>,
            maxmin: Vec<f64>,
        }
        for node in tree.node_ids() {
            let key = tree.history(node).key();
            writer.record(
                "values",
                &Row {
                    history: &key,
                    minmax_lower: (0..game.num_players())
                        .map(|i| table.minmax_lower[i][node])
                        .collect(),
                    minmax_upper: (0..game.num_players())
                        .map(|i| table.minmax_upper[i][node])
                        .collect(),
                    maxmin: (0..game.num_players()).map(|i| table.maxmin[i][node]).collect(),
                },
            )?;
        }
        writer.note(
            name,
            format!(
                "{} histories, max bracket width {:.3e}{}",
                tree.len(),
                table.max_bracket_width,
                if table.bracket_certified { "" } else { " (uncertified)" }
            ),
        );
        Ok((true, !table.bracket_certified))
    })
}

fn cmd_martin(common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    run_per_game(common, "martin", |name, game, writer| {
        let (tree, table, martin) = finite_horizon_stack(game, 0, &cfg)?;
        let acc = acceptable_profile(game, &tree, &martin, &cfg)?;
        let tol = common.tol.max(cert_tol(tree.depth()));
        let c1 = certify_property1(&martin, &tree, &table, martin.epsilon, tol);
        let c2 = certify_property2(game, &tree, &martin, tol)?;
        let bound = BoundTreeProfile { tree: &tree, profile: &acc.profile };
        let c3 = certify_property3(game, &tree, &martin, &bound, tree.root(), tol)?;
        writer.record("property1", &c1)?;
        writer.record("property2", &c2)?;
        writer.record("property3", &c3)?;
        let pass = c1.pass && c2.pass && c3.pass();
        writer.note(
            name,
            format!(
                "certs {} / {} / {} (worst {:.3e})",
                c1.pass,
                c2.pass,
                c3.pass(),
                c1.worst_violation.max(c2.worst_violation).max(c3.global_worst)
            ),
        );
        Ok((pass, !table.bracket_certified))
    })
}

fn cmd_synth(what: &str, player: usize, common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    let what_owned = what.to_string();
    run_per_game(common, &format!("synth-{what}"), move |name, game, writer| {
        let (tree, table, martin) = finite_horizon_stack(game, 0, &cfg)?;
        match what_owned.as_str() {
            "maxmin" => {
                let strat = subgame_maxmin_strategy(game, &tree, &table, player)?;
                let rep = verify_subgame_maxmin(
                    game,
                    &tree,
                    &strat,
                    player,
                    &table,
                    common.epsilon,
                    common.tol,
                )?;
                let serialized = strat.to_strategy_profile(game, &tree);
                writer.record("strategy", &serialized.strategies[player])?;
                writer.record("verification", &rep)?;
                writer.note(name, format!("maxmin player {player}: pass {}", rep.pass));
                Ok((rep.pass, false))
            }
            _ => {
                let acc = acceptable_profile(game, &tree, &martin, &cfg)?;
                let rep = verify_acceptable(
                    game,
                    &tree,
                    &acc.profile,
                    &table,
                    &martin,
                    common.epsilon + acc.max_regret,
                    common.tol,
                )?;
                writer.record("profile", &acc.profile.to_strategy_profile(game, &tree))?;
                writer.record("verification", &rep)?;
                writer.note(
                    name,
                    format!("acceptable: pass {} (max regret {:.3e})", rep.pass, acc.max_regret),
                );
                Ok((rep.pass && rep.chain_pass, false))
            }
        }
    })
}

fn cmd_mediate(common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    run_per_game(common, "mediate", |name, game, writer| {
        let system = build_mediated(game, 0, common.epsilon, &cfg)?;
        let mut pass = true;
        let mut widened = false;
        for i in 0..game.num_players() {
            let rep = best_deviation_gain(game, &system, i, common.tol)?;
            pass &= rep.pass;
            widened |= rep.widened_plans;
            writer.record("deviation_gain", &rep)?;
        }
        let (dist_ok, gap) =
            martin_games::mediator::verify_no_deviation_distribution(game, &system, 1e-12)?;
        pass &= dist_ok;
        if common.rollouts > 0 {
            let (means, ses, _) = simulate_mediated(game, &system, None, common.rollouts, cfg.seed)?;
            writer.record("simulation", &serde_json::json!({"means": means, "ses": ses}))?;
        }
        writer.note(
            name,
            format!("gains within {:.3}: {pass} (distribution gap {gap:.1e})", common.epsilon),
        );
        Ok((pass, widened))
    })
}

fn cmd_solve_subgame(common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    run_per_game(common, "solve-subgame", |name, game, writer| {
        let rep = solve_subgame(game, 0, common.epsilon, None, &cfg)?;
        writer.record("solvable", &rep)?;
        writer.note(
            name,
            format!(
                "target {} stage {}, gains {:?}, pass {}",
                rep.target.key, rep.target.stage, rep.gains, rep.pass
            ),
        );
        Ok((rep.pass, rep.widened_plans))
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_corpus(
    count: usize,
    players: usize,
    states: usize,
    actions: usize,
    horizon: usize,
    family: &str,
    common: &CommonArgs,
) -> Result<ExitCode, GameError> {
    let family = match family {
        "zero_sum_total" => Family::ZeroSumTotal,
        "shift_invariant_mean" => Family::ShiftInvariantMean,
        _ => Family::General,
    };
    let base = CorpusParams {
        players,
        states,
        actions,
        horizon,
        density: Density::Dense,
        family,
        stage_rewards: family == Family::ZeroSumTotal,
    };
    let vary: Vec<usize> = vec![players];
    let games = generate_corpus(common.seed, count, &base, &vary)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| GameError::Parse(format!("{}: {e}", common.out.display())))?;
    let mut manifest = Vec::new();
    for (entry, game) in &games {
        let path = common.out.join(format!("{}.json", entry.name));
        std::fs::write(&path, game.to_json())
            .map_err(|e| GameError::Parse(format!("{}: {e}", path.display())))?;
        manifest.push(serde_json::to_string(entry).map_err(|e| GameError::Parse(e.to_string()))?);
    }
    let mut text = manifest.join("\n");
    text.push('\n');
    std::fs::write(common.out.join("manifest.jsonl"), text)
        .map_err(|e| GameError::Parse(e.to_string()))?;
    println!("wrote {} games to {}", games.len(), common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_zero_sum(common: &CommonArgs) -> Result<ExitCode, GameError> {
    let cfg = solver_config(common);
    run_per_game(common, "check-zero-sum", |name, game, writer| {
        let depth = game.exact_depth().ok_or_else(|| GameError::Unsupported {
            class: game.payoff.kind.class_name().into(),
            what: "zero-sum-total certification".into(),
        })?;
        let tree = HistoryTree::build(game, martin_games::game::History::root(0), depth, None)?;
        let (_, table) = compute_minmax_values(game, 0, common.depth, &cfg)?;
        let rep = zero_sum_total_check(game, &tree, &table, common.tol)?;
        writer.record("zero_sum_total", &rep)?;
        writer.note(
            name,
            format!(
                "certified {} minmax sum {:.3e} bound {:.3e}",
                rep.certified_zero_sum, rep.minmax_sum_denormalized, rep.bound
            ),
        );
        Ok((rep.pass, false))
    })
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("MARTIN_GAMES_THREADS") {
        if let Ok(k) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Values(c) => cmd_values(c),
        Command::Martin(c) => cmd_martin(c),
        Command::Synth { what, player, common } => cmd_synth(what, *player, common),
        Command::Mediate(c) => cmd_mediate(c),
        Command::SolveSubgame(c) => cmd_solve_subgame(c),
        Command::Corpus { count, players, states, actions, horizon, family, common } => {
            cmd_corpus(*count, *players, *states, *actions, *horizon, family, common)
        }
        Command::CheckZeroSum(c) => cmd_check_zero_sum(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
