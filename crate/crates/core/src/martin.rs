//! Martin functions: per-player history-indexed value assignments whose
//! induced one-shot games make locally good play globally good, together with
//! numeric certification of the three defining properties.

use serde::Serialize;

use crate::error::{GameError, Result};
use crate::game::{Game, HistoryTree, PayoffKind};
use crate::lp::solve_matrix_game;
use crate::oneshot::SolverConfig;
use crate::oracle::continuation_values;
use crate::strategy::ProfilePolicy;
use crate::values::{tensor_from_values, StateValueTable, ValueTable, STAGE_TOL};

/// A per-player mapping from tree nodes to reals with its guarantee metadata.
#[derive(Clone, Debug, Serialize)]
pub struct MartinFunction {
    pub epsilon: f64,
    pub payoff_class: String,
    pub tolerance: f64,
    pub depth: usize,
    /// `values[player][node]`, aligned to the tree it was built on.
    pub values: Vec<Vec<f64>>,
}

impl MartinFunction {
    pub fn value(&self, player: usize, node: usize) -> f64 {
        self.values[player][node]
    }
}

/// Finite-horizon construction: the minmax table itself, with epsilon 0.
/// Property (3) is certified rather than assumed.
pub fn martin_finite_horizon(game: &Game, tree: &HistoryTree, table: &ValueTable) -> MartinFunction {
    MartinFunction {
        epsilon: 0.0,
        payoff_class: game.payoff.kind.class_name().into(),
        tolerance: table.tolerance,
        depth: tree.depth(),
        values: table.minmax_lower.clone(),
    }
}

/// Discounted construction: prefix reward plus the discounted continuation of
/// the value-iteration approximation lowered by epsilon/2. Requires the
/// iteration error to be certified at most epsilon/2.
pub fn martin_discounted(
    game: &Game,
    tree: &HistoryTree,
    sv: &StateValueTable,
    epsilon: f64,
) -> Result<MartinFunction> {
    let discount = match &game.payoff.kind {
        PayoffKind::Discounted { discount, .. } => *discount,
        other => {
            return Err(GameError::Unsupported {
                class: other.class_name().into(),
                what: "discounted Martin construction".into(),
            })
        }
    };
    if sv.error_bound > epsilon / 2.0 {
        return Err(GameError::SolverFailure {
            context: "discounted Martin construction: iteration error above epsilon/2".into(),
            best_residual: sv.error_bound,
        });
    }
    let n = game.num_players();
    let mut values = vec![vec![0.0; tree.len()]; n];
    for node in tree.node_ids() {
        let h = tree.history(node);
        let trunc = game.payoff_eval(h, crate::game::EvalMode::Truncated)?;
        let w = discount.powi((h.stage() - 1) as i32);
        for i in 0..n {
            values[i][node] = trunc.values[i]
                + game.payoff.view_scale[i] * w * (sv.lo[i][tree.state(node)] - epsilon / 2.0);
        }
    }
    Ok(MartinFunction {
        epsilon,
        payoff_class: "discounted".into(),
        tolerance: sv.error_bound,
        depth: tree.depth(),
        values,
    })
}

/// Outcome of one property certification.
#[derive(Clone, Debug, Serialize)]
pub struct CertificationReport {
    pub property: u8,
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Option<String>,
    pub checked: usize,
}

impl CertificationReport {
    fn from_worst(property: u8, worst: f64, witness: Option<String>, checked: usize, tol: f64) -> Self {
        Self { property, pass: worst <= tol, worst_violation: worst.max(0.0), witness, checked }
    }
}

/// Property (1): `minmax - eps - tol <= D <= minmax + tol` at every node.
pub fn certify_property1(
    d: &MartinFunction,
    tree: &HistoryTree,
    table: &ValueTable,
    epsilon: f64,
    tol: f64,
) -> CertificationReport {
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut checked = 0;
    for node in tree.node_ids() {
        for i in 0..d.values.len() {
            checked += 1;
            let v = table.minmax(i, node);
            let dv = d.value(i, node);
            let viol = (dv - v).max(v - epsilon - dv);
            if viol > worst {
                worst = viol;
                witness = Some(tree.history(node).key());
            }
        }
    }
    CertificationReport::from_worst(1, worst, witness, checked, tol)
}

/// Property (2): `D(h) <= minmax of the one-shot game induced by D at h`,
/// checked with the coalition (bracket-lower) value so that a pass is
/// conservative for any player count.
pub fn certify_property2(
    game: &Game,
    tree: &HistoryTree,
    d: &MartinFunction,
    tol: f64,
) -> Result<CertificationReport> {
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut checked = 0;
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            continue;
        }
        let tensor = tensor_from_values(game, tree, node, &d.values);
        for i in 0..game.num_players() {
            checked += 1;
            let (matrix, _) = tensor.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            let viol = d.value(i, node) - sol.value;
            if viol > worst {
                worst = viol;
                witness = Some(tree.history(node).key());
            }
        }
    }
    Ok(CertificationReport::from_worst(2, worst, witness, checked, tol))
}

/// Report of the local/global certification of property (3).
#[derive(Clone, Debug, Serialize)]
pub struct Property3Report {
    pub local_pass: bool,
    pub local_worst: f64,
    pub local_witness: Option<String>,
    pub global_pass: bool,
    pub global_worst: f64,
    pub global_witness: Option<String>,
    pub global_checked: bool,
}

impl Property3Report {
    pub fn pass(&self) -> bool {
        self.local_pass && self.global_pass && self.global_checked
    }
}

/// Property (3) on the subtree of `from`: if the profile is locally good
/// (one-shot expectation of D at least the one-shot minmax at every node),
/// then its exact continuation payoff dominates the one-shot minmax.
/// When the local precondition fails the global check is skipped and the
/// violating history reported.
pub fn certify_property3(
    game: &Game,
    tree: &HistoryTree,
    d: &MartinFunction,
    profile: &dyn ProfilePolicy,
    from: usize,
    tol: f64,
) -> Result<Property3Report> {
    let n = game.num_players();
    let sub = tree.subtree(from);
    // one-shot minmax of the D-induced game, and E[D | h, sigma(h)]
    let mut local_worst = 0.0f64;
    let mut local_witness = None;
    let mut oneshot_minmax = vec![vec![f64::NAN; tree.len()]; n];
    for &node in &sub {
        if tree.is_leaf(node) {
            continue;
        }
        let tensor = tensor_from_values(game, tree, node, &d.values);
        let mix = profile.mixed_profile(game, tree.history(node))?;
        for i in 0..n {
            let (matrix, _) = tensor.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            oneshot_minmax[i][node] = sol.value;
            let e_d = tensor.expect(i, &mix);
            let viol = sol.value - e_d;
            if viol > local_worst {
                local_worst = viol;
                local_witness = Some(tree.history(node).key());
            }
        }
    }
    let local_pass = local_worst <= tol;
    if !local_pass {
        return Ok(Property3Report {
            local_pass,
            local_worst,
            local_witness,
            global_pass: false,
            global_worst: f64::NAN,
            global_witness: None,
            global_checked: false,
        });
    }
    let cont = continuation_values(game, tree, profile)?;
    let mut global_worst = 0.0f64;
    let mut global_witness = None;
    for &node in &sub {
        if tree.is_leaf(node) {
            continue;
        }
        for i in 0..n {
            let viol = oneshot_minmax[i][node] - cont[i][node];
            if viol > global_worst {
                global_worst = viol;
                global_witness = Some(tree.history(node).key());
            }
        }
    }
    Ok(Property3Report {
        local_pass,
        local_worst,
        local_witness,
        global_pass: global_worst <= tol,
        global_worst,
        global_witness,
        global_checked: true,
    })
}

/// Sample-based variant of the property (3) global check for payoff classes
/// without exact finite evaluation. The local precondition is still checked
/// exactly on the materialized tree; the global side compares a Monte Carlo
/// estimate of the continuation payoff (truncated at `stages` rounds, with a
/// declared truncation allowance) against the one-shot minmax of D. Flagged
/// statistical.
#[allow(clippy::too_many_arguments)]
pub fn certify_property3_statistical(
    game: &Game,
    tree: &HistoryTree,
    d: &MartinFunction,
    profile: &dyn ProfilePolicy,
    from: usize,
    stages: usize,
    rollouts: usize,
    seed: u64,
    truncation_allowance: f64,
    tol: f64,
) -> Result<Property3Report> {
    let n = game.num_players();
    let sub = tree.subtree(from);
    let mut local_worst = 0.0f64;
    let mut local_witness = None;
    let mut oneshot_minmax = vec![vec![f64::NAN; tree.len()]; n];
    for &node in &sub {
        if tree.is_leaf(node) {
            continue;
        }
        let tensor = tensor_from_values(game, tree, node, &d.values);
        let mix = profile.mixed_profile(game, tree.history(node))?;
        for i in 0..n {
            let (matrix, _) = tensor.coalition_matrix(i);
            let sol = solve_matrix_game(&matrix)?;
            oneshot_minmax[i][node] = sol.value;
            let viol = sol.value - tensor.expect(i, &mix);
            if viol > local_worst {
                local_worst = viol;
                local_witness = Some(tree.history(node).key());
            }
        }
    }
    let local_pass = local_worst <= tol;
    if !local_pass {
        return Ok(Property3Report {
            local_pass,
            local_worst,
            local_witness,
            global_pass: false,
            global_worst: f64::NAN,
            global_witness: None,
            global_checked: false,
        });
    }
    let mut global_worst = 0.0f64;
    let mut global_witness = None;
    for &node in &sub {
        if tree.is_leaf(node) {
            continue;
        }
        let h = tree.history(node);
        let (means, ses) =
            crate::game::expected_payoff_mc(game, profile, h, stages, rollouts, seed)?;
        for i in 0..n {
            let slack = 3.0 * ses[i] + truncation_allowance + tol;
            let viol = oneshot_minmax[i][node] - means[i] - slack;
            if viol > global_worst {
                global_worst = viol;
                global_witness = Some(h.key());
            }
        }
    }
    Ok(Property3Report {
        local_pass,
        local_worst,
        local_witness,
        global_pass: global_worst <= 0.0,
        global_worst,
        global_witness,
        global_checked: true,
    })
}

/// Per-node submartingale check under a profile: the expected next-stage D
/// dominates the current D (property (2) plus one-shot equilibrium play).
pub fn submartingale_residual(
    game: &Game,
    tree: &HistoryTree,
    d: &MartinFunction,
    profile: &dyn ProfilePolicy,
) -> Result<(f64, Option<String>)> {
    let mut worst = 0.0f64;
    let mut witness = None;
    for node in tree.node_ids() {
        if tree.is_leaf(node) {
            continue;
        }
        let tensor = tensor_from_values(game, tree, node, &d.values);
        let mix = profile.mixed_profile(game, tree.history(node))?;
        for i in 0..game.num_players() {
            let w = tensor.expect(i, &mix);
            let viol = d.value(i, node) - w;
            if viol > worst {
                worst = viol;
                witness = Some(tree.history(node).key());
            }
        }
    }
    Ok((worst, witness))
}

/// Convenience: build the full finite-horizon stack (tree, values, Martin
/// function) at the default depth from a given initial state.
pub fn finite_horizon_stack(
    game: &Game,
    s1: usize,
    config: &SolverConfig,
) -> Result<(HistoryTree, ValueTable, MartinFunction)> {
    let (tree, table) = crate::values::compute_minmax_values(game, s1, None, config)?;
    let d = martin_finite_horizon(game, &tree, &table);
    Ok((tree, table, d))
}

/// Default certification tolerance for depth-`d` recursions.
pub fn cert_tol(depth: usize) -> f64 {
    (depth as f64 + 1.0) * STAGE_TOL
}
