//! Nash equilibria of one-shot games.
//!
//! Method ladder: exhaustive pure-profile scan; exact support enumeration for
//! two players (linear indifference systems); closed-form support enumeration
//! for three or more players with binary action sets (linear and quadratic
//! indifference systems); damped best-response iteration with multistart as a
//! fallback. Returned regrets are always recomputed exactly from the tensor,
//! and candidates are scanned in a fixed lexicographic order so the selected
//! equilibrium is reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::game::MixedAction;
use crate::lp::solve_linear;
use crate::oneshot::{regret, OneShotTensor, SolverConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NashResult {
    pub profile: Vec<MixedAction>,
    pub regrets: Vec<f64>,
    pub method: &'static str,
}

const ACCEPT_TOL: f64 = 1e-10;

pub fn nash_equilibrium(tensor: &OneShotTensor, config: &SolverConfig) -> Result<NashResult> {
    let mut best: Option<NashResult> = None;
    let consider = |profile: Vec<MixedAction>, method: &'static str, best: &mut Option<NashResult>| {
        let regrets = regret(tensor, &profile);
        let worst = regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let better = match best {
            None => true,
            Some(b) => worst < b.regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1e-15,
        };
        if better {
            *best = Some(NashResult { profile, regrets, method });
        }
        worst
    };

    // 1. pure profiles, lexicographic
    for p in 0..tensor.num_profiles() {
        let acts = tensor.profile_actions(p);
        let profile: Vec<MixedAction> = acts
            .iter()
            .enumerate()
            .map(|(i, &a)| MixedAction::pure(tensor.action_counts[i], a))
            .collect();
        if consider(profile, "pure-scan", &mut best) <= ACCEPT_TOL {
            return Ok(best.unwrap());
        }
    }

    let n = tensor.num_players();
    if n == 2 {
        for cand in bimatrix_supports(tensor) {
            if consider(cand, "support-enumeration", &mut best) <= ACCEPT_TOL {
                return Ok(best.unwrap());
            }
        }
    } else if tensor.action_counts.iter().all(|&k| k <= 2) {
        for cand in binary_supports(tensor) {
            if consider(cand, "binary-closed-form", &mut best) <= ACCEPT_TOL {
                return Ok(best.unwrap());
            }
        }
    }

    // 4. damped best-response fallback
    for cand in damped_best_response(tensor, config) {
        if consider(cand, "damped-br", &mut best) <= ACCEPT_TOL {
            return Ok(best.unwrap());
        }
    }

    let best = best.expect("pure scan always yields a candidate");
    let worst = best.regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if worst <= config.regret_tol {
        Ok(best)
    } else {
        Err(GameError::SolverFailure {
            context: format!(
                "nash equilibrium at {}",
                tensor.history_key.as_deref().unwrap_or("<tensor>")
            ),
            best_residual: worst,
        })
    }
}

// ---------------------------------------------------------------------------
// Two players: support enumeration
// ---------------------------------------------------------------------------

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, start: usize, n: usize, k: usize) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for a in start..n {
            cur.push(a);
            rec(out, cur, a + 1, n, k);
            cur.pop();
        }
    }
    rec(&mut out, &mut cur, 0, n, k);
    out
}

fn bimatrix_supports(tensor: &OneShotTensor) -> Vec<Vec<MixedAction>> {
    let (m0, m1) = (tensor.action_counts[0], tensor.action_counts[1]);
    let payoff = |i: usize, a: usize, b: usize| tensor.payoffs[i][tensor.profile_index(&[a, b])];
    let mut out = Vec::new();
    for k in 2..=m0.min(m1) {
        for s0 in subsets_of_size(m0, k) {
            for s1 in subsets_of_size(m1, k) {
                // x over s0 equalizes player 1 across s1; y over s1 equalizes player 0
                let x = equalizer(k, &s0, &s1, |a, b| payoff(1, a, b));
                let y = equalizer(k, &s1, &s0, |b, a| payoff(0, a, b));
                if let (Some(x), Some(y)) = (x, y) {
                    let mut xa = vec![0.0; m0];
                    let mut ya = vec![0.0; m1];
                    for (idx, &a) in s0.iter().enumerate() {
                        xa[a] = x[idx];
                    }
                    for (idx, &b) in s1.iter().enumerate() {
                        ya[b] = y[idx];
                    }
                    if let (Ok(ma), Ok(mb)) = (MixedAction::new(xa), MixedAction::new(ya)) {
                        out.push(vec![ma, mb]);
                    }
                }
            }
        }
    }
    out
}

/// Find a distribution over `own` making the opponent indifferent across
/// `other` for the given payoff view. Returns None when the linear system is
/// singular or leaves the simplex.
fn equalizer(
    k: usize,
    own: &[usize],
    other: &[usize],
    payoff: impl Fn(usize, usize) -> f64,
) -> Option<Vec<f64>> {
    // unknowns: weight on each own action; equations: payoff(other[j]) -
    // payoff(other[0]) = 0 for j = 1..k, plus sum = 1
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for j in 1..k {
        for (col, &ai) in own.iter().enumerate() {
            a[j - 1][col] = payoff(ai, other[j]) - payoff(ai, other[0]);
        }
    }
    for col in 0..k {
        a[k - 1][col] = 1.0;
    }
    b[k - 1] = 1.0;
    let x = solve_linear(&a, &b)?;
    if x.iter().any(|&v| v < -1e-9) {
        return None;
    }
    let sum: f64 = x.iter().sum();
    Some(x.iter().map(|&v| (v.max(0.0)) / sum).collect())
}

// ---------------------------------------------------------------------------
// Binary-action games, three or more players
// ---------------------------------------------------------------------------

/// Enumerate support patterns where a subset of players mixes over their two
/// actions and the rest play pure, solving the indifference systems exactly.
fn binary_supports(tensor: &OneShotTensor) -> Vec<Vec<MixedAction>> {
    let n = tensor.num_players();
    let mixable: Vec<usize> = (0..n).filter(|&i| tensor.action_counts[i] == 2).collect();
    let mut out = Vec::new();
    // subsets of mixers ordered by size then lexicographic mask
    for size in 1..=mixable.len().min(3) {
        for mixers in subsets_of_size(mixable.len(), size) {
            let mixers: Vec<usize> = mixers.iter().map(|&k| mixable[k]).collect();
            let pure_players: Vec<usize> = (0..n).filter(|i| !mixers.contains(i)).collect();
            // iterate pure assignments lexicographically
            let combos: usize = pure_players.iter().map(|&i| tensor.action_counts[i]).product();
            for mut c in 0..combos.max(1) {
                let mut pure = vec![0usize; n];
                for &i in pure_players.iter().rev() {
                    pure[i] = c % tensor.action_counts[i];
                    c /= tensor.action_counts[i];
                }
                match mixers.len() {
                    1 => one_mixer(tensor, mixers[0], &pure_players, &pure, &mut out),
                    2 => two_mixers(tensor, &mixers, &pure_players, &pure, &mut out),
                    3 => three_mixers(tensor, &mixers, &pure_players, &pure, &mut out),
                    _ => {}
                }
            }
        }
    }
    out
}

fn profile_with(
    tensor: &OneShotTensor,
    pure_players: &[usize],
    pure: &[usize],
    mixer_probs: &[(usize, f64)], // (player, prob of action 0)
) -> Vec<MixedAction> {
    let n = tensor.num_players();
    let mut prof: Vec<MixedAction> = (0..n)
        .map(|i| MixedAction::pure(tensor.action_counts[i], 0))
        .collect();
    for &i in pure_players {
        prof[i] = MixedAction::pure(tensor.action_counts[i], pure[i]);
    }
    for &(i, p) in mixer_probs {
        let p = p.clamp(0.0, 1.0);
        prof[i] = MixedAction::new(vec![p, 1.0 - p]).unwrap();
    }
    prof
}

/// Payoff difference (action 0 minus action 1) of `player` under the profile.
fn diff_at(tensor: &OneShotTensor, player: usize, profile: &[MixedAction]) -> f64 {
    tensor.expect_vs_pure(player, player, 0, profile)
        - tensor.expect_vs_pure(player, player, 1, profile)
}

fn one_mixer(
    tensor: &OneShotTensor,
    m: usize,
    pure_players: &[usize],
    pure: &[usize],
    out: &mut Vec<Vec<MixedAction>>,
) {
    let base = profile_with(tensor, pure_players, pure, &[(m, 0.5)]);
    let d = diff_at(tensor, m, &base);
    if d.abs() > 1e-11 {
        return; // no indifference possible: mixing is never optimal here
    }
    // the mixer is indifferent for any p; find p keeping the pure players
    // best-responding (their deviation gains are linear in p)
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for &j in pure_players {
        for dev in 0..tensor.action_counts[j] {
            if dev == pure[j] {
                continue;
            }
            let eval = |p: f64| {
                let prof = profile_with(tensor, pure_players, pure, &[(m, p)]);
                tensor.expect_vs_pure(j, j, dev, &prof) - tensor.expect(j, &prof)
            };
            let g0 = eval(0.0);
            let g1 = eval(1.0);
            // need g(p) = g0 + (g1-g0) p <= 0
            let slope = g1 - g0;
            if slope.abs() < 1e-13 {
                if g0 > 1e-10 {
                    return;
                }
            } else if slope > 0.0 {
                hi = hi.min(-g0 / slope);
            } else {
                lo = lo.max(-g0 / slope);
            }
        }
    }
    if lo <= hi + 1e-12 {
        let p = 0.5 * (lo.max(0.0) + hi.min(1.0));
        out.push(profile_with(tensor, pure_players, pure, &[(m, p)]));
    }
}

fn two_mixers(
    tensor: &OneShotTensor,
    mixers: &[usize],
    pure_players: &[usize],
    pure: &[usize],
    out: &mut Vec<Vec<MixedAction>>,
) {
    let (m0, m1) = (mixers[0], mixers[1]);
    // m0's indifference is linear in p1, and m1's in p0
    let d_of = |who: usize, other: usize, p_other: f64| {
        let prof = profile_with(tensor, pure_players, pure, &[(who, 0.5), (other, p_other)]);
        diff_at(tensor, who, &prof)
    };
    let solve = |d0: f64, d1: f64| -> Option<f64> {
        let slope = d1 - d0;
        if slope.abs() < 1e-13 {
            None
        } else {
            let p = -d0 / slope;
            (-1e-9..=1.0 + 1e-9).contains(&p).then_some(p.clamp(0.0, 1.0))
        }
    };
    let p1 = solve(d_of(m0, m1, 0.0), d_of(m0, m1, 1.0));
    let p0 = solve(d_of(m1, m0, 0.0), d_of(m1, m0, 1.0));
    if let (Some(p0), Some(p1)) = (p0, p1) {
        out.push(profile_with(tensor, pure_players, pure, &[(m0, p0), (m1, p1)]));
    }
}

fn mul2(a: [f64; 2], b: [f64; 2]) -> [f64; 3] {
    [a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[1] * b[1]]
}

fn quadratic_roots(c: [f64; 3]) -> Vec<f64> {
    let [c0, c1, c2] = c;
    if c2.abs() < 1e-13 {
        if c1.abs() < 1e-13 {
            return Vec::new();
        }
        return vec![-c0 / c1];
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    vec![(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)]
}

fn three_mixers(
    tensor: &OneShotTensor,
    mixers: &[usize],
    pure_players: &[usize],
    pure: &[usize],
    out: &mut Vec<Vec<MixedAction>>,
) {
    // Indifference of each mixer is bilinear in the other two mixing
    // probabilities; substituting two of the relations into the third gives a
    // quadratic. Try each rotation of the pivot variable for robustness.
    let coeffs = |who: usize, a: usize, b: usize| -> [f64; 4] {
        let d = |pa: f64, pb: f64| {
            let prof =
                profile_with(tensor, pure_players, pure, &[(who, 0.5), (a, pa), (b, pb)]);
            diff_at(tensor, who, &prof)
        };
        let d00 = d(0.0, 0.0);
        let d10 = d(1.0, 0.0);
        let d01 = d(0.0, 1.0);
        let d11 = d(1.0, 1.0);
        // d(pa,pb) = A + B pa + C pb + D pa pb
        [d00, d10 - d00, d01 - d00, d11 - d10 - d01 + d00]
    };
    for rot in 0..3 {
        let m = [mixers[rot], mixers[(rot + 1) % 3], mixers[(rot + 2) % 3]];
        // unknown pivot x = p(m[0]); express p(m[1]) from m[2]'s indifference
        // (depends on m0, m1) and p(m[2]) from m[1]'s (depends on m0, m2).
        let [a2, b2, c2, d2] = coeffs(m[2], m[0], m[1]); // in (p0, p1)
        let [a1, b1, c1, d1] = coeffs(m[1], m[0], m[2]); // in (p0, p2)
        let [a0, b0, c0, d0] = coeffs(m[0], m[1], m[2]); // in (p1, p2)
        // p1 = -(a2 + b2 x)/(c2 + d2 x),  p2 = -(a1 + b1 x)/(c1 + d1 x)
        let na2 = [a2, b2];
        let de2 = [c2, d2];
        let na1 = [a1, b1];
        let de1 = [c1, d1];
        // a0*de2*de1 - b0*na2*de1 - c0*na1*de2 + d0*na2*na1 = 0
        let mut q = [0.0f64; 3];
        let t1 = mul2(de2, de1);
        let t2 = mul2(na2, de1);
        let t3 = mul2(na1, de2);
        let t4 = mul2(na2, na1);
        for k in 0..3 {
            q[k] = a0 * t1[k] - b0 * t2[k] - c0 * t3[k] + d0 * t4[k];
        }
        for x in quadratic_roots(q) {
            if !(-1e-9..=1.0 + 1e-9).contains(&x) || !x.is_finite() {
                continue;
            }
            let den2 = c2 + d2 * x;
            let den1 = c1 + d1 * x;
            if den2.abs() < 1e-11 || den1.abs() < 1e-11 {
                continue;
            }
            let p1 = -(a2 + b2 * x) / den2;
            let p2 = -(a1 + b1 * x) / den1;
            if !(-1e-7..=1.0 + 1e-7).contains(&p1) || !(-1e-7..=1.0 + 1e-7).contains(&p2) {
                continue;
            }
            out.push(profile_with(
                tensor,
                pure_players,
                pure,
                &[(m[0], x.clamp(0.0, 1.0)), (m[1], p1), (m[2], p2)],
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// Damped best-response fallback
// ---------------------------------------------------------------------------

fn damped_best_response(tensor: &OneShotTensor, config: &SolverConfig) -> Vec<Vec<MixedAction>> {
    let n = tensor.num_players();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5851f42d4c957f2d);
    let mut out = Vec::new();
    let starts = config.multistart.max(1);
    for start in 0..starts {
        let mut profile: Vec<MixedAction> = (0..n)
            .map(|i| {
                let k = tensor.action_counts[i];
                if start == 0 {
                    MixedAction::uniform(k)
                } else {
                    let mut v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let s: f64 = v.iter().sum();
                    for x in v.iter_mut() {
                        *x /= s;
                    }
                    MixedAction::new(v).unwrap()
                }
            })
            .collect();
        let mut best_here = f64::INFINITY;
        let mut best_profile = profile.clone();
        for t in 0..2000usize {
            let alpha = 2.0 / (t as f64 + 4.0);
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let k = tensor.action_counts[i];
                let br = (0..k)
                    .max_by(|&a, &b| {
                        tensor
                            .expect_vs_pure(i, i, a, &profile)
                            .partial_cmp(&tensor.expect_vs_pure(i, i, b, &profile))
                            .unwrap()
                    })
                    .unwrap();
                let mut v: Vec<f64> = profile[i].probs().iter().map(|&p| p * (1.0 - alpha)).collect();
                v[br] += alpha;
                next.push(MixedAction::new(v).unwrap());
            }
            profile = next;
            let worst = regret(tensor, &profile)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            if worst < best_here {
                best_here = worst;
                best_profile = profile.clone();
            }
            if worst <= ACCEPT_TOL {
                break;
            }
        }
        out.push(best_profile);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(counts: Vec<usize>, payoffs: Vec<Vec<f64>>) -> OneShotTensor {
        OneShotTensor { action_counts: counts, payoffs, history_key: None }
    }

    #[test]
    fn dominant_profile_is_found_pure() {
        // both players strictly prefer action 1
        let t = tensor(
            vec![2, 2],
            vec![vec![0.0, 0.1, 0.8, 1.0], vec![0.0, 0.8, 0.1, 1.0]],
        );
        let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
        assert_eq!(r.method, "pure-scan");
        assert_eq!(r.profile[0].prob(1), 1.0);
        assert!(r.regrets.iter().all(|&x| x <= 1e-12));
    }

    #[test]
    fn matching_pennies_mixes_uniformly() {
        let t = tensor(
            vec![2, 2],
            vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
        );
        let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
        assert!((r.profile[0].prob(0) - 0.5).abs() < 1e-9);
        assert!((r.profile[1].prob(0) - 0.5).abs() < 1e-9);
        assert!(r.regrets.iter().all(|&x| x <= 1e-9));
    }

    #[test]
    fn random_two_player_regret_certified_by_pure_deviations() {
        let mut x = 0.37f64;
        let mut next = || {
            x = (x * 113.7 + 0.1357).fract();
            x
        };
        for _ in 0..50 {
            let t = tensor(
                vec![2, 2],
                vec![
                    (0..4).map(|_| next()).collect(),
                    (0..4).map(|_| next()).collect(),
                ],
            );
            let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
            // oracle: exhaustive pure deviation check
            for i in 0..2 {
                let base = t.expect(i, &r.profile);
                for a in 0..2 {
                    assert!(
                        t.expect_vs_pure(i, i, a, &r.profile) - base <= 1e-9,
                        "profitable deviation"
                    );
                }
            }
        }
    }

    #[test]
    fn three_player_matching_game_solved() {
        // player 0 wants to mismatch 1; 1 wants to match 0; 2 indifferent
        let mut payoffs = vec![vec![0.0; 8]; 3];
        let t0 = tensor(vec![2, 2, 2], vec![vec![0.0; 8]; 3]);
        for p in 0..8 {
            let a = t0.profile_actions(p);
            payoffs[0][p] = if a[0] != a[1] { 1.0 } else { 0.0 };
            payoffs[1][p] = if a[0] == a[1] { 1.0 } else { 0.0 };
            payoffs[2][p] = 0.5;
        }
        let t = tensor(vec![2, 2, 2], payoffs);
        let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
        let worst = r.regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1e-9, "worst regret {worst}");
        assert!((r.profile[0].prob(0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn random_three_player_games_reach_tiny_regret() {
        let mut x = 0.911f64;
        let mut next = || {
            x = (x * 77.31 + 0.4519).fract();
            x
        };
        for round in 0..60 {
            let t = tensor(
                vec![2, 2, 2],
                (0..3).map(|_| (0..8).map(|_| next()).collect()).collect(),
            );
            let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
            let worst = r.regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= 1e-8, "round {round}: worst regret {worst}");
        }
    }

    #[test]
    fn one_action_players_are_handled() {
        let t = tensor(vec![1, 2, 2], {
            let mut p = vec![vec![0.0; 4]; 3];
            for idx in 0..4 {
                p[1][idx] = if idx / 2 == idx % 2 { 1.0 } else { 0.0 }; // match
                p[2][idx] = if idx / 2 != idx % 2 { 1.0 } else { 0.0 }; // mismatch
            }
            p
        });
        let r = nash_equilibrium(&t, &SolverConfig::default()).unwrap();
        let worst = r.regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1e-9);
    }
}
