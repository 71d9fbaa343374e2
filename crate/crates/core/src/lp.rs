//! Zero-sum matrix game solver.
//!
//! The value and optimal mixed strategies are computed by solving the
//! standard linear program: after shifting the payoffs positive, maximize
//! `sum z` subject to `M z <= 1, z >= 0` with a slack basis, which yields the
//! column player's strategy directly and the row player's from the duals.
//! The returned duality gap is re-measured from the strategies themselves,
//! never read off the tableau.

use crate::error::{GameError, Result};

#[derive(Clone, Debug)]
pub struct MatrixGameSolution {
    pub value: f64,
    /// Maximizer's optimal mixed strategy over rows.
    pub row_strategy: Vec<f64>,
    /// Minimizer's optimal mixed strategy over columns.
    pub col_strategy: Vec<f64>,
    /// max_r (M y)_r - min_c (x^T M)_c, certified from the strategies.
    pub duality_gap: f64,
}

const PIVOT_TOL: f64 = 1e-11;
const MAX_ITERS: usize = 10_000;

/// Solve the zero-sum matrix game where the row player maximizes `m[r][c]`.
pub fn solve_matrix_game(m: &[Vec<f64>]) -> Result<MatrixGameSolution> {
    let rows = m.len();
    if rows == 0 || m[0].is_empty() {
        return Err(GameError::Invalid("empty payoff matrix".into()));
    }
    let cols = m[0].len();
    if m.iter().any(|r| r.len() != cols) {
        return Err(GameError::Invalid("ragged payoff matrix".into()));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GameError::Invalid("non-finite payoff entry".into()));
    }

    let min_entry = m.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_entry;

    // Tableau: rows constraints (one per matrix row), columns = cols z-vars
    // + rows slacks + rhs. Objective row at the bottom (maximize sum z).
    let width = cols + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for r in 0..rows {
        for c in 0..cols {
            t[r][c] = m[r][c] + shift;
        }
        t[r][cols + r] = 1.0;
        t[r][width - 1] = 1.0;
    }
    for c in 0..cols {
        t[rows][c] = -1.0;
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let mut iters = 0usize;
    loop {
        iters += 1;
        if iters > MAX_ITERS {
            return Err(GameError::SolverFailure {
                context: "matrix game simplex".into(),
                best_residual: f64::NAN,
            });
        }
        let bland = iters > 4 * (rows + cols + 4);
        // entering column: most negative reduced cost; Bland's rule if stalling
        let mut enter = None;
        let mut best = -PIVOT_TOL;
        for c in 0..width - 1 {
            let rc = t[rows][c];
            if bland {
                if rc < -PIVOT_TOL {
                    enter = Some(c);
                    break;
                }
            } else if rc < best {
                best = rc;
                enter = Some(c);
            }
        }
        let Some(enter) = enter else { break };
        // ratio test, ties to the lowest row index
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..rows {
            if t[r][enter] > PIVOT_TOL {
                let ratio = t[r][width - 1] / t[r][enter];
                if ratio < best_ratio - 1e-15 {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(leave) = leave else {
            return Err(GameError::SolverFailure {
                context: "matrix game simplex unbounded".into(),
                best_residual: f64::NAN,
            });
        };
        // pivot
        let piv = t[leave][enter];
        for c in 0..width {
            t[leave][c] /= piv;
        }
        for r in 0..rows + 1 {
            if r != leave {
                let f = t[r][enter];
                if f != 0.0 {
                    for c in 0..width {
                        t[r][c] -= f * t[leave][c];
                    }
                }
            }
        }
        basis[leave] = enter;
    }

    // objective value = sum z at optimum
    let total = t[rows][width - 1];
    if total <= 0.0 {
        return Err(GameError::SolverFailure {
            context: "matrix game degenerate objective".into(),
            best_residual: total,
        });
    }
    let v_shifted = 1.0 / total;

    let mut z = vec![0.0; cols];
    for (r, &b) in basis.iter().enumerate() {
        if b < cols {
            z[b] = t[r][width - 1];
        }
    }
    let mut col_strategy: Vec<f64> = z.iter().map(|&x| (x * v_shifted).max(0.0)).collect();
    let cs: f64 = col_strategy.iter().sum();
    for y in col_strategy.iter_mut() {
        *y /= cs;
    }

    // duals = reduced costs under the slack columns
    let mut row_strategy: Vec<f64> = (0..rows).map(|r| (t[rows][cols + r] * v_shifted).max(0.0)).collect();
    let rs: f64 = row_strategy.iter().sum();
    if rs <= 0.0 {
        return Err(GameError::SolverFailure {
            context: "matrix game dual degenerate".into(),
            best_residual: rs,
        });
    }
    for x in row_strategy.iter_mut() {
        *x /= rs;
    }

    // certify from the strategies
    let row_guarantee = (0..cols)
        .map(|c| (0..rows).map(|r| row_strategy[r] * m[r][c]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let col_guarantee = (0..rows)
        .map(|r| (0..cols).map(|c| col_strategy[c] * m[r][c]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let duality_gap = col_guarantee - row_guarantee;

    Ok(MatrixGameSolution {
        value: 0.5 * (row_guarantee + col_guarantee),
        row_strategy,
        col_strategy,
        duality_gap,
    })
}

/// Solve a small square linear system by Gaussian elimination with partial
/// pivoting. Returns None when the system is singular to working precision.
pub fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matching_pennies_is_half() {
        let m = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sol = solve_matrix_game(&m).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-9);
        assert!((sol.row_strategy[0] - 0.5).abs() < 1e-9);
        assert!((sol.col_strategy[0] - 0.5).abs() < 1e-9);
        assert!(sol.duality_gap.abs() <= 1e-9);
    }

    #[test]
    fn dominant_row_yields_its_worst_entry() {
        let m = vec![vec![1.0, 1.0], vec![0.0, 0.5]];
        let sol = solve_matrix_game(&m).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singleton_matrix() {
        let m = vec![vec![-3.25]];
        let sol = solve_matrix_game(&m).unwrap();
        assert!((sol.value + 3.25).abs() < 1e-12);
    }

    #[test]
    fn random_matrices_certify_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=5);
            let cols = rng.gen_range(1..=5);
            let m: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let sol = solve_matrix_game(&m).unwrap();
            assert!(sol.duality_gap.abs() <= 1e-9, "gap {}", sol.duality_gap);
            let sum_r: f64 = sol.row_strategy.iter().sum();
            assert!((sum_r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rock_paper_scissors_value_zero() {
        let m = vec![
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ];
        let sol = solve_matrix_game(&m).unwrap();
        assert!(sol.value.abs() < 1e-9);
        for p in &sol.row_strategy {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_solver_roundtrip() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let b = vec![5.0, 10.0];
        let x = solve_linear(&a, &b).unwrap();
        assert!((2.0 * x[0] + x[1] - 5.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 10.0).abs() < 1e-12);
    }
}
