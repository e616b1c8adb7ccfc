//! K-fold cross-validation for the penalty strength.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::penalised::{LassoSolver, RidgePath, Standardised};
use super::check_rows;
use crate::error::{Error, Result};

const GRID_LEN: usize = 100;
const GRID_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Ridge,
    Lasso,
}

/// 100 log-spaced penalties from `1e-8` to `2·max_j |Z̃ⱼᵀ f̃|`, the smallest LASSO penalty with `β ≡ 0`.
pub fn default_lambda_grid(z: &DMatrix<f64>, f_column: &DVector<f64>) -> Vec<f64> {
    let f = DMatrix::from_column_slice(f_column.len(), 1, f_column.as_slice());
    let top = Standardised::new(z, &f).lambda_max(0);
    if !(top > GRID_FLOOR) {
        return vec![GRID_FLOOR];
    }
    let (lo, hi) = (GRID_FLOOR.ln(), top.ln());
    let mut grid: Vec<f64> = (0..GRID_LEN)
        .map(|i| (lo + (hi - lo) * i as f64 / (GRID_LEN - 1) as f64).exp())
        .collect();
    grid[0] = GRID_FLOOR;
    grid[GRID_LEN - 1] = top;
    grid
}

/// Contiguous-block fold labels, rotated by an offset drawn from `seed`.
pub fn fold_assignment(rows: usize, folds: usize, seed: u64) -> Vec<usize> {
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..rows);
    (0..rows)
        .map(|i| ((i + offset) % rows) * folds / rows)
        .collect()
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Held-out squared error summed over one fold, indexed `[column][lambda]`,
/// with the first LASSO non-convergence seen.
fn fold_errors(
    z: &DMatrix<f64>,
    f: &DMatrix<f64>,
    labels: &[usize],
    fold: usize,
    penalty: Penalty,
    grids: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Option<Error>)> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == fold).collect();
    let std = Standardised::new(&select_rows(z, &train), &select_rows(f, &train));
    let z_test = select_rows(z, &test);
    let f_test = select_rows(f, &test);

    let held_out_sse = |b: &DVector<f64>, t: usize| -> f64 {
        let mut beta = b.clone();
        for (j, &s) in std.scale.iter().enumerate() {
            beta[j] = if s > 0.0 { beta[j] / s } else { 0.0 };
        }
        let alpha = std.fbar[t] - std.zbar.dot(&beta);
        let pred = &z_test * &beta;
        (0..test.len())
            .map(|i| (f_test[(i, t)] - pred[i] - alpha).powi(2))
            .sum()
    };

    let mut out = Vec::with_capacity(f.ncols());
    let mut failure = None;
    match penalty {
        Penalty::Ridge => {
            let path = RidgePath::new(&std);
            for (t, grid) in grids.iter().enumerate() {
                out.push(grid.iter().map(|&l| held_out_sse(&path.coefficients(l, t), t)).collect());
            }
        }
        Penalty::Lasso => {
            let solver = LassoSolver::new(&std.x);
            for (t, grid) in grids.iter().enumerate() {
                let y = std.y.column(t).into_owned();
                // Walk from the largest penalty down so each solve warm-starts from a sparser fit.
                let mut order: Vec<usize> = (0..grid.len()).collect();
                order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
                let mut b = DVector::zeros(z.ncols());
                let mut errs = vec![0.0; grid.len()];
                for k in order {
                    // A penalty that does not converge on some fold is never chosen.
                    errs[k] = match solver.solve(&y, grid[k], &mut b) {
                        Ok(_) => held_out_sse(&b, t),
                        Err(e @ Error::NonConvergence { .. }) => {
                            failure.get_or_insert(e);
                            f64::INFINITY
                        }
                        Err(e) => return Err(e),
                    };
                }
                out.push(errs);
            }
        }
    }
    Ok((out, failure))
}

/// Picks, per integrand column, the penalty with the smallest mean held-out squared error.
///
/// `lambdas = None` uses [`default_lambda_grid`] for each column. Ties go to the larger penalty.
pub fn cross_validate(
    z: &DMatrix<f64>,
    f: &DMatrix<f64>,
    penalty: Penalty,
    lambdas: Option<&[f64]>,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_rows(z, f)?;
    let s = z.nrows();
    if folds < 2 || s < folds {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs 2 <= folds <= samples (folds={folds}, samples={s})"
        )));
    }
    let grids: Vec<Vec<f64>> = match lambdas {
        Some([]) => return Err(Error::InvalidArgument("empty penalty grid".into())),
        Some(grid) => {
            if let Some(bad) = grid.iter().find(|l| l.is_nan() || **l < 0.0) {
                return Err(Error::InvalidArgument(format!("penalty must be non-negative, got {bad}")));
            }
            vec![grid.to_vec(); f.ncols()]
        }
        None => (0..f.ncols())
            .map(|t| default_lambda_grid(z, &f.column(t).into_owned()))
            .collect(),
    };
    let labels = fold_assignment(s, folds, seed);

    let per_fold: Vec<(Vec<Vec<f64>>, Option<Error>)> = (0..folds)
        .into_par_iter()
        .map(|k| fold_errors(z, f, &labels, k, penalty, &grids))
        .collect::<Result<_>>()?;

    grids
        .iter()
        .enumerate()
        .map(|(t, grid)| {
            // Summed in fold order, so the choice does not depend on scheduling.
            let total: Vec<f64> = (0..grid.len())
                .map(|k| per_fold.iter().map(|(fold, _)| fold[t][k]).sum::<f64>() / s as f64)
                .collect();
            let mut best = 0;
            for k in 1..grid.len() {
                let better = total[k] < total[best]
                    || (total[k] == total[best] && grid[k] > grid[best]);
                if better {
                    best = k;
                }
            }
            if total[best].is_finite() {
                Ok(grid[best])
            } else {
                Err(per_fold
                    .iter()
                    .find_map(|(_, e)| e.clone())
                    .unwrap_or_else(|| Error::InvalidArgument("no penalty gave a finite held-out error".into())))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random_matrix;
    use super::super::{solve_lasso_raw, solve_ridge_raw};
    use super::*;

    #[test]
    fn folds_are_contiguous_blocks() {
        let labels = fold_assignment(20, 4, 0);
        let mut changes = 0;
        for i in 1..20 {
            if labels[i] != labels[i - 1] {
                changes += 1;
            }
        }
        // Four blocks on a ring; at most one extra break where the rotation wraps.
        assert!(changes <= 4, "{labels:?}");
        for k in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 5);
        }
        assert_eq!(labels, fold_assignment(20, 4, 0));
    }

    #[test]
    fn single_lambda_grid() {
        let z = random_matrix(30, 3, 1);
        let f = random_matrix(30, 2, 2);
        for p in [Penalty::Ridge, Penalty::Lasso] {
            assert_eq!(cross_validate(&z, &f, p, Some(&[0.3]), 5, 1).unwrap(), vec![0.3, 0.3]);
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let z = random_matrix(30, 3, 1);
        let f = random_matrix(30, 1, 2);
        assert!(cross_validate(&z, &f, Penalty::Ridge, Some(&[]), 5, 1).is_err());
        assert!(cross_validate(&z, &f, Penalty::Ridge, None, 1, 1).is_err());
        assert!(cross_validate(&z, &f, Penalty::Ridge, None, 31, 1).is_err());
    }

    /// Brute-force sweep: refits each training split with the public solvers.
    fn sweep_oracle(z: &DMatrix<f64>, f: &DMatrix<f64>, penalty: Penalty, grid: &[f64], folds: usize, seed: u64) -> Vec<f64> {
        let labels = fold_assignment(z.nrows(), folds, seed);
        grid.iter()
            .map(|&l| {
                let mut sse = 0.0;
                for k in 0..folds {
                    let train: Vec<usize> = (0..z.nrows()).filter(|&i| labels[i] != k).collect();
                    let zt = select_rows(z, &train);
                    let ft = select_rows(f, &train);
                    let fit = match penalty {
                        Penalty::Ridge => solve_ridge_raw(&zt, &ft, l).unwrap(),
                        Penalty::Lasso => solve_lasso_raw(&zt, &ft, l).unwrap(),
                    };
                    for i in (0..z.nrows()).filter(|&i| labels[i] == k) {
                        let pred = fit.intercept[0] + (0..z.ncols()).map(|j| z[(i, j)] * fit.coefficients[(j, 0)]).sum::<f64>();
                        sse += (f[(i, 0)] - pred).powi(2);
                    }
                }
                sse
            })
            .collect()
    }

    #[test]
    fn noiseless_linear_picks_smallest() {
        let z = random_matrix(60, 4, 3);
        let beta = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 3.0]);
        let f = (&z * beta).add_scalar(1.0);
        let grid = [1e-6, 1e-3, 0.1, 1.0, 10.0];
        for p in [Penalty::Ridge, Penalty::Lasso] {
            let errs = sweep_oracle(&z, &f, p, &grid, 10, 4);
            assert!(errs.windows(2).all(|w| w[0] <= w[1]), "{errs:?}");
            assert_eq!(cross_validate(&z, &f, p, Some(&grid), 10, 4).unwrap(), vec![1e-6]);
        }
    }

    #[test]
    fn pure_noise_picks_largest() {
        let grid = [1e-4, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e4];
        let mut hits = 0;
        for seed in 0..50 {
            let z = random_matrix(60, 5, 1000 + seed);
            let f = random_matrix(60, 1, 2000 + seed);
            let chosen = cross_validate(&z, &f, Penalty::Lasso, Some(&grid), 10, seed).unwrap()[0];
            let errs = sweep_oracle(&z, &f, Penalty::Lasso, &grid, 10, seed);
            let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
            let oracle_pick = grid.iter().zip(&errs).filter(|(_, &e)| e == best).map(|(l, _)| *l).fold(0.0, f64::max);
            assert!((chosen - oracle_pick).abs() <= 1e-12 * oracle_pick || (errs[grid.iter().position(|l| *l == chosen).unwrap()] - best).abs() < 1e-9 * best);
            if chosen == 1e4 {
                hits += 1;
            }
        }
        assert!(hits >= 45, "largest penalty chosen in {hits}/50 seeds");
    }

    #[test]
    fn default_grid_spans_to_lambda_max() {
        let z = random_matrix(40, 3, 8);
        let f = random_matrix(40, 1, 9);
        let grid = default_lambda_grid(&z, &f.column(0).into_owned());
        assert_eq!(grid.len(), 100);
        assert!((grid[0] - 1e-8).abs() < 1e-20);
        let top = *grid.last().unwrap();
        let at_top = solve_lasso_raw(&z, &f, top).unwrap();
        assert!(at_top.coefficients.iter().all(|v| *v == 0.0));
        let below = solve_lasso_raw(&z, &f, top * 0.99).unwrap();
        assert!(below.coefficients.iter().any(|v| *v != 0.0));
    }
}
