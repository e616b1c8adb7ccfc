//! Linear least-squares machinery behind the control-variate fits.
//!
//! Every solver fits `f ≈ Zβ + α` column by column of `f`, with the intercept
//! `α` left unpenalised. The intercept is handled by centering `Z` and `f`,
//! never by an explicit constant column.
//!
//! Penalised objectives use the raw residual sum of squares,
//! `‖Zβ + α − f‖² + λ·pen(β)`. Libraries that scale the loss by `1/(2S)` use
//! `λ_lib = λ / (2S)` for the same fit.

mod cv;
mod penalised;
mod qr;

pub use cv::{cross_validate, default_lambda_grid, fold_assignment, Penalty};
pub use penalised::{solve_lasso, solve_lasso_raw, solve_ridge, solve_ridge_raw, LASSO_MAX_SWEEPS, LASSO_TOLERANCE};
pub use qr::{PivotedQr, RANK_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stein::DesignMatrix;

/// `S × T` integrand evaluations, one column per expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandMatrix(DMatrix<f64>);

impl IntegrandMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "integrand matrix needs at least one row and one column".into(),
            ));
        }
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                if !values[(r, c)].is_finite() {
                    return Err(Error::NonFinite {
                        what: "integrands",
                        row: r,
                        col: c,
                    });
                }
            }
        }
        Ok(IntegrandMatrix(values))
    }

    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(crate::stein::rows_to_matrix(rows, "integrand")?)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn column_means(&self) -> Vec<f64> {
        column_means(&self.0).iter().copied().collect()
    }
}

/// Which criterion produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FitMethod {
    Ols,
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
}

/// Intercepts and coefficients for `T` integrands.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Length `T`.
    pub intercept: Vec<f64>,
    /// `J × T`.
    pub coefficients: DMatrix<f64>,
    pub method: FitMethod,
}

impl FitResult {
    /// Residuals `f - Zβ - α`.
    pub fn residuals(&self, z: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = f - z * &self.coefficients;
        for (t, a) in self.intercept.iter().enumerate() {
            r.column_mut(t).add_scalar_mut(-a);
        }
        r
    }
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Column means and the centered copy of `m`.
pub(crate) fn center(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let means = column_means(m);
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (means, c)
}

/// `α = f̄ − z̄ᵀβ` for each integrand.
pub(crate) fn intercepts(zbar: &DVector<f64>, fbar: &DVector<f64>, beta: &DMatrix<f64>) -> Vec<f64> {
    (0..fbar.len())
        .map(|t| fbar[t] - zbar.dot(&beta.column(t)))
        .collect()
}

fn check_rows(z: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<()> {
    if z.nrows() != f.nrows() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: z.nrows(),
            found: f.nrows(),
        });
    }
    Ok(())
}

/// Ordinary least squares on raw matrices; the factorisation is shared by all columns of `f`.
pub fn solve_ols_raw(z: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<FitResult> {
    check_rows(z, f)?;
    let (s, j) = z.shape();
    if s <= j {
        return Err(Error::Unidentifiable { rows: s, columns: j });
    }
    let (zbar, zc) = center(z);
    let (fbar, fc) = center(f);
    let qr = PivotedQr::factor(zc)?;
    let coefficients = qr.solve(&fc);
    Ok(FitResult {
        intercept: intercepts(&zbar, &fbar, &coefficients),
        coefficients,
        method: FitMethod::Ols,
    })
}

/// Minimises `‖Zβ + α − f‖²` for every integrand column.
pub fn solve_ols(z: &DesignMatrix, f: &IntegrandMatrix) -> Result<FitResult> {
    solve_ols_raw(z.values(), f.values())
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_determine_line() {
        let z = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let f = DMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        let fit = solve_ols_raw(&z, &f).unwrap();
        assert!((fit.coefficients[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((fit.intercept[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_integrand() {
        let z = random_matrix(20, 4, 3);
        let f = DMatrix::from_element(20, 1, 2.5);
        let fit = solve_ols_raw(&z, &f).unwrap();
        assert!(fit.coefficients.amax() < 1e-14);
        assert!((fit.intercept[0] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn matches_normal_equations() {
        let z = random_matrix(50, 5, 10);
        let f = random_matrix(50, 2, 11);
        let fit = solve_ols_raw(&z, &f).unwrap();
        let (alpha, beta) = normal_equations(&z, &f);
        assert!((&fit.coefficients - beta).amax() < 1e-10);
        for (got, want) in fit.intercept.iter().zip(&alpha) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn underdetermined_is_rejected() {
        let z = random_matrix(4, 4, 1);
        let f = random_matrix(4, 1, 2);
        assert!(matches!(solve_ols_raw(&z, &f), Err(Error::Unidentifiable { rows: 4, columns: 4 })));
    }

    #[test]
    fn collinear_design_is_singular() {
        let mut z = random_matrix(30, 3, 5);
        for i in 0..30 {
            z[(i, 2)] = 2.0 * z[(i, 0)] - z[(i, 1)] + 7.0;
        }
        let f = random_matrix(30, 1, 6);
        assert!(matches!(solve_ols_raw(&z, &f), Err(Error::Singular { .. })));
    }

    #[test]
    fn row_mismatch() {
        assert!(matches!(
            solve_ols_raw(&random_matrix(10, 2, 1), &random_matrix(9, 1, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn residuals_sum_to_zero(seed in 0u64..10_000, s in 8usize..60, j in 1usize..6) {
            prop_assume!(s > j + 1);
            let z = random_matrix(s, j, seed);
            let f = random_matrix(s, 2, seed + 1).map(|v| 10.0 * v + 3.0);
            let fit = solve_ols_raw(&z, &f).unwrap();
            let r = fit.residuals(&z, &f);
            for t in 0..2 {
                let col = f.column(t);
                let mean = col.mean();
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64).sqrt();
                prop_assert!(r.column(t).sum().abs() <= 1e-8 * s as f64 * sd);
            }
        }

        #[test]
        fn shift_and_scale_equivariance(seed in 0u64..10_000, c in -50.0f64..50.0, k in 0.1f64..20.0) {
            let z = random_matrix(25, 4, seed);
            let f = random_matrix(25, 1, seed + 7);
            let base = solve_ols_raw(&z, &f).unwrap();
            let shifted = solve_ols_raw(&z, &f.add_scalar(c)).unwrap();
            prop_assert!((&shifted.coefficients - &base.coefficients).amax() < 1e-10);
            prop_assert!((shifted.intercept[0] - base.intercept[0] - c).abs() < 1e-10 * (1.0 + c.abs()));
            let scaled = solve_ols_raw(&z, &(&f * k)).unwrap();
            prop_assert!((&scaled.coefficients - &base.coefficients * k).amax() < 1e-10 * k);
            prop_assert!((scaled.intercept[0] - k * base.intercept[0]).abs() < 1e-10 * k);
        }

        #[test]
        fn joint_equals_separate(seed in 0u64..10_000) {
            let z = random_matrix(30, 5, seed);
            let f = random_matrix(30, 3, seed + 3);
            let joint = solve_ols_raw(&z, &f).unwrap();
            for t in 0..3 {
                let single = solve_ols_raw(&z, &f.columns(t, 1).into_owned()).unwrap();
                prop_assert!((single.coefficients.column(0) - joint.coefficients.column(t)).amax() <= 1e-12);
                prop_assert!((single.intercept[0] - joint.intercept[t]).abs() <= 1e-12);
            }
        }
    }
}
