//! Single-learner zero-variance control variates.
//!
//! The same samples are used to fit the regression and to evaluate the
//! estimator. This introduces a small bias that is reported through the
//! residual diagnostics but not corrected.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_size, enumerate_basis};
use crate::error::{Error, Result};
use crate::regression::{
    cross_validate, solve_lasso_raw, solve_ols_raw, solve_ridge_raw, FitMethod, FitResult,
    IntegrandMatrix, Penalty,
};
use crate::stein::{build_design_matrix, DesignMatrix, SampleSet};

/// Per-integrand expectation estimates with what produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub values: Vec<f64>,
    pub method: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Number of control-variate columns available to the fit.
    pub columns: usize,
    /// Penalty per integrand, for regularised fits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    /// Variance of `f - Zβ` per integrand.
    pub residual_variance: Vec<f64>,
    /// Largest gap between the intercept and the residual-mean form of the estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learners: Option<usize>,
    /// `weights[i][t]` is learner `i`'s weight for integrand `t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns_per_learner: Option<usize>,
}

/// How the penalty of a regularised fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaChoice {
    Fixed { lambda: f64 },
    Cv { folds: usize, seed: u64 },
}

/// Everything computed by [`fit_zvcv`], for callers that need more than the estimate.
#[derive(Debug, Clone)]
pub struct ZvcvOutput {
    pub estimate: Estimate,
    pub design: DesignMatrix,
    pub fit: FitResult,
}

fn check_integrands(samples: &SampleSet, f: &IntegrandMatrix) -> Result<()> {
    if f.nrows() != samples.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: samples.len(),
            found: f.nrows(),
        });
    }
    Ok(())
}

pub(crate) fn column_variance(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

fn is_constant(col: nalgebra::DVectorView<'_, f64>) -> bool {
    col.iter().all(|v| *v == col[0])
}

/// Residual means `1ᵀ(f − Zβ)/S`, one per integrand.
pub(crate) fn residual_means(z: &DMatrix<f64>, f: &DMatrix<f64>, beta: &DMatrix<f64>) -> Vec<f64> {
    let r = f - z * beta;
    let n = f.nrows() as f64;
    r.column_iter().map(|c| c.sum() / n).collect()
}

/// Rejects orders whose basis cannot be identified: needs `C(Q+d, d) < S`.
pub fn check_order(dim: usize, order: u32, samples: usize) -> Result<usize> {
    let j = basis_size(dim, order)?;
    if j + 1 >= samples {
        return Err(Error::Unidentifiable {
            rows: samples,
            columns: j,
        });
    }
    Ok(j)
}

/// ZVCV with a fixed polynomial order, returning the design and fit alongside the estimate.
pub fn fit_zvcv_detailed(samples: &SampleSet, f: &IntegrandMatrix, order: u32) -> Result<ZvcvOutput> {
    check_integrands(samples, f)?;
    let columns = check_order(samples.dim(), order, samples.len())?;
    let basis = enumerate_basis(samples.dim(), order)?;
    let design = build_design_matrix(samples, &basis)?;
    let fv = f.values();

    let fit = if fv.column_iter().all(is_constant) {
        FitResult {
            intercept: fv.row(0).iter().copied().collect(),
            coefficients: DMatrix::zeros(columns, fv.ncols()),
            method: FitMethod::Ols,
        }
    } else {
        let mut fit = solve_ols_raw(design.values(), fv)?;
        for (t, col) in fv.column_iter().enumerate() {
            if is_constant(col) {
                fit.intercept[t] = col[0];
                fit.coefficients.column_mut(t).fill(0.0);
            }
        }
        fit
    };

    let means = residual_means(design.values(), fv, &fit.coefficients);
    let gap = means
        .iter()
        .zip(&fit.intercept)
        .map(|(m, a)| (m - a).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max);
    debug_assert!(gap <= 1e-8, "intercept and residual mean disagree by {gap:e}");

    let estimate = Estimate {
        values: fit.intercept.clone(),
        method: format!("ZV{order}"),
        diagnostics: Diagnostics {
            columns,
            residual_variance: column_variance(&fit.residuals(design.values(), fv)),
            intercept_gap: Some(gap),
            ..Diagnostics::default()
        },
    };
    Ok(ZvcvOutput { estimate, design, fit })
}

/// ZVCV with polynomial order `order`: the OLS intercept for each integrand.
pub fn fit_zvcv(samples: &SampleSet, f: &IntegrandMatrix, order: u32) -> Result<Estimate> {
    fit_zvcv_detailed(samples, f, order).map(|o| o.estimate)
}

/// Penalised ZVCV. Works when the basis has more columns than there are samples.
pub fn fit_zvcv_regularised(
    samples: &SampleSet,
    f: &IntegrandMatrix,
    order: u32,
    penalty: Penalty,
    lambda: LambdaChoice,
) -> Result<Estimate> {
    check_integrands(samples, f)?;
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: samples.len(),
        });
    }
    let basis = enumerate_basis(samples.dim(), order)?;
    let design = build_design_matrix(samples, &basis)?;
    let z = design.values();
    let fv = f.values();

    let lambdas = match lambda {
        LambdaChoice::Fixed { lambda } => vec![lambda; fv.ncols()],
        LambdaChoice::Cv { folds, seed } => cross_validate(z, fv, penalty, None, folds, seed)?,
    };
    let solve = match penalty {
        Penalty::Ridge => solve_ridge_raw,
        Penalty::Lasso => solve_lasso_raw,
    };

    let mut values = Vec::with_capacity(fv.ncols());
    let mut residual_variance = Vec::with_capacity(fv.ncols());
    for (t, &l) in lambdas.iter().enumerate() {
        let ft = fv.columns(t, 1).into_owned();
        let fit = solve(z, &ft, l)?;
        values.push(fit.intercept[0]);
        residual_variance.push(column_variance(&fit.residuals(z, &ft))[0]);
    }
    let prefix = match penalty {
        Penalty::Ridge => "r",
        Penalty::Lasso => "l",
    };
    Ok(Estimate {
        values,
        method: format!("{prefix}-ZV{order}"),
        diagnostics: Diagnostics {
            columns: basis.len(),
            lambda: Some(lambdas),
            residual_variance,
            ..Diagnostics::default()
        },
    })
}

/// Plain Monte Carlo: column means of `f`.
pub fn vanilla_mc(f: &IntegrandMatrix) -> Estimate {
    Estimate {
        values: f.column_means(),
        method: "MC".into(),
        diagnostics: Diagnostics {
            columns: 0,
            residual_variance: column_variance(f.values()),
            ..Diagnostics::default()
        },
    }
}
