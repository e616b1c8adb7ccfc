//! Second-order Langevin–Stein operator applied to monomials, and the design
//! matrix built from it.
//!
//! For `u(θ) = θ^α` the operator gives `Δu + ∇u · ∇log π`, which has mean zero
//! under `π` whenever the tails of `π` decay faster than any polynomial. That
//! tail condition cannot be checked from samples; it is the caller's
//! responsibility.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{grad_component, laplacian_unchecked, MultiIndex, PolynomialBasis};
use crate::error::{Error, Result};

/// Sample points together with `∇log π` evaluated at each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    thetas: DMatrix<f64>,
    grads: DMatrix<f64>,
}

fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { what, row: r, col: c });
            }
        }
    }
    Ok(())
}

impl SampleSet {
    /// Both matrices are `S × d`, row `i` belonging to sample `i`.
    pub fn new(thetas: DMatrix<f64>, grads: DMatrix<f64>) -> Result<Self> {
        if thetas.nrows() == 0 || thetas.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "sample set needs at least one sample and one dimension".into(),
            ));
        }
        if grads.nrows() != thetas.nrows() {
            return Err(Error::DimensionMismatch {
                what: "gradient rows",
                expected: thetas.nrows(),
                found: grads.nrows(),
            });
        }
        if grads.ncols() != thetas.ncols() {
            return Err(Error::DimensionMismatch {
                what: "gradient columns",
                expected: thetas.ncols(),
                found: grads.ncols(),
            });
        }
        check_finite("samples", &thetas)?;
        check_finite("gradients", &grads)?;
        Ok(SampleSet { thetas, grads })
    }

    pub fn from_rows(thetas: &[Vec<f64>], grads: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(thetas, "sample")?, rows_to_matrix(grads, "gradient")?)
    }

    pub fn len(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.thetas.ncols()
    }

    pub fn thetas(&self) -> &DMatrix<f64> {
        &self.thetas
    }

    pub fn grads(&self) -> &DMatrix<f64> {
        &self.grads
    }

    pub fn theta_row(&self, i: usize) -> Vec<f64> {
        self.thetas.row(i).iter().copied().collect()
    }

    pub fn grad_row(&self, i: usize) -> Vec<f64> {
        self.grads.row(i).iter().copied().collect()
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch {
                what,
                expected: ncols,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `S × J` matrix with entry `(i, j)` equal to the operator applied to monomial `j` at sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    basis: PolynomialBasis,
}

impl DesignMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn l2_unchecked(alpha: &[u32], theta: &[f64], grad: &[f64]) -> f64 {
    let drift: f64 = (0..theta.len())
        .filter(|&j| alpha[j] > 0)
        .map(|j| grad_component(alpha, theta, j) * grad[j])
        .sum();
    laplacian_unchecked(alpha, theta) + drift
}

/// `Δθ^α + ∇θ^α · grad` at a single point.
pub fn stein_l2(alpha: &MultiIndex, theta: &[f64], grad: &[f64]) -> Result<f64> {
    for (what, len) in [("stein point", theta.len()), ("stein gradient", grad.len())] {
        if len != alpha.dim() {
            return Err(Error::DimensionMismatch {
                what,
                expected: alpha.dim(),
                found: len,
            });
        }
    }
    Ok(l2_unchecked(alpha.exponents(), theta, grad))
}

/// Builds the design matrix; rows follow sample order, columns follow basis order.
pub fn build_design_matrix(samples: &SampleSet, basis: &PolynomialBasis) -> Result<DesignMatrix> {
    if samples.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: samples.dim(),
            found: basis.dim(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let theta = samples.theta_row(i);
            let grad = samples.grad_row(i);
            basis
                .indices()
                .iter()
                .map(|a| l2_unchecked(a.exponents(), &theta, &grad))
                .collect()
        })
        .collect();
    let values = DMatrix::from_fn(samples.len(), basis.len(), |i, j| rows[i][j]);
    check_finite("design matrix", &values)?;
    Ok(DesignMatrix {
        values,
        basis: basis.clone(),
    })
}

/// Mean-zero diagnostic for one design column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnDiagnostic {
    pub mean: f64,
    pub std_error: f64,
    /// `|mean| ≤ 5 · std_error`.
    pub passes: bool,
}

pub const ZERO_MEAN_MIN_SAMPLES: usize = 30;

/// Checks every column of `dm` for a sample mean within five standard errors of zero.
pub fn check_zero_mean(dm: &DesignMatrix) -> Result<Vec<ColumnDiagnostic>> {
    let s = dm.nrows();
    if s < ZERO_MEAN_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: ZERO_MEAN_MIN_SAMPLES,
            found: s,
        });
    }
    let n = s as f64;
    Ok(dm
        .values
        .column_iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std_error = (var / n).sqrt();
            ColumnDiagnostic {
                mean,
                std_error,
                passes: mean.abs() <= 5.0 * std_error,
            }
        })
        .collect())
}
