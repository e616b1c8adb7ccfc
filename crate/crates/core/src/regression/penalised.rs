//! Ridge and LASSO fits.
//!
//! Both work on a standardised copy of the design: columns centered and scaled
//! to unit Euclidean norm, so the penalty treats every column alike. Constant
//! columns get scale zero and a zero coefficient. Coefficients are mapped back
//! to the original column scale before returning.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{center, check_rows, intercepts, solve_ols_raw, FitMethod, FitResult, IntegrandMatrix};
use crate::error::{Error, Result};
use crate::stein::DesignMatrix;

/// Coordinate descent stops once no coefficient moves by more than this in a sweep.
pub const LASSO_TOLERANCE: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

// Above this many columns the Gram matrix is not formed.
const GRAM_MAX_COLUMNS: usize = 2000;

#[derive(Debug, Clone)]
pub(crate) struct Standardised {
    pub zbar: DVector<f64>,
    pub fbar: DVector<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub scale: Vec<f64>,
}

impl Standardised {
    pub fn new(z: &DMatrix<f64>, f: &DMatrix<f64>) -> Self {
        let (zbar, mut x) = center(z);
        let (fbar, y) = center(f);
        let scale: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            if scale[j] > 0.0 {
                col /= scale[j];
            }
        }
        Standardised { zbar, fbar, x, y, scale }
    }

    /// Maps standardised coefficients (`J × T`) back to the original scale and attaches intercepts.
    pub fn unscale(&self, b: DMatrix<f64>, method: FitMethod) -> FitResult {
        let mut beta = b;
        for (j, &s) in self.scale.iter().enumerate() {
            let mut row = beta.row_mut(j);
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(0.0);
            }
        }
        FitResult {
            intercept: intercepts(&self.zbar, &self.fbar, &beta),
            coefficients: beta,
            method,
        }
    }

    pub fn lambda_max(&self, t: usize) -> f64 {
        let xty = self.x.transpose() * self.y.column(t);
        2.0 * xty.amax()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Eigendecomposition of the standardised Gram matrix, reusable across penalties.
#[derive(Debug, Clone)]
pub(crate) struct RidgePath {
    vecs: DMatrix<f64>,
    vals: DVector<f64>,
    // Vᵀ Xᵀ y, `J × T`.
    rotated: DMatrix<f64>,
}

impl RidgePath {
    pub fn new(std: &Standardised) -> Self {
        let gram = std.x.transpose() * &std.x;
        let eig = SymmetricEigen::new(gram);
        let rotated = eig.eigenvectors.transpose() * (std.x.transpose() * &std.y);
        RidgePath {
            vecs: eig.eigenvectors,
            vals: eig.eigenvalues.map(|v| v.max(0.0)),
            rotated,
        }
    }

    /// Standardised coefficients `(XᵀX + λI)⁻¹ Xᵀ y` for integrand `t`.
    pub fn coefficients(&self, lambda: f64, t: usize) -> DVector<f64> {
        if lambda.is_infinite() {
            return DVector::zeros(self.vals.len());
        }
        let shrunk = DVector::from_fn(self.vals.len(), |k, _| {
            let denom = self.vals[k] + lambda;
            if denom > 0.0 {
                self.rotated[(k, t)] / denom
            } else {
                0.0
            }
        });
        &self.vecs * shrunk
    }
}

/// Ridge on raw matrices. `λ = 0` is plain least squares and `λ = ∞` gives `β = 0`.
pub fn solve_ridge_raw(z: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> Result<FitResult> {
    check_lambda(lambda)?;
    check_rows(z, f)?;
    let method = FitMethod::Ridge { lambda };
    if lambda == 0.0 {
        let mut fit = solve_ols_raw(z, f)?;
        fit.method = method;
        return Ok(fit);
    }
    let std = Standardised::new(z, f);
    let path = RidgePath::new(&std);
    let mut b = DMatrix::zeros(z.ncols(), f.ncols());
    for t in 0..f.ncols() {
        b.set_column(t, &path.coefficients(lambda, t));
    }
    Ok(std.unscale(b, method))
}

/// Minimises `‖Zβ + α − f‖² + λ‖β‖₂²` on standardised columns.
pub fn solve_ridge(z: &DesignMatrix, f: &IntegrandMatrix, lambda: f64) -> Result<FitResult> {
    solve_ridge_raw(z.values(), f.values(), lambda)
}

fn soft_threshold(x: f64, thresh: f64) -> f64 {
    if x > thresh {
        x - thresh
    } else if x < -thresh {
        x + thresh
    } else {
        0.0
    }
}

/// Coordinate-descent state for one standardised problem, shared across a path of penalties.
#[derive(Debug, Clone)]
pub(crate) struct LassoSolver<'a> {
    x: &'a DMatrix<f64>,
    gram: Option<DMatrix<f64>>,
    diag: Vec<f64>,
}

impl<'a> LassoSolver<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Self {
        let gram = (x.ncols() <= GRAM_MAX_COLUMNS).then(|| x.transpose() * x);
        let diag = x.column_iter().map(|c| c.norm_squared()).collect();
        LassoSolver { x, gram, diag }
    }

    /// Runs cyclic coordinate descent from the warm start in `b`.
    pub fn solve(&self, y: &DVector<f64>, lambda: f64, b: &mut DVector<f64>) -> Result<usize> {
        let half = lambda / 2.0;
        let p = self.x.ncols();
        let mut last = f64::INFINITY;
        match &self.gram {
            Some(g) => {
                let xty = self.x.transpose() * y;
                let mut gb = g * &*b;
                for sweep in 1..=LASSO_MAX_SWEEPS {
                    let mut max_change = 0.0f64;
                    for j in 0..p {
                        if self.diag[j] == 0.0 {
                            continue;
                        }
                        let rho = xty[j] - gb[j] + self.diag[j] * b[j];
                        let next = soft_threshold(rho, half) / self.diag[j];
                        let delta = next - b[j];
                        if delta != 0.0 {
                            b[j] = next;
                            gb.axpy(delta, &g.column(j), 1.0);
                            max_change = max_change.max(delta.abs());
                        }
                    }
                    if max_change < LASSO_TOLERANCE {
                        return Ok(sweep);
                    }
                    last = max_change;
                }
            }
            None => {
                let mut r = y - self.x * &*b;
                for sweep in 1..=LASSO_MAX_SWEEPS {
                    let mut max_change = 0.0f64;
                    for j in 0..p {
                        if self.diag[j] == 0.0 {
                            continue;
                        }
                        let col = self.x.column(j);
                        let rho = col.dot(&r) + self.diag[j] * b[j];
                        let next = soft_threshold(rho, half) / self.diag[j];
                        let delta = next - b[j];
                        if delta != 0.0 {
                            b[j] = next;
                            r.axpy(-delta, &col, 1.0);
                            max_change = max_change.max(delta.abs());
                        }
                    }
                    if max_change < LASSO_TOLERANCE {
                        return Ok(sweep);
                    }
                    last = max_change;
                }
            }
        }
        Err(Error::NonConvergence {
            sweeps: LASSO_MAX_SWEEPS,
            max_change: last,
        })
    }
}

// Penalties strictly above `lambda`, falling from `top` by a factor of ten per ten steps.
fn warm_start_path(top: f64, lambda: f64) -> Vec<f64> {
    let floor = lambda.max(top * 1e-10);
    if !(top > floor) || !lambda.is_finite() {
        return Vec::new();
    }
    let ratio = 10f64.powf(-0.1);
    std::iter::successors(Some(top), |l| Some(l * ratio)).take_while(|&l| l > floor).collect()
}

/// LASSO on raw matrices.
pub fn solve_lasso_raw(z: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> Result<FitResult> {
    check_lambda(lambda)?;
    check_rows(z, f)?;
    let std = Standardised::new(z, f);
    let solver = LassoSolver::new(&std.x);
    let mut b = DMatrix::zeros(z.ncols(), f.ncols());
    for t in 0..f.ncols() {
        let y = std.y.column(t).into_owned();
        let mut bt = DVector::zeros(z.ncols());
        // Warm starts down a geometric path from the all-zero penalty; only the
        // final penalty has to meet the convergence rule.
        for step in warm_start_path(std.lambda_max(t), lambda) {
            let _ = solver.solve(&y, step, &mut bt);
        }
        solver.solve(&y, lambda, &mut bt)?;
        b.set_column(t, &bt);
    }
    Ok(std.unscale(b, FitMethod::Lasso { lambda }))
}

/// Minimises `‖Zβ + α − f‖² + λ‖β‖₁` by cyclic coordinate descent on standardised columns.
pub fn solve_lasso(z: &DesignMatrix, f: &IntegrandMatrix, lambda: f64) -> Result<FitResult> {
    solve_lasso_raw(z.values(), f.values(), lambda)
}
