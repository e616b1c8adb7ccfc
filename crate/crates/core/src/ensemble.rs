//! Ensembles of ZVCV learners fitted on random column (and optionally row) subsets.
//!
//! Each learner sees a subset of the order-`q_max` design columns. Semi-exact
//! selection always keeps every monomial up to a low base order, so each learner
//! stays exact whenever a single ZVCV of that base order would be. The ensemble
//! estimate averages learner coefficients first and then takes one residual
//! mean over all samples.
//!
//! The SA, DO and MO presets are reconstructions:
//! SA randomises columns only, DO also subsamples rows, MO reweights learners
//! by inverse residual variance.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_size, binomial, enumerate_basis, PolynomialBasis};
use crate::error::{Error, Result};
use crate::regression::{solve_ols_raw, FitResult, IntegrandMatrix};
use crate::stein::{build_design_matrix, DesignMatrix, SampleSet};
use crate::zvcv::{column_variance, Diagnostics, Estimate};

pub const DEFAULT_MAX_ORDER: u32 = 5;
pub const DEFAULT_ROW_FRACTION: f64 = 0.8;
/// Fewer samples than this are rejected outright.
pub const MIN_ENSEMBLE_SAMPLES: usize = 10;

// Stream used when a learner's first draw gives a singular sub-design.
const RETRY_STREAM: u64 = 1 << 63;

/// Which design columns one learner uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct ColumnMask(Vec<bool>);

impl ColumnMask {
    pub fn full(len: usize) -> Self {
        ColumnMask(vec![true; len])
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut m = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(Error::InvalidArgument(format!("column {i} out of range for {len} columns")));
            }
            m[i] = true;
        }
        Ok(ColumnMask(m))
    }

    pub fn selected(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Selected column indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Uniform,
    /// `wᵢ ∝ 1/(vᵢ + ε)` with `vᵢ` the learner's training residual variance.
    InverseResidualVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Uniform subsets of all columns.
    Srswor,
    /// The base-order prefix plus a uniform subset of the rest.
    SemiExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Sa,
    Do,
    Mo,
    Custom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Sa => "SA",
            Preset::Do => "DO",
            Preset::Mo => "MO",
            Preset::Custom => "ENS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k: usize,
    pub q_max: u32,
    /// `None` picks [`default_q_base`].
    pub q_base: Option<u32>,
    /// Columns per learner; `None` picks [`default_j_star`].
    pub j_star: Option<usize>,
    /// Fraction of rows each learner is trained on, drawn without replacement.
    pub row_fraction: f64,
    pub weight_scheme: WeightScheme,
    pub selection: Selection,
    pub seed: u64,
    pub preset: Preset,
}

impl EnsembleConfig {
    pub fn new(preset: Preset, k: usize, seed: u64) -> Self {
        let (row_fraction, weight_scheme) = match preset {
            Preset::Do => (DEFAULT_ROW_FRACTION, WeightScheme::Uniform),
            Preset::Mo => (1.0, WeightScheme::InverseResidualVariance),
            Preset::Sa | Preset::Custom => (1.0, WeightScheme::Uniform),
        };
        EnsembleConfig {
            k,
            q_max: DEFAULT_MAX_ORDER,
            q_base: None,
            j_star: None,
            row_fraction,
            weight_scheme,
            selection: Selection::SemiExact,
            seed,
            preset,
        }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.preset, self.k)
    }
}

/// The largest `q ∈ {1, 2}` with `C(d+q, d) < S`.
pub fn default_q_base(dim: usize, samples: usize) -> Result<u32> {
    if samples <= dim + 1 {
        return Err(Error::Unidentifiable {
            rows: samples,
            columns: dim,
        });
    }
    Ok(if (binomial(dim as u64 + 2, dim as u64)? as u128) < samples as u128 { 2 } else { 1 })
}

/// `min(J, max(J_base, ⌊0.7·S⌋))`, kept at most `S − 2`.
pub fn default_j_star(samples: usize, columns: usize, base_columns: usize) -> Result<usize> {
    if samples < 2 || base_columns + 2 >= samples {
        return Err(Error::Unidentifiable {
            rows: samples,
            columns: base_columns,
        });
    }
    let seventy = samples * 7 / 10;
    Ok(columns.min(base_columns.max(seventy)).min(samples - 2))
}

/// A uniformly random `j_star`-subset of `columns`.
pub fn select_srswor(columns: usize, j_star: usize, rng: &mut ChaCha8Rng) -> Result<ColumnMask> {
    if j_star == 0 || j_star > columns {
        return Err(Error::InvalidArgument(format!(
            "columns per learner must be in 1..={columns}, got {j_star}"
        )));
    }
    ColumnMask::from_indices(columns, &index::sample(rng, columns, j_star).into_vec())
}

/// Every monomial of order at most `q_base`, plus a uniform subset of the rest up to `j_star`.
pub fn select_semi_exact(basis: &PolynomialBasis, q_base: u32, j_star: usize, rng: &mut ChaCha8Rng) -> Result<ColumnMask> {
    let j = basis.len();
    let base = basis.prefix_len(q_base);
    if j_star < base || j_star > j {
        return Err(Error::InvalidArgument(format!(
            "columns per learner must be in {base}..={j} for base order {q_base}, got {j_star}"
        )));
    }
    let mut picked: Vec<usize> = (0..base).collect();
    picked.extend(index::sample(rng, j - base, j_star - base).into_iter().map(|i| base + i));
    ColumnMask::from_indices(j, &picked)
}

/// Learner weights. The inverse scheme falls back to uniform when every variance is zero.
pub fn compute_weights(variances: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    let k = variances.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no learners to weight".into()));
    }
    if let Some(v) = variances.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("residual variance must be finite and non-negative, got {v}")));
    }
    let uniform = vec![1.0 / k as f64; k];
    match scheme {
        WeightScheme::Uniform => Ok(uniform),
        WeightScheme::InverseResidualVariance => {
            let vmax = variances.iter().cloned().fold(0.0, f64::max);
            if vmax == 0.0 {
                return Ok(uniform);
            }
            let eps = 1e-12 * vmax;
            let inv: Vec<f64> = variances.iter().map(|v| 1.0 / (v + eps)).collect();
            let total: f64 = inv.iter().sum();
            Ok(inv.iter().map(|v| v / total).collect())
        }
    }
}

/// One fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Learner {
    pub mask: ColumnMask,
    /// Training rows, or `None` for all rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
    /// `j_star × T`, in mask order.
    #[serde(skip)]
    pub coefficients: DMatrix<f64>,
    pub intercept: Vec<f64>,
    /// Training residual variance per integrand.
    pub residual_variance: Vec<f64>,
    /// Weight per integrand.
    pub weight: Vec<f64>,
    /// True if the first draw was singular and this learner was redrawn.
    pub retried: bool,
}

impl Learner {
    /// Coefficients embedded in the full basis, zero off the mask (`J × T`).
    pub fn embedded(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.mask.len(), self.coefficients.ncols());
        for (r, c) in self.mask.indices().into_iter().enumerate() {
            full.set_row(c, &self.coefficients.row(r));
        }
        full
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub learners: Vec<Learner>,
    pub basis: PolynomialBasis,
    pub config: EnsembleConfig,
    pub q_base: u32,
    pub j_star: usize,
}

impl EnsembleModel {
    /// `Σᵢ wᵢ βᵢ` per integrand, accumulated in learner order (`J × T`).
    pub fn aggregated_coefficients(&self) -> DMatrix<f64> {
        let t = self.learners.first().map_or(0, |l| l.coefficients.ncols());
        let mut agg = DMatrix::zeros(self.basis.len(), t);
        for l in &self.learners {
            let full = l.embedded();
            for tt in 0..t {
                agg.column_mut(tt).axpy(l.weight[tt], &full.column(tt), 1.0);
            }
        }
        agg
    }

    /// Each learner's own estimate `1ᵀ(f − Zβᵢ)/S` over all rows, indexed `[learner][integrand]`.
    pub fn learner_estimates(&self, z: &DesignMatrix, f: &IntegrandMatrix) -> Result<Vec<Vec<f64>>> {
        check_shapes(self, z, f)?;
        Ok(self
            .learners
            .iter()
            .map(|l| crate::zvcv::residual_means(z.values(), f.values(), &l.embedded()))
            .collect())
    }
}

fn check_shapes(model: &EnsembleModel, z: &DesignMatrix, f: &IntegrandMatrix) -> Result<()> {
    if z.ncols() != model.basis.len() {
        return Err(Error::DimensionMismatch {
            what: "design columns",
            expected: model.basis.len(),
            found: z.ncols(),
        });
    }
    if z.nrows() != f.nrows() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: z.nrows(),
            found: f.nrows(),
        });
    }
    let t = model.learners.first().map_or(0, |l| l.intercept.len());
    if f.ncols() != t {
        return Err(Error::DimensionMismatch {
            what: "integrand columns",
            expected: t,
            found: f.ncols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Draw {
    mask: ColumnMask,
    rows: Option<Vec<usize>>,
}

struct Resolved {
    q_base: u32,
    j_star: usize,
    rows: usize,
}

fn resolve(config: &EnsembleConfig, basis: &PolynomialBasis, samples: usize) -> Result<Resolved> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one learner".into()));
    }
    if samples < MIN_ENSEMBLE_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_ENSEMBLE_SAMPLES,
            found: samples,
        });
    }
    if !(config.row_fraction > 0.0 && config.row_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "row fraction must be in (0, 1], got {}",
            config.row_fraction
        )));
    }
    let rows = ((config.row_fraction * samples as f64).floor() as usize).max(1);
    let q_base = match config.q_base {
        Some(q) => q,
        None if config.selection == Selection::SemiExact => default_q_base(basis.dim(), rows)?.min(config.q_max.saturating_sub(1)).max(1),
        None => 1,
    };
    if config.selection == Selection::SemiExact && (q_base < 1 || q_base >= config.q_max) {
        return Err(Error::InvalidArgument(format!(
            "base order must satisfy 1 <= q_base < q_max = {}, got {q_base}",
            config.q_max
        )));
    }
    let base = match config.selection {
        Selection::SemiExact => basis.prefix_len(q_base),
        Selection::Srswor => 1,
    };
    let j_star = match config.j_star {
        Some(j) => j,
        None => default_j_star(rows, basis.len(), base)?,
    };
    if j_star >= rows {
        return Err(Error::Unidentifiable { rows, columns: j_star });
    }
    Ok(Resolved { q_base, j_star, rows })
}

fn draw(config: &EnsembleConfig, basis: &PolynomialBasis, r: &Resolved, samples: usize, stream: u64) -> Result<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mask = match config.selection {
        Selection::SemiExact => select_semi_exact(basis, r.q_base, r.j_star, &mut rng)?,
        Selection::Srswor => select_srswor(basis.len(), r.j_star, &mut rng)?,
    };
    let rows = (r.rows < samples).then(|| {
        let mut idx = index::sample(&mut rng, samples, r.rows).into_vec();
        idx.sort_unstable();
        idx
    });
    Ok(Draw { mask, rows })
}

fn fit_draw(z: &DMatrix<f64>, f: &DMatrix<f64>, d: &Draw) -> Result<(FitResult, Vec<f64>)> {
    let cols = d.mask.indices();
    let all: Vec<usize>;
    let rows = match &d.rows {
        Some(r) => r,
        None => {
            all = (0..z.nrows()).collect();
            &all
        }
    };
    let zs = DMatrix::from_fn(rows.len(), cols.len(), |i, j| z[(rows[i], cols[j])]);
    let fs = DMatrix::from_fn(rows.len(), f.ncols(), |i, t| f[(rows[i], t)]);
    let fit = solve_ols_raw(&zs, &fs)?;
    let var = column_variance(&fit.residuals(&zs, &fs));
    Ok((fit, var))
}

/// Fits every distinct draw once, in parallel, keyed by first occurrence.
fn fit_unique(z: &DMatrix<f64>, f: &DMatrix<f64>, draws: &[Draw]) -> Vec<Result<(FitResult, Vec<f64>)>> {
    let mut slot: HashMap<&Draw, usize> = HashMap::new();
    let mut unique: Vec<&Draw> = Vec::new();
    let owner: Vec<usize> = draws
        .iter()
        .map(|d| {
            *slot.entry(d).or_insert_with(|| {
                unique.push(d);
                unique.len() - 1
            })
        })
        .collect();
    let fits: Vec<Result<(FitResult, Vec<f64>)>> = unique.par_iter().map(|d| fit_draw(z, f, d)).collect();
    owner.into_iter().map(|u| fits[u].clone()).collect()
}

/// Fits the ensemble on a prebuilt order-`q_max` design.
pub fn fit_ensemble_on(design: &DesignMatrix, f: &IntegrandMatrix, config: &EnsembleConfig) -> Result<EnsembleModel> {
    let basis = design.basis().clone();
    if basis.max_order() != config.q_max {
        return Err(Error::InvalidArgument(format!(
            "design has order {}, ensemble expects {}",
            basis.max_order(),
            config.q_max
        )));
    }
    let (z, fv) = (design.values(), f.values());
    if z.nrows() != fv.nrows() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: z.nrows(),
            found: fv.nrows(),
        });
    }
    let s = z.nrows();
    let r = resolve(config, &basis, s)?;

    let draws: Vec<Draw> = (0..config.k as u64)
        .map(|i| draw(config, &basis, &r, s, i))
        .collect::<Result<_>>()?;
    let mut fits = fit_unique(z, fv, &draws);

    let mut retried = vec![false; config.k];
    let mut final_draws = draws;
    let singular: Vec<usize> = (0..config.k).filter(|&i| matches!(fits[i], Err(Error::Singular { .. }))).collect();
    if !singular.is_empty() {
        let redraws: Vec<Draw> = singular
            .iter()
            .map(|&i| draw(config, &basis, &r, s, RETRY_STREAM | i as u64))
            .collect::<Result<_>>()?;
        let refits = fit_unique(z, fv, &redraws);
        for ((&i, d), fit) in singular.iter().zip(redraws).zip(refits) {
            fits[i] = fit;
            final_draws[i] = d;
            retried[i] = true;
        }
    }
    let fits: Vec<(FitResult, Vec<f64>)> = fits.into_iter().collect::<Result<_>>()?;

    let t = fv.ncols();
    let mut weights = vec![vec![0.0; t]; config.k];
    for tt in 0..t {
        let v: Vec<f64> = fits.iter().map(|(_, var)| var[tt]).collect();
        for (i, w) in compute_weights(&v, config.weight_scheme)?.into_iter().enumerate() {
            weights[i][tt] = w;
        }
    }

    let learners = final_draws
        .into_iter()
        .zip(fits)
        .zip(weights)
        .zip(retried)
        .map(|(((d, (fit, var)), weight), retried)| Learner {
            mask: d.mask,
            rows: d.rows,
            coefficients: fit.coefficients,
            intercept: fit.intercept,
            residual_variance: var,
            weight,
            retried,
        })
        .collect();
    Ok(EnsembleModel {
        learners,
        basis,
        config: config.clone(),
        q_base: r.q_base,
        j_star: r.j_star,
    })
}

/// Builds the order-`q_max` design and fits the ensemble. Returns the design for reuse.
pub fn fit_ensemble(samples: &SampleSet, f: &IntegrandMatrix, config: &EnsembleConfig) -> Result<(EnsembleModel, DesignMatrix)> {
    if f.nrows() != samples.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: samples.len(),
            found: f.nrows(),
        });
    }
    basis_size(samples.dim(), config.q_max)?;
    let basis = enumerate_basis(samples.dim(), config.q_max)?;
    let design = build_design_matrix(samples, &basis)?;
    let model = fit_ensemble_on(&design, f, config)?;
    Ok((model, design))
}

/// `1ᵀ(f − Z Σwᵢβᵢ)/S` per integrand, over every row of `z`.
pub fn ensemble_estimate(model: &EnsembleModel, z: &DesignMatrix, f: &IntegrandMatrix) -> Result<Estimate> {
    check_shapes(model, z, f)?;
    let beta = model.aggregated_coefficients();
    let resid = f.values() - z.values() * &beta;
    let n = resid.nrows() as f64;
    Ok(Estimate {
        values: resid.column_iter().map(|c| c.sum() / n).collect(),
        method: model.config.label(),
        diagnostics: Diagnostics {
            columns: model.basis.len(),
            residual_variance: column_variance(&resid),
            learners: Some(model.learners.len()),
            weights: Some(model.learners.iter().map(|l| l.weight.clone()).collect()),
            columns_per_learner: Some(model.j_star),
            ..Diagnostics::default()
        },
    })
}

/// Fit and evaluate in one call.
pub fn ensemble_zvcv(samples: &SampleSet, f: &IntegrandMatrix, config: &EnsembleConfig) -> Result<Estimate> {
    let (model, design) = fit_ensemble(samples, f, config)?;
    ensemble_estimate(&model, &design, f)
}
