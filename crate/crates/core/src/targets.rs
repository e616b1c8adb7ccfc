//! Synthetic targets with closed-form gradients, and samplers for them.
//!
//! Log densities are unnormalised; only gradients and differences matter here.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::MultiIndex;
use crate::error::{Error, Result};
use crate::stein::SampleSet;

/// Acceptance rate the automatic step size aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.574;

#[derive(Debug, Clone)]
enum Kind {
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
        precision: DMatrix<f64>,
    },
    /// Independent pairs `(θ_a, θ_c)`: `θ_a ~ N(0, s²)`, `θ_c | θ_a ~ N(b(θ_a² − s²), 1)`.
    Banana { curvature: f64, scale: f64 },
}

#[derive(Debug, Clone)]
pub struct Target {
    dim: usize,
    kind: Kind,
}

impl Target {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("target dimension must be at least 1".into()));
        }
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                what: "covariance size",
                expected: d,
                found: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("gaussian parameters must be finite".into()));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * (1.0 + cov.amax()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
        let precision = chol.inverse();
        Ok(Target {
            dim: d,
            kind: Kind::Gaussian { mean, cov, chol, precision },
        })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn banana(dim: usize, curvature: f64, scale: f64) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "banana target needs an even dimension >= 2, got {dim}"
            )));
        }
        if !curvature.is_finite() || !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(
                "banana curvature must be finite and scale positive".into(),
            ));
        }
        Ok(Target {
            dim,
            kind: Kind::Banana { curvature, scale },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, Kind::Gaussian { .. })
    }

    fn check_point(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "point dimension",
                expected: self.dim,
                found: theta.len(),
            });
        }
        Ok(())
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_point(theta)?;
        Ok(self.log_density_unchecked(theta))
    }

    pub fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_point(theta)?;
        Ok(self.grad_unchecked(theta))
    }

    fn log_density_unchecked(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            Kind::Gaussian { mean, chol, .. } => {
                let diff = DVector::from_column_slice(theta) - mean;
                let z = chol.l().solve_lower_triangular(&diff).expect("cholesky factor is invertible");
                -0.5 * z.norm_squared()
            }
            Kind::Banana { curvature, scale } => theta
                .chunks_exact(2)
                .map(|p| {
                    let r = p[1] - curvature * (p[0] * p[0] - scale * scale);
                    -0.5 * p[0] * p[0] / (scale * scale) - 0.5 * r * r
                })
                .sum(),
        }
    }

    fn grad_unchecked(&self, theta: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Gaussian { mean, precision, .. } => {
                let diff = DVector::from_column_slice(theta) - mean;
                (-(precision * diff)).iter().copied().collect()
            }
            Kind::Banana { curvature, scale } => {
                let mut g = Vec::with_capacity(self.dim);
                for p in theta.chunks_exact(2) {
                    let r = p[1] - curvature * (p[0] * p[0] - scale * scale);
                    g.push(-p[0] / (scale * scale) + 2.0 * curvature * p[0] * r);
                    g.push(-r);
                }
                g
            }
        }
    }

    pub fn analytic_mean(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Gaussian { mean, .. } => mean.iter().copied().collect(),
            Kind::Banana { .. } => vec![0.0; self.dim],
        }
    }

    /// `E[θ^α]` when it is known in closed form; only total orders up to 2 are covered.
    pub fn moment(&self, alpha: &MultiIndex) -> Option<f64> {
        if alpha.dim() != self.dim || alpha.order() > 2 {
            return None;
        }
        let nz: Vec<(usize, u32)> = alpha
            .exponents()
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(j, &e)| (j, e))
            .collect();
        match &self.kind {
            Kind::Gaussian { mean, cov, .. } => Some(match nz.as_slice() {
                [] => 1.0,
                [(j, 1)] => mean[*j],
                [(j, 2)] => cov[(*j, *j)] + mean[*j] * mean[*j],
                [(j, 1), (l, 1)] => cov[(*j, *l)] + mean[*j] * mean[*l],
                _ => unreachable!("order is at most 2"),
            }),
            Kind::Banana { curvature, scale } => {
                let s2 = scale * scale;
                Some(match nz.as_slice() {
                    [] => 1.0,
                    [(j, 2)] if j % 2 == 0 => s2,
                    [(_, 2)] => 1.0 + 2.0 * curvature * curvature * s2 * s2,
                    // First moments and all cross moments vanish.
                    _ => 0.0,
                })
            }
        }
    }

    /// Draws one exact sample.
    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        match &self.kind {
            Kind::Gaussian { mean, chol, .. } => {
                (mean + chol.l() * DVector::from_vec(z)).iter().copied().collect()
            }
            Kind::Banana { curvature, scale } => {
                let mut out = Vec::with_capacity(self.dim);
                for p in z.chunks_exact(2) {
                    let a = scale * p[0];
                    out.push(a);
                    out.push(curvature * (a * a - scale * scale) + p[1]);
                }
                out
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Gaussian { .. } => write!(f, "gaussian:d={}", self.dim),
            Kind::Banana { curvature, scale } => {
                write!(f, "banana:d={},b={curvature},scale={scale}", self.dim)
            }
        }
    }
}

/// A well-conditioned random covariance `AAᵀ/d + I/2` with standard normal `A`.
pub fn random_spd(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut cov = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.5;
    // Exact symmetry, so the check in `Target::gaussian` never trips on rounding.
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov
}

/// Exact i.i.d. draws with gradients attached. Works for every target here.
pub fn sample_iid(target: &Target, samples: usize, seed: u64) -> Result<SampleSet> {
    if samples == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = target.dim;
    let mut thetas = DMatrix::zeros(samples, d);
    let mut grads = DMatrix::zeros(samples, d);
    for i in 0..samples {
        let x = target.draw(&mut rng);
        let g = target.grad_unchecked(&x);
        for j in 0..d {
            thetas[(i, j)] = x[j];
            grads[(i, j)] = g[j];
        }
    }
    SampleSet::new(thetas, grads)
}

/// I.i.d. draws from a Gaussian target; any other target is rejected.
pub fn sample_iid_gaussian(target: &Target, samples: usize, seed: u64) -> Result<SampleSet> {
    if !target.is_gaussian() {
        return Err(Error::InvalidArgument(format!("{target} is not gaussian")));
    }
    sample_iid(target, samples, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum StepSize {
    Fixed(f64),
    /// Adapted during warmup toward [`TARGET_ACCEPTANCE`].
    Auto,
}

/// Retained MALA states with the sampler's bookkeeping.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: SampleSet,
    /// Fraction of retained-phase proposals accepted.
    pub acceptance_rate: f64,
    pub warmup_discarded: usize,
    /// Step size used for the retained phase.
    pub step_size: f64,
    pub seed: u64,
}

struct State {
    x: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn log_proposal(to: &[f64], from: &State, eps: f64) -> f64 {
    let h = 0.5 * eps * eps;
    let mut s = 0.0;
    for ((t, x), g) in to.iter().zip(&from.x).zip(&from.grad) {
        let d = t - x - h * g;
        s += d * d;
    }
    -s / (2.0 * eps * eps)
}

/// Metropolis-adjusted Langevin chain of `samples` retained states after `warmup` discarded ones.
///
/// Starts at the target mean. With [`StepSize::Auto`] the log step size follows a
/// Robbins–Monro recursion during warmup and is frozen afterwards.
pub fn mala_sample(target: &Target, samples: usize, warmup: usize, step: StepSize, seed: u64) -> Result<Chain> {
    if samples == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let mut eps = match step {
        StepSize::Fixed(e) if e > 0.0 && e.is_finite() => e,
        StepSize::Fixed(e) => {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {e}")))
        }
        StepSize::Auto => 1.3 * (target.dim as f64).powf(-1.0 / 6.0),
    };
    let adapt = matches!(step, StepSize::Auto);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = target.dim;

    let x0 = target.analytic_mean();
    let logp0 = target.log_density_unchecked(&x0);
    if !logp0.is_finite() {
        return Err(Error::NonFinite { what: "initial log density", row: 0, col: 0 });
    }
    let mut cur = State { grad: target.grad_unchecked(&x0), x: x0, logp: logp0 };

    let mut thetas = DMatrix::zeros(samples, d);
    let mut grads = DMatrix::zeros(samples, d);
    let mut accepted = 0usize;

    for it in 0..warmup + samples {
        let h = 0.5 * eps * eps;
        let prop: Vec<f64> = (0..d)
            .map(|j| cur.x[j] + h * cur.grad[j] + eps * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = target.log_density_unchecked(&prop);
        let mut accept_prob = 0.0;
        let mut next = None;
        if logp.is_finite() {
            let cand = State { grad: target.grad_unchecked(&prop), x: prop, logp };
            let log_ratio = cand.logp - cur.logp + log_proposal(&cur.x, &cand, eps) - log_proposal(&cand.x, &cur, eps);
            accept_prob = log_ratio.min(0.0).exp();
            next = Some(cand);
        }
        let u: f64 = rng.random();
        if u < accept_prob {
            cur = next.expect("finite proposal");
            if it >= warmup {
                accepted += 1;
            }
        }
        if it < warmup {
            if adapt {
                let gain = (it as f64 + 10.0).powf(-0.6);
                eps *= (gain * (accept_prob - TARGET_ACCEPTANCE)).exp();
            }
        } else {
            let row = it - warmup;
            for j in 0..d {
                thetas[(row, j)] = cur.x[j];
                grads[(row, j)] = cur.grad[j];
            }
        }
    }

    Ok(Chain {
        samples: SampleSet::new(thetas, grads)?,
        acceptance_rate: accepted as f64 / samples as f64,
        warmup_discarded: warmup,
        step_size: eps,
        seed,
    })
}

/// Independent chains in parallel, one per seed, returned in seed order.
pub fn mala_chains(target: &Target, samples: usize, warmup: usize, step: StepSize, seeds: &[u64]) -> Result<Vec<Chain>> {
    seeds
        .par_iter()
        .map(|&s| mala_sample(target, samples, warmup, step, s))
        .collect()
}

/// Parses `gaussian:d=2[,mean=m,var=v,rho=r]` or `banana:d=2[,b=0.1,scale=1]`.
///
/// The gaussian form has a constant mean, variance `var` and equicorrelation `rho`.
pub fn parse_target(spec: &str) -> Result<Target> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut dim = None;
    let mut params = std::collections::BTreeMap::new();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value in target spec, got '{kv}'")))?;
        if k == "d" {
            dim = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad dimension '{v}'")))?);
        } else {
            let x: f64 = v.parse().map_err(|_| Error::Parse(format!("bad value for {k}: '{v}'")))?;
            params.insert(k.to_string(), x);
        }
    }
    let mut take = |k: &str, default: f64| params.remove(k).unwrap_or(default);
    let target = match name {
        "gaussian" => {
            let d = dim.unwrap_or(1);
            let (m, var, rho) = (take("mean", 0.0), take("var", 1.0), take("rho", 0.0));
            let cov = DMatrix::from_fn(d, d, |i, j| if i == j { var } else { rho * var });
            Target::gaussian(DVector::from_element(d, m), cov)?
        }
        "banana" => {
            let d = dim.unwrap_or(2);
            let (b, scale) = (take("b", 0.1), take("scale", 1.0));
            Target::banana(d, b, scale)?
        }
        other => return Err(Error::Parse(format!("unknown target '{other}'"))),
    };
    if let Some(k) = params.keys().next() {
        return Err(Error::Parse(format!("unknown target parameter '{k}' for {name}")));
    }
    Ok(target)
}
