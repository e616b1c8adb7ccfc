//! Repeated-trial benchmarks: MSE, statistical efficiency and overall efficiency against plain MC.
//!
//! Statistical efficiency is `MSE_MC / MSE_method`; overall efficiency scales it
//! by `t_mc / (t_method + t_mc)`, where `t_mc` is the sampling time (the only
//! cost of plain MC) and `t_method` is post-processing time.
//!
//! A method whose MSE is below `1e-20` times the MC MSE is treated as exact and
//! gets an infinite SE. Rounding error in an exact estimator is around `1e-30`
//! relative, and no genuine variance reduction comes close to `1e20`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::basis::enumerate_basis;
use crate::error::{Error, Result};
use crate::method::{IntegrandSpec, MethodSpec};
use crate::regression::IntegrandMatrix;
use crate::stein::{build_design_matrix, SampleSet};
use crate::targets::{mala_sample, sample_iid, StepSize, Target};
use crate::zvcv::fit_zvcv_detailed;

pub const SCHEMA_VERSION: &str = "1";
/// MSE ratios below this count as an exact (zero-variance) method.
pub const ZERO_MSE_RATIO: f64 = 1e-20;
pub const GOLDEN_ORDER: u32 = 3;

/// A value that may be `+∞`; serialised as the string `"inf"` in that case.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MaybeInfinite(pub f64);

impl Serialize for MaybeInfinite {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl std::fmt::Display for MaybeInfinite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() && self.0 > 0.0 {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Mean squared error per integrand over repetitions.
pub fn estimate_mse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no repetitions to average".into()));
    }
    if truth.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("truth must be finite".into()));
    }
    let mut mse = vec![0.0; truth.len()];
    for e in estimates {
        if e.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                what: "estimate length",
                expected: truth.len(),
                found: e.len(),
            });
        }
        for t in 0..truth.len() {
            mse[t] += (e[t] - truth[t]).powi(2);
        }
    }
    let n = estimates.len() as f64;
    Ok(mse.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Efficiency {
    pub per_integrand: Vec<MaybeInfinite>,
    /// Arithmetic mean over integrands.
    pub mean: MaybeInfinite,
    /// True when some integrand was estimated exactly.
    pub infinite: bool,
}

/// `MSE_MC / MSE_method` per integrand. Equal zero MSEs give 1.
pub fn statistical_efficiency(mse_mc: &[f64], mse_method: &[f64]) -> Result<Efficiency> {
    if mse_mc.len() != mse_method.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand count",
            expected: mse_mc.len(),
            found: mse_method.len(),
        });
    }
    if mse_mc.is_empty() {
        return Err(Error::InvalidArgument("no integrands".into()));
    }
    if let Some(v) = mse_mc.iter().chain(mse_method).find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("MSE must be non-negative, got {v}")));
    }
    let per: Vec<f64> = mse_mc
        .iter()
        .zip(mse_method)
        .map(|(&mc, &m)| {
            if mc == 0.0 && m == 0.0 {
                1.0
            } else if m <= ZERO_MSE_RATIO * mc {
                f64::INFINITY
            } else {
                mc / m
            }
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok(Efficiency {
        infinite: per.iter().any(|v| v.is_infinite()),
        per_integrand: per.into_iter().map(MaybeInfinite).collect(),
        mean: MaybeInfinite(mean),
    })
}

/// `SE · t_mc / (t_method + t_mc)`.
pub fn overall_efficiency(se: f64, runtime_mc: f64, runtime_method: f64) -> Result<f64> {
    if !(runtime_mc >= 0.0) || !(runtime_method >= 0.0) {
        return Err(Error::InvalidArgument("runtimes must be non-negative".into()));
    }
    if runtime_mc == 0.0 && runtime_method == 0.0 {
        return Err(Error::InvalidArgument("both runtimes are zero".into()));
    }
    let share = runtime_mc / (runtime_method + runtime_mc);
    Ok(if share == 0.0 { 0.0 } else { se * share })
}

/// How benchmark and golden-estimate chains are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    Iid,
    Mala { warmup: usize, step: StepSize },
}

impl Sampler {
    pub fn draw(&self, target: &Target, samples: usize, seed: u64) -> Result<SampleSet> {
        match *self {
            Sampler::Iid => sample_iid(target, samples, seed),
            Sampler::Mala { warmup, step } => Ok(mala_sample(target, samples, warmup, step, seed)?.samples),
        }
    }
}

/// Mixes a base seed with a path of indices into an independent-looking seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut x = seed;
    for &p in path {
        x = splitmix(x ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenEstimate {
    pub values: Vec<f64>,
    /// Standard errors from the evaluation chain, assuming independent draws.
    pub std_errors: Vec<f64>,
}

/// Order-3 ZVCV coefficients fitted on one chain and evaluated on a second, independent one.
pub fn golden_estimate(target: &Target, integrand: &IntegrandSpec, samples: usize, sampler: Sampler, seed: u64) -> Result<GoldenEstimate> {
    let fit_chain = sampler.draw(target, samples, derive_seed(seed, &[0]))?;
    let eval_chain = sampler.draw(target, samples, derive_seed(seed, &[1]))?;
    let fit = fit_zvcv_detailed(&fit_chain, &integrand.evaluate(&fit_chain)?, GOLDEN_ORDER)?;
    let design = build_design_matrix(&eval_chain, &enumerate_basis(target.dim(), GOLDEN_ORDER)?)?;
    let f = integrand.evaluate(&eval_chain)?;
    let resid = f.values() - design.values() * &fit.fit.coefficients;
    let n = resid.nrows() as f64;
    let (values, std_errors) = resid
        .column_iter()
        .map(|c| {
            let m = c.sum() / n;
            let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, (var / n).sqrt())
        })
        .unzip();
    Ok(GoldenEstimate { values, std_errors })
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub targets: Vec<Target>,
    pub integrand: IntegrandSpec,
    pub methods: Vec<MethodSpec>,
    pub sample_sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub sampler: Sampler,
    /// Chain length for golden estimates when no analytic truth exists.
    pub golden_samples: usize,
}

/// One method applied to one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub target: String,
    pub samples: usize,
    pub method: String,
    pub rep: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub sampling_seconds: f64,
    pub postprocessing_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub target: String,
    pub samples: usize,
    pub method: String,
    pub truth_source: String,
    pub truth: Vec<f64>,
    pub mse: Vec<f64>,
    pub se: Efficiency,
    pub oe: MaybeInfinite,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub failures: Vec<String>,
    pub sampling_seconds: f64,
    pub postprocessing_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub schema_version: String,
    pub seed: u64,
    pub reps: usize,
    pub targets: Vec<String>,
    pub methods: Vec<String>,
    pub sample_sizes: Vec<usize>,
    pub golden_samples: usize,
    pub integrand: String,
    pub integrand_names: Vec<Vec<String>>,
    pub sampler: Sampler,
    pub rows: Vec<ReportRow>,
    pub records: Vec<TrialRecord>,
}

const MC_LABEL: &str = "MC";

impl EfficiencyReport {
    /// The report with every wall-clock field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.sampling_seconds = 0.0;
            row.postprocessing_seconds = 0.0;
            row.oe = MaybeInfinite(0.0);
        }
        for rec in &mut r.records {
            rec.sampling_seconds = 0.0;
            rec.postprocessing_seconds = 0.0;
        }
        r
    }

    /// One line per (target, S, method); per-integrand values are `;`-separated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "target", "samples", "method", "truth_source", "se_mean", "oe_mean", "se_infinite", "reps_ok",
            "reps_failed", "sampling_seconds", "postprocessing_seconds", "se", "mse", "failures",
        ])
        .map_err(io)?;
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
        for r in &self.rows {
            w.write_record([
                r.target.clone(),
                r.samples.to_string(),
                r.method.clone(),
                r.truth_source.clone(),
                r.se.mean.to_string(),
                r.oe.to_string(),
                r.se.infinite.to_string(),
                r.reps_ok.to_string(),
                r.reps_failed.to_string(),
                r.sampling_seconds.to_string(),
                r.postprocessing_seconds.to_string(),
                join(&mut r.se.per_integrand.iter().map(|v| v.to_string())),
                join(&mut r.mse.iter().map(|v| v.to_string())),
                r.failures.join(" | "),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Cell<'a> {
    target_index: usize,
    target: &'a Target,
    size_index: usize,
    samples: usize,
}

/// Runs every method on fresh seeded chains and summarises efficiency against MC.
///
/// Each repetition draws one chain that all methods share. Reps run in parallel;
/// results depend only on the config and seed.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<EfficiencyReport> {
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 reps, got {}", cfg.reps)));
    }
    if cfg.targets.is_empty() || cfg.methods.is_empty() || cfg.sample_sizes.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs targets, methods and sample sizes".into()));
    }
    let mut methods = vec![MethodSpec::Mc];
    methods.extend(cfg.methods.iter().filter(|m| **m != MethodSpec::Mc).cloned());
    let labels: Vec<String> = methods.iter().map(|m| m.label()).collect();

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut names = Vec::new();
    for (ti, target) in cfg.targets.iter().enumerate() {
        names.push(cfg.integrand.names(target.dim())?);
        let (truth, source) = match cfg.integrand.analytic_truth(target)? {
            Some(t) => (t, "analytic".to_string()),
            None => {
                let g = golden_estimate(target, &cfg.integrand, cfg.golden_samples, cfg.sampler, derive_seed(cfg.seed, &[u64::MAX, ti as u64]))?;
                (g.values, format!("golden ZV{GOLDEN_ORDER}, S={}", cfg.golden_samples))
            }
        };
        for (si, &s) in cfg.sample_sizes.iter().enumerate() {
            let cell = Cell { target_index: ti, target, size_index: si, samples: s };
            let per_rep: Vec<Vec<TrialRecord>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| run_rep(cfg, &cell, &methods, &labels, rep))
                .collect::<Result<_>>()?;
            let cell_records: Vec<TrialRecord> = per_rep.into_iter().flatten().collect();
            rows.extend(summarise(&cell_records, target, s, &labels, &truth, &source, cfg.reps)?);
            records.extend(cell_records);
        }
    }
    Ok(EfficiencyReport {
        schema_version: SCHEMA_VERSION.into(),
        seed: cfg.seed,
        reps: cfg.reps,
        targets: cfg.targets.iter().map(|t| t.to_string()).collect(),
        methods: methods.iter().map(|m| m.to_string()).collect(),
        sample_sizes: cfg.sample_sizes.clone(),
        golden_samples: cfg.golden_samples,
        integrand: cfg.integrand.to_string(),
        integrand_names: names,
        sampler: cfg.sampler,
        rows,
        records,
    })
}

fn run_rep(cfg: &BenchmarkConfig, cell: &Cell<'_>, methods: &[MethodSpec], labels: &[String], rep: usize) -> Result<Vec<TrialRecord>> {
    let seed = derive_seed(cfg.seed, &[cell.target_index as u64, cell.size_index as u64, rep as u64]);
    let start = Instant::now();
    let samples = cfg.sampler.draw(cell.target, cell.samples, seed)?;
    let f: IntegrandMatrix = cfg.integrand.evaluate(&samples)?;
    let sampling = start.elapsed().as_secs_f64();
    Ok(methods
        .iter()
        .zip(labels)
        .map(|(m, label)| {
            let start = Instant::now();
            let out = m.apply(&samples, &f, seed);
            let post = start.elapsed().as_secs_f64();
            let (estimates, error) = match out {
                Ok(e) if e.values.iter().all(|v| v.is_finite()) => (Some(e.values), None),
                Ok(_) => (None, Some("non-finite estimate".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            TrialRecord {
                target: cell.target.to_string(),
                samples: cell.samples,
                method: label.clone(),
                rep,
                seed,
                estimates,
                error,
                sampling_seconds: sampling,
                postprocessing_seconds: post,
            }
        })
        .collect())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarise(records: &[TrialRecord], target: &Target, s: usize, labels: &[String], truth: &[f64], source: &str, reps: usize) -> Result<Vec<ReportRow>> {
    let ok = |label: &str| -> Vec<Vec<f64>> {
        records
            .iter()
            .filter(|r| r.method == label)
            .filter_map(|r| r.estimates.clone())
            .collect()
    };
    let mc_estimates = ok(MC_LABEL);
    let mse_mc = estimate_mse(&mc_estimates, truth)?;
    let sampling = mean(records.iter().filter(|r| r.method == MC_LABEL).map(|r| r.sampling_seconds));

    labels
        .iter()
        .map(|label| {
            let mine: Vec<&TrialRecord> = records.iter().filter(|r| &r.method == label).collect();
            let estimates = ok(label);
            let mut failures: Vec<String> = mine.iter().filter_map(|r| r.error.clone()).collect();
            failures.sort();
            failures.dedup();
            let post = mean(mine.iter().filter(|r| r.estimates.is_some()).map(|r| r.postprocessing_seconds));
            let (mse, se, oe) = if estimates.is_empty() {
                let nan = vec![f64::NAN; truth.len()];
                let se = Efficiency {
                    per_integrand: nan.iter().map(|v| MaybeInfinite(*v)).collect(),
                    mean: MaybeInfinite(f64::NAN),
                    infinite: false,
                };
                (nan, se, MaybeInfinite(f64::NAN))
            } else {
                let mse = estimate_mse(&estimates, truth)?;
                let se = statistical_efficiency(&mse_mc, &mse)?;
                let oe = if label == MC_LABEL {
                    se.mean.0
                } else {
                    overall_efficiency(se.mean.0, sampling, post).unwrap_or(f64::NAN)
                };
                (mse, se, MaybeInfinite(oe))
            };
            Ok(ReportRow {
                target: target.to_string(),
                samples: s,
                method: label.clone(),
                truth_source: source.to_string(),
                truth: truth.to_vec(),
                mse,
                se,
                oe,
                reps_ok: estimates.len(),
                reps_failed: reps - estimates.len(),
                failures,
                sampling_seconds: sampling,
                postprocessing_seconds: post,
            })
        })
        .collect()
}
