//! Acceptance suite.
//!
//! Runs every criterion in sequence, prints one `PASS`/`FAIL` line each and
//! exits non-zero if any fails. Criteria run one at a time so the wall-clock
//! limits and the timing comparison are not disturbed by other work.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steincv::basis::{basis_size, count_exact_order, enumerate_basis, MultiIndex};
use steincv::ensemble::{ensemble_estimate, fit_ensemble, select_srswor, EnsembleConfig, Preset, Selection};
use steincv::eval::{run_benchmark, BenchmarkConfig, EfficiencyReport, Sampler};
use steincv::method::{IntegrandSpec, MethodSpec};
use steincv::regression::{solve_lasso_raw, solve_ols_raw, solve_ridge_raw, IntegrandMatrix, Penalty};
use steincv::stein::{build_design_matrix, check_zero_mean, SampleSet};
use steincv::targets::{mala_chains, parse_target, random_spd, sample_iid, StepSize, Target};
use steincv::zvcv::{fit_zvcv, fit_zvcv_regularised, vanilla_mc, LambdaChoice};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Duration, Criterion); 9] = [
        (1, "monomial counts", Duration::from_secs(1), monomial_counts),
        (2, "expected order of uniform columns", Duration::from_secs(10), srswor_expected_order),
        (3, "zero variance on Gaussian targets", Duration::from_secs(30), zero_variance),
        (4, "semi-exact ensembles are exact", Duration::from_secs(60), semi_exact_exactness),
        (5, "Stein columns have mean zero", Duration::from_secs(30), stein_zero_mean),
        (6, "regression oracles", Duration::from_secs(10), regression_oracles),
        (7, "reduction identities", Duration::from_secs(10), reduction_identities),
        (8, "variance reduction on the banana target", Duration::from_secs(600), banana_variance_reduction),
        (9, "determinism across thread counts", Duration::from_secs(120), determinism),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {n}: {name}: {} [{:.2}s, limit {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", too slow" }
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn rel_err(est: f64, truth: f64) -> f64 {
    (est - truth).abs() / truth.abs()
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn monomial_counts() -> Outcome {
    let table: [(usize, [u64; 5]); 2] = [(5, [5, 15, 35, 70, 126]), (15, [15, 120, 680, 3060, 11628])];
    for (d, row) in table {
        for (q, &want) in (1u32..).zip(&row) {
            let got = count_exact_order(d, q).unwrap();
            if got != want {
                return Outcome::new(false, format!("d={d} q={q}: {got} != {want}"));
            }
        }
    }
    for d in 1..=15usize {
        for q in 1..=5u32 {
            let want = binomial(q as u64 + d as u64, d as u64) as usize - 1;
            let basis = enumerate_basis(d, q).unwrap();
            if basis.len() != want || basis_size(d, q).unwrap() != want {
                return Outcome::new(false, format!("d={d} q={q}: basis has {} columns, want {want}", basis.len()));
            }
        }
    }
    Outcome::new(true, "table rows for d=5 and d=15 exact; 75 basis sizes match")
}

fn srswor_expected_order() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut parts = Vec::new();
    let mut pass = true;
    for (d, want) in [(5usize, 4.183), (15, 4.688)] {
        let basis = enumerate_basis(d, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20 + d as u64);
        let total: u64 = (0..DRAWS)
            .map(|_| {
                let mask = select_srswor(basis.len(), 1, &mut rng).unwrap();
                basis.indices()[mask.indices()[0]].order() as u64
            })
            .sum();
        let mean = total as f64 / DRAWS as f64;
        pass &= (mean - want).abs() <= 0.05;
        parts.push(format!("d={d}: {mean:.4} (want {want} ± 0.05)"));
    }
    Outcome::new(pass, parts.join(", "))
}

/// A Gaussian with mean in [2, 4]^d and random SPD covariance.
fn random_gaussian(d: usize, seed: u64) -> Target {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mean = DVector::from_fn(d, |_, _| rng.random_range(2.0..4.0));
    Target::gaussian(mean, random_spd(d, seed)).unwrap()
}

/// Every θ_j and every θ_jθ_l (j ≤ l) with its analytic expectation.
fn low_order_integrands(target: &Target, samples: &SampleSet) -> (IntegrandMatrix, Vec<f64>) {
    let d = target.dim();
    let mut alphas = Vec::new();
    for j in 0..d {
        let mut a = vec![0u32; d];
        a[j] = 1;
        alphas.push(MultiIndex::new(a));
    }
    for j in 0..d {
        for l in j..d {
            let mut a = vec![0u32; d];
            a[j] += 1;
            a[l] += 1;
            alphas.push(MultiIndex::new(a));
        }
    }
    let truth = alphas.iter().map(|a| target.moment(a).unwrap()).collect();
    let f = DMatrix::from_fn(samples.len(), alphas.len(), |i, t| {
        let row = samples.thetas().row(i);
        alphas[t].exponents().iter().enumerate().map(|(j, &e)| row[j].powi(e as i32)).product()
    });
    (IntegrandMatrix::new(f).unwrap(), truth)
}

fn zero_variance() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for d in [1usize, 2, 5] {
        for seed in 0..50u64 {
            let target = random_gaussian(d, 1000 * d as u64 + seed);
            let samples = sample_iid(&target, 100, seed).unwrap();
            let (f, truth) = low_order_integrands(&target, &samples);
            let est = fit_zvcv(&samples, &f, 2).unwrap();
            for (e, t) in est.values.iter().zip(&truth) {
                worst = worst.max(rel_err(*e, *t));
            }
            runs += 1;
        }
    }
    Outcome::new(worst <= 1e-8, format!("{runs} runs, worst relative error {worst:.2e} (limit 1e-8)"))
}

fn semi_exact_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut fits = 0;
    for d in [1usize, 2, 5] {
        for seed in 0..50u64 {
            let target = random_gaussian(d, 7000 + 100 * d as u64 + seed);
            let samples = sample_iid(&target, 200, seed).unwrap();
            let (f, truth) = low_order_integrands(&target, &samples);
            for (k, preset) in [(1usize, Preset::Sa), (25, Preset::Sa), (25, Preset::Mo), (25, Preset::Do)] {
                let mut cfg = EnsembleConfig::new(preset, k, seed);
                cfg.q_max = 3;
                cfg.q_base = Some(2);
                // Halfway between the base prefix and the full basis, so learners really differ.
                let (full, base) = (basis_size(d, 3).unwrap(), basis_size(d, 2).unwrap());
                cfg.j_star = Some(base + (full - base) / 2);
                let (model, z) = fit_ensemble(&samples, &f, &cfg).unwrap();
                let agg = ensemble_estimate(&model, &z, &f).unwrap();
                let learners = model.learner_estimates(&z, &f).unwrap();
                for est in learners.iter().chain(std::iter::once(&agg.values)) {
                    for (e, t) in est.iter().zip(&truth) {
                        worst = worst.max(rel_err(*e, *t));
                    }
                }
                fits += 1;
            }
        }
    }
    Outcome::new(
        worst <= 1e-8,
        format!("{fits} ensembles (SA k=1, SA/MO/DO k=25), every learner and aggregate, worst relative error {worst:.2e}"),
    )
}

fn stein_zero_mean() -> Outcome {
    let target = Target::standard_normal(3).unwrap();
    let basis = enumerate_basis(3, 2).unwrap();
    let clean = (0..100u64)
        .filter(|&seed| {
            let samples = sample_iid(&target, 5000, seed).unwrap();
            let z = build_design_matrix(&samples, &basis).unwrap();
            check_zero_mean(&z).unwrap().iter().all(|c| c.passes)
        })
        .count();
    Outcome::new(clean >= 99, format!("{clean}/100 seeds with all {} columns within 5 SE (need 99)", basis.len()))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Least squares through the normal equations, solved by LU.
fn normal_equations(z: &DMatrix<f64>, f: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (zc, fc) = (centered(z), centered(f));
    let beta = (zc.transpose() * &zc).lu().solve(&(zc.transpose() * &fc)).unwrap();
    (beta.clone(), intercepts(z, f, &beta))
}

fn intercepts(z: &DMatrix<f64>, f: &DMatrix<f64>, beta: &DMatrix<f64>) -> Vec<f64> {
    let zbar = z.row_mean();
    (0..f.ncols()).map(|t| f.column(t).mean() - (&zbar * beta.column(t))[0]).collect()
}

/// Ridge on unit-norm centered columns, mapped back to the original scale.
fn ridge_closed_form(z: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
    let mut x = centered(z);
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    for (mut c, n) in x.column_iter_mut().zip(&norms) {
        c /= *n;
    }
    let gram = x.transpose() * &x + DMatrix::identity(z.ncols(), z.ncols()) * lambda;
    let mut beta = gram.lu().solve(&(x.transpose() * centered(f))).unwrap();
    for (mut r, n) in beta.row_iter_mut().zip(&norms) {
        r /= *n;
    }
    let a = intercepts(z, f, &beta);
    (beta, a)
}

fn max_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn regression_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ols, mut ridge, mut lasso0, mut soft) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (s, j) = (rng.random_range(20..60), rng.random_range(1..8));
        let z = random_matrix(s, j, &mut rng);
        let f = random_matrix(s, 2, &mut rng);

        let fit = solve_ols_raw(&z, &f).unwrap();
        let (beta, alpha) = normal_equations(&z, &f);
        ols = ols.max(max_gap(&fit.coefficients, &beta));
        ols = alpha.iter().zip(&fit.intercept).fold(ols, |m, (a, b)| m.max((a - b).abs()));

        for lambda in [1e-3, 0.5, 10.0] {
            let fit = solve_ridge_raw(&z, &f, lambda).unwrap();
            let (beta, alpha) = ridge_closed_form(&z, &f, lambda);
            ridge = ridge.max(max_gap(&fit.coefficients, &beta));
            ridge = alpha.iter().zip(&fit.intercept).fold(ridge, |m, (a, b)| m.max((a - b).abs()));
        }

        let fit = solve_lasso_raw(&z, &f, 0.0).unwrap();
        let reference = solve_ols_raw(&z, &f).unwrap();
        lasso0 = lasso0.max(max_gap(&fit.coefficients, &reference.coefficients));

        // Orthonormal centered design: coordinates decouple into soft thresholds at λ/2.
        let q = centered(&random_matrix(s, j, &mut rng)).qr().q();
        let y = random_matrix(s, 1, &mut rng) * 3.0;
        let c = q.transpose() * centered(&y);
        for lambda in [0.0, 0.3, 1.0, 4.0] {
            let fit = solve_lasso_raw(&q, &y, lambda).unwrap();
            for k in 0..j {
                let want = c[k].signum() * (c[k].abs() - lambda / 2.0).max(0.0);
                soft = soft.max((fit.coefficients[(k, 0)] - want).abs());
            }
        }
    }
    let pass = ols <= 1e-10 && ridge <= 1e-8 && lasso0 <= 1e-6 && soft <= 1e-8;
    Outcome::new(
        pass,
        format!("OLS {ols:.1e} (≤1e-10), ridge {ridge:.1e} (≤1e-8), LASSO λ=0 {lasso0:.1e} (≤1e-6), soft threshold {soft:.1e} (≤1e-8)"),
    )
}

fn reduction_identities() -> Outcome {
    let mut infinite_penalty = 0.0f64;
    let mut single_learner = 0.0f64;
    let mut zero_coefficients = 0.0f64;
    for seed in 0..10u64 {
        let d = 1 + seed as usize % 3;
        let target = random_gaussian(d, 300 + seed);
        let samples = sample_iid(&target, 80, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = IntegrandMatrix::new(DMatrix::from_fn(80, 2, |i, t| {
            let th = samples.thetas()[(i, 0)];
            (th * (t + 1) as f64).sin() * 3.0 + th.powi(3) + rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        let mc = vanilla_mc(&f).values;
        let gap = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

        for penalty in [Penalty::Ridge, Penalty::Lasso] {
            let est = fit_zvcv_regularised(&samples, &f, 3, penalty, LambdaChoice::Fixed { lambda: f64::INFINITY }).unwrap();
            infinite_penalty = infinite_penalty.max(gap(&est.values, &mc));
        }

        let q = 2;
        let mut cfg = EnsembleConfig::new(Preset::Custom, 1, seed);
        cfg.q_max = q;
        cfg.q_base = Some(1);
        cfg.j_star = Some(basis_size(d, q).unwrap());
        cfg.selection = Selection::Srswor;
        let (mut model, z) = fit_ensemble(&samples, &f, &cfg).unwrap();
        let ens = ensemble_estimate(&model, &z, &f).unwrap();
        let zv = fit_zvcv(&samples, &f, q).unwrap();
        single_learner = single_learner.max(gap(&ens.values, &zv.values));

        for l in &mut model.learners {
            l.coefficients.fill(0.0);
        }
        let zero = ensemble_estimate(&model, &z, &f).unwrap();
        zero_coefficients = zero_coefficients.max(gap(&zero.values, &mc));
    }
    let pass = infinite_penalty <= 1e-10 && single_learner <= 1e-10 && zero_coefficients <= 1e-10;
    Outcome::new(
        pass,
        format!(
            "λ=∞ vs MC {infinite_penalty:.1e}, k=1 full ensemble vs ZV {single_learner:.1e}, zero-coefficient ensemble vs MC {zero_coefficients:.1e} (all ≤1e-10)"
        ),
    )
}

fn banana_variance_reduction() -> Outcome {
    let methods = ["zv:q=1", "zv:q=2", "rzv:q=2,penalty=ridge,cv=10", "sa:k=25", "rzv:q=3,penalty=lasso,cv=10"];
    let cfg = BenchmarkConfig {
        targets: vec![parse_target("banana:d=2,b=0.1,scale=1").unwrap()],
        integrand: "theta:1".parse().unwrap(),
        methods: methods.iter().map(|m| m.parse().unwrap()).collect(),
        sample_sizes: vec![1000],
        reps: 100,
        seed: 8,
        sampler: Sampler::Mala { warmup: 1000, step: StepSize::Auto },
        golden_samples: 0,
    };
    let report = match run_benchmark(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("benchmark failed: {e}")),
    };
    let row = |label: &str| report.rows.iter().find(|r| r.method == label).unwrap();
    let se = |label: &str| row(label).se.mean.0;
    let failures: usize = report.rows.iter().map(|r| r.reps_failed).sum();
    let (zv1, zv2, rzv2, sa) = (se("ZV1"), se("ZV2"), se("r-ZV2"), se("SA25"));
    let sa_time = row("SA25").postprocessing_seconds;
    let lasso_time = row("l-ZV3").postprocessing_seconds;
    let ratio = sa_time / lasso_time;
    let pass = failures == 0 && zv2 > 1.0 && rzv2 > 1.0 && sa > 1.0 && sa >= zv1 && ratio <= 0.25;
    Outcome::new(
        pass,
        format!(
            "SE ZV1 {zv1:.2}, ZV2 {zv2:.2}, r-ZV2 {rzv2:.2}, SA25 {sa:.2}; SA25/l-ZV3 time {:.2}ms/{:.2}ms = {ratio:.3} (≤0.25); {failures} failed reps",
            sa_time * 1e3,
            lasso_time * 1e3
        ),
    )
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(job)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn determinism() -> Outcome {
    let target = random_gaussian(3, 99);
    let banana = parse_target("banana:d=2,b=0.1,scale=1").unwrap();
    let methods: Vec<MethodSpec> = [
        "mc",
        "zv:q=2",
        "rzv:q=3,penalty=ridge,cv=5",
        "rzv:q=3,penalty=lasso,cv=5",
        "sa:k=25,qmax=4",
        "do:k=25,qmax=4",
        "mo:k=25,qmax=4",
        "ens:k=10,qmax=4,select=srswor,jstar=12",
    ]
    .iter()
    .map(|m| m.parse().unwrap())
    .collect();
    let estimates = |threads: usize| {
        in_pool(threads, || {
            let samples = sample_iid(&target, 150, 4).unwrap();
            let f = IntegrandSpec::ThetaSquared.evaluate(&samples).unwrap();
            let chains = mala_chains(&banana, 300, 200, StepSize::Auto, &[1, 2, 3]).unwrap();
            let mut out: Vec<Vec<u64>> = methods.iter().map(|m| bits(&m.apply(&samples, &f, 17).unwrap().values)).collect();
            for c in chains {
                out.push(bits(c.samples.thetas().as_slice()));
                out.push(bits(&[c.acceptance_rate, c.step_size]));
            }
            out
        })
    };
    let bench_cfg = BenchmarkConfig {
        targets: vec![banana.clone(), target.clone()],
        integrand: IntegrandSpec::Theta,
        methods: methods[1..].to_vec(),
        sample_sizes: vec![100],
        reps: 4,
        seed: 5,
        sampler: Sampler::Mala { warmup: 100, step: StepSize::Auto },
        golden_samples: 0,
    };
    let bench = |threads: usize| -> EfficiencyReport { in_pool(threads, || run_benchmark(&bench_cfg).unwrap()).without_timing() };

    let single = estimates(1);
    let estimators_match = single == estimates(4) && single == estimates(2);
    let b1 = bench(1);
    let b4 = bench(4);
    let bench_match = serde_json::to_string(&b1).unwrap() == serde_json::to_string(&b4).unwrap();
    Outcome::new(
        estimators_match && bench_match,
        format!(
            "{} estimators and 3 MALA chains bit-identical on 1/2/4 threads: {estimators_match}; benchmark report ({} rows) identical on 1/4 threads: {bench_match}",
            methods.len(),
            b1.rows.len()
        ),
    )
}
