//! The `steincv` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure (I/O, invalid argument, non-convergence) |
//! | 2 | shape mismatch or too few samples |
//! | 3 | unidentifiable or singular regression |
//! | 4 | parse error in a file, a spec string or the command line |
//!
//! Failures print one line to stderr: `error code=<n> kind=<kind>: <message>`.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::basis::enumerate_basis;
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, BenchmarkConfig, Sampler, SCHEMA_VERSION};
use crate::io::{read_matrix_csv, read_samples, to_json, write_matrix_csv_file, write_output};
use crate::method::{IntegrandSpec, MethodSpec};
use crate::regression::IntegrandMatrix;
use crate::stein::{build_design_matrix, check_zero_mean, ColumnDiagnostic};
use crate::targets::{mala_sample, parse_target, sample_iid, StepSize, Target};
use crate::zvcv::Diagnostics;

const CHECK_ORDER: u32 = 2;

#[derive(Debug, Parser)]
#[command(name = "steincv", version, about = "Stein-operator control variates for Monte Carlo output")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "STEINCV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate expectations from samples, gradients and integrand values.
    Estimate(EstimateArgs),
    /// Draw samples from a synthetic target and write them as CSV.
    Generate(GenerateArgs),
    /// Compare methods over repeated seeded chains.
    Benchmark(BenchmarkArgs),
    /// Check that gradients give mean-zero control variates.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SamplerKind {
    Iid,
    Mala,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    grads: PathBuf,
    #[arg(long)]
    integrands: PathBuf,
    /// Method spec, e.g. `zv:q=2`, `rzv:q=2,penalty=ridge,cv=10` or `sa:k=25`.
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Include wall-clock timing (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Target spec, e.g. `gaussian:d=2` or `banana:d=2,b=0.1,scale=1`.
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value_t = SamplerKind::Iid)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    /// MALA step size, or `auto`.
    #[arg(long, default_value = "auto")]
    step: String,
    /// Integrand spec: `theta`, `theta2`, `theta:1`, `theta:1*2;2`.
    #[arg(long, default_value = "theta")]
    integrand: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Number of retained samples.
    #[arg(long = "S", alias = "size")]
    size: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Target specs; repeat the flag for several.
    #[arg(long = "target", required = true)]
    targets: Vec<String>,
    /// Method specs; repeat the flag for several. `mc` is always included.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Sample sizes, comma separated or repeated.
    #[arg(long = "S", alias = "size", value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = SamplerKind::Mala)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value = "auto")]
    step: String,
    #[arg(long, default_value = "theta")]
    integrand: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chain length for golden estimates when no analytic truth is known.
    #[arg(long = "golden-S", default_value_t = 100_000)]
    golden_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also list every per-rep trial in JSON output.
    #[arg(long)]
    records: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    grads: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Stable exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DimensionMismatch { .. } | Error::TooFewSamples { .. } => 2,
        Error::Unidentifiable { .. } | Error::Singular { .. } => 3,
        Error::Parse(_) => 4,
        _ => 1,
    }
}

fn kind(err: &Error) -> &'static str {
    match err {
        Error::DimensionMismatch { .. } => "shape",
        Error::NonFinite { .. } => "non-finite",
        Error::TooFewSamples { .. } => "too-few-samples",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Unidentifiable { .. } => "unidentifiable",
        Error::Singular { .. } => "singular",
        Error::NonConvergence { .. } => "non-convergence",
        Error::NotPositiveDefinite => "not-positive-definite",
        Error::Overflow(_) => "overflow",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error code=4 kind=usage: {first}");
            return 4;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error code={code} kind={}: {e}", kind(&e));
            code
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Check(a) => cmd_check(a),
    })
}

#[derive(Serialize)]
struct MethodInfo {
    spec: String,
    label: String,
}

#[derive(Serialize)]
struct Timing {
    postprocessing_seconds: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    schema_version: &'static str,
    method: MethodInfo,
    seed: u64,
    samples: usize,
    dim: usize,
    estimates: Vec<f64>,
    diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let method: MethodSpec = a.method.parse()?;
    let samples = read_samples(&a.samples, &a.grads)?;
    let f = IntegrandMatrix::new(read_matrix_csv(&a.integrands)?)?;
    if f.nrows() != samples.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand rows",
            expected: samples.len(),
            found: f.nrows(),
        });
    }
    let start = Instant::now();
    let est = method.apply(&samples, &f, a.seed)?;
    let elapsed = start.elapsed().as_secs_f64();

    let text = match a.format {
        Format::Json => to_json(&EstimateReport {
            schema_version: SCHEMA_VERSION,
            method: MethodInfo {
                spec: method.to_string(),
                label: est.method.clone(),
            },
            seed: a.seed,
            samples: samples.len(),
            dim: samples.dim(),
            estimates: est.values,
            diagnostics: est.diagnostics,
            timing: a.timing.then_some(Timing { postprocessing_seconds: elapsed }),
        })?,
        Format::Csv => {
            let mut s = String::from("integrand,method,estimate\n");
            for (t, v) in est.values.iter().enumerate() {
                s.push_str(&format!("{},{},{v}\n", t + 1, est.method));
            }
            s
        }
    };
    write_output(a.out.as_deref(), &text)
}

fn parse_step(s: &str) -> Result<StepSize> {
    if s == "auto" {
        return Ok(StepSize::Auto);
    }
    s.parse::<f64>()
        .map(StepSize::Fixed)
        .map_err(|_| Error::Parse(format!("step must be 'auto' or a number, got '{s}'")))
}

fn sampler_from(kind: SamplerKind, warmup: usize, step: &str) -> Result<Sampler> {
    Ok(match kind {
        SamplerKind::Iid => Sampler::Iid,
        SamplerKind::Mala => Sampler::Mala {
            warmup,
            step: parse_step(step)?,
        },
    })
}

#[derive(Serialize)]
struct Files {
    samples: String,
    grads: String,
    integrands: String,
}

#[derive(Serialize)]
struct Manifest {
    schema_version: &'static str,
    target: String,
    sampler: Sampler,
    seed: u64,
    samples: usize,
    dim: usize,
    integrand: String,
    integrand_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_size: Option<f64>,
    files: Files,
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let s = &a.sampling;
    let target: Target = parse_target(&s.target)?;
    let integrand: IntegrandSpec = s.integrand.parse()?;
    let sampler = sampler_from(s.sampler, s.warmup, &s.step)?;
    let (set, acceptance, step) = match sampler {
        Sampler::Iid => (sample_iid(&target, a.size, s.seed)?, None, None),
        Sampler::Mala { warmup, step } => {
            let c = mala_sample(&target, a.size, warmup, step, s.seed)?;
            (c.samples, Some(c.acceptance_rate), Some(c.step_size))
        }
    };
    let f = integrand.evaluate(&set)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    let names = integrand.names(target.dim())?;
    let coords: Vec<String> = (1..=target.dim()).map(|j| format!("theta{j}")).collect();
    let grad_names: Vec<String> = (1..=target.dim()).map(|j| format!("grad{j}")).collect();
    write_matrix_csv_file(&a.out.join("samples.csv"), set.thetas(), Some(&coords))?;
    write_matrix_csv_file(&a.out.join("grads.csv"), set.grads(), Some(&grad_names))?;
    write_matrix_csv_file(&a.out.join("integrands.csv"), f.values(), Some(&names))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        target: target.to_string(),
        sampler,
        seed: s.seed,
        samples: set.len(),
        dim: set.dim(),
        integrand: integrand.to_string(),
        integrand_names: names,
        acceptance_rate: acceptance,
        step_size: step,
        files: Files {
            samples: "samples.csv".into(),
            grads: "grads.csv".into(),
            integrands: "integrands.csv".into(),
        },
    };
    write_output(Some(&a.out.join("manifest.json")), &to_json(&manifest)?)
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    let cfg = BenchmarkConfig {
        targets: a.targets.iter().map(|t| parse_target(t)).collect::<Result<_>>()?,
        integrand: a.integrand.parse()?,
        methods: a.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?,
        sample_sizes: a.sizes.clone(),
        reps: a.reps,
        seed: a.seed,
        sampler: sampler_from(a.sampler, a.warmup, &a.step)?,
        golden_samples: a.golden_size,
    };
    let mut report = run_benchmark(&cfg)?;
    if !a.records {
        report.records.clear();
    }
    let text = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))?
        }
    };
    write_output(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct CheckColumn {
    monomial: String,
    #[serde(flatten)]
    diagnostic: ColumnDiagnostic,
}

#[derive(Serialize)]
struct CheckReport {
    schema_version: &'static str,
    samples: usize,
    dim: usize,
    order: u32,
    flagged: Vec<String>,
    columns: Vec<CheckColumn>,
}

fn cmd_check(a: CheckArgs) -> Result<()> {
    let samples = read_samples(&a.samples, &a.grads)?;
    let basis = enumerate_basis(samples.dim(), CHECK_ORDER)?;
    let design = build_design_matrix(&samples, &basis)?;
    let diags = check_zero_mean(&design)?;
    let columns: Vec<CheckColumn> = basis
        .indices()
        .iter()
        .zip(diags)
        .map(|(m, d)| CheckColumn {
            monomial: m.to_string(),
            diagnostic: d,
        })
        .collect();
    let flagged = columns.iter().filter(|c| !c.diagnostic.passes).map(|c| c.monomial.clone()).collect();
    write_output(
        a.out.as_deref(),
        &to_json(&CheckReport {
            schema_version: SCHEMA_VERSION,
            samples: samples.len(),
            dim: samples.dim(),
            order: CHECK_ORDER,
            flagged,
            columns,
        })?,
    )
}
