//! End-to-end runs of the `steincv` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_steincv"));
    c.env_remove("STEINCV_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let text = std::fs::read_to_string(&path).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:#?}");
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Five draws from N(3, 4) with their exact score.
fn normal_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let thetas = [3.7, 1.2, 5.9, 2.4, 3.3];
    let mut samples = String::from("theta1\n");
    let mut grads = String::from("grad1\n");
    for t in thetas {
        samples.push_str(&format!("{t}\n"));
        grads.push_str(&format!("{}\n", -(t - 3.0) / 4.0));
    }
    (
        write(dir, "samples.csv", &samples),
        write(dir, "grads.csv", &grads),
        write(dir, "f.csv", &samples),
    )
}

fn generate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("gen");
    let mut args = vec!["generate", "--target", "gaussian:d=2", "--S", "200", "--seed", "11", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn zv_order_one_recovers_gaussian_mean() {
    let dir = TempDir::new().unwrap();
    let (x, g, f) = normal_fixture(dir.path());
    let text = ok(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "zv:q=1"]);
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_valid("estimate.schema.json", &doc);
    assert!((doc["estimates"][0].as_f64().unwrap() - 3.0).abs() < 1e-10);
    assert_eq!(doc["method"]["label"], "ZV1");
    assert_eq!(doc["diagnostics"]["columns"], 1);
    assert!(doc.get("timing").is_none());
}

#[test]
fn mc_is_the_column_mean() {
    let dir = TempDir::new().unwrap();
    let (x, g, _) = normal_fixture(dir.path());
    let f = write(dir.path(), "f2.csv", "1,10\n2,20\n3,30\n4,40\n5,50\n");
    let text = ok(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "mc"]);
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["estimates"], serde_json::json!([3.0, 30.0]));
    assert_eq!(doc["diagnostics"]["columns"], 0);
}

#[test]
fn csv_and_timing_outputs() {
    let dir = TempDir::new().unwrap();
    let (x, g, f) = normal_fixture(dir.path());
    let base = ["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "zv:q=1"];
    let csv = ok(&[&base[..], &["--format", "csv"]].concat());
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("integrand,method,estimate"));
    assert!(lines.next().unwrap().starts_with("1,ZV1,"));

    let doc: Value = serde_json::from_str(&ok(&[&base[..], &["--timing"]].concat())).unwrap();
    assert_valid("estimate.schema.json", &doc);
    assert!(doc["timing"]["postprocessing_seconds"].as_f64().unwrap() >= 0.0);

    let out = dir.path().join("est.json");
    assert_eq!(ok(&[&base[..], &["--out", s(&out)]].concat()), "");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_valid("estimate.schema.json", &doc);
}

#[test]
fn ensemble_output_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let gen = generate(dir.path(), &["--integrand", "theta2"]);
    let args = |threads: &'static str| {
        ok(&[
            "--threads",
            threads,
            "estimate",
            "--samples",
            s(&gen.join("samples.csv")),
            "--grads",
            s(&gen.join("grads.csv")),
            "--integrands",
            s(&gen.join("integrands.csv")),
            "--method",
            "sa:k=25",
            "--seed",
            "7",
        ])
    };
    let first = args("1");
    assert_eq!(first, args("1"));
    assert_eq!(first, args("4"));
    let doc: Value = serde_json::from_str(&first).unwrap();
    assert_valid("estimate.schema.json", &doc);
    assert_eq!(doc["method"]["label"], "SA25");
    assert_eq!(doc["diagnostics"]["learners"], 25);
    let weights = doc["diagnostics"]["weights"].as_array().unwrap();
    assert_eq!(weights.len(), 25);
    assert!(weights.iter().all(|w| w.as_array().unwrap().len() == 2));
}

#[test]
fn generate_is_reproducible_and_documented() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let mala = ["--sampler", "mala", "--integrand", "theta:1*2"];
    let ga = generate(a.path(), &mala);
    let gb = generate(b.path(), &mala);
    for f in ["samples.csv", "grads.csv", "integrands.csv", "manifest.json"] {
        assert_eq!(std::fs::read(ga.join(f)).unwrap(), std::fs::read(gb.join(f)).unwrap(), "{f}");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(ga.join("manifest.json")).unwrap()).unwrap();
    assert_valid("manifest.schema.json", &manifest);
    assert_eq!(manifest["sampler"]["kind"], "mala");
    assert_eq!(manifest["sampler"]["warmup"], 1000);
    assert_eq!(manifest["samples"], 200);
    assert_eq!(manifest["integrand_names"], serde_json::json!(["theta1*theta2"]));
    let acc = manifest["acceptance_rate"].as_f64().unwrap();
    assert!(acc > 0.3 && acc < 0.9, "acceptance {acc}");

    let header = std::fs::read_to_string(ga.join("samples.csv")).unwrap();
    assert!(header.starts_with("theta1,theta2\n"));
    assert_eq!(header.lines().count(), 201);
}

#[test]
fn generated_files_round_trip_through_estimate() {
    let dir = TempDir::new().unwrap();
    let gen = generate(dir.path(), &[]);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(gen.join("manifest.json")).unwrap()).unwrap();
    assert_valid("manifest.schema.json", &manifest);
    assert!(manifest.get("acceptance_rate").is_none());
    let text = ok(&[
        "estimate",
        "--samples",
        s(&gen.join("samples.csv")),
        "--grads",
        s(&gen.join("grads.csv")),
        "--integrands",
        s(&gen.join("integrands.csv")),
        "--method",
        "zv:q=2",
    ]);
    let doc: Value = serde_json::from_str(&text).unwrap();
    for e in doc["estimates"].as_array().unwrap() {
        assert!(e.as_f64().unwrap().abs() < 1e-8, "{e}");
    }
}

#[test]
fn check_accepts_correct_gradients_and_flags_flipped_ones() {
    let dir = TempDir::new().unwrap();
    let big = dir.path().join("big");
    ok(&["generate", "--target", "gaussian:d=2", "--S", "2000", "--seed", "5", "--out", s(&big)]);
    let samples = big.join("samples.csv");
    let grads = big.join("grads.csv");
    let doc: Value = serde_json::from_str(&ok(&["check", "--samples", s(&samples), "--grads", s(&grads)])).unwrap();
    assert_valid("check.schema.json", &doc);
    assert_eq!(doc["flagged"], serde_json::json!([]));
    assert_eq!(doc["columns"].as_array().unwrap().len(), 5);

    let flipped: String = std::fs::read_to_string(&grads)
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let v: Vec<String> = l.split(',').map(|x| (-x.parse::<f64>().unwrap()).to_string()).collect();
                format!("{}\n", v.join(","))
            }
        })
        .collect();
    let bad = write(dir.path(), "bad.csv", &flipped);
    let doc: Value = serde_json::from_str(&ok(&["check", "--samples", s(&samples), "--grads", s(&bad)])).unwrap();
    assert_eq!(doc["flagged"], serde_json::json!(["(2,0)", "(0,2)"]));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (x, g, f) = normal_fixture(dir.path());
    let code = |args: &[&str]| run(args).status.code().unwrap();

    // Too few samples for the zero-mean check.
    assert_eq!(code(&["check", "--samples", s(&x), "--grads", s(&g)]), 2);
    // Gradient columns disagree with samples.
    let wide = write(dir.path(), "wide.csv", "1,2\n1,2\n1,2\n1,2\n1,2\n");
    assert_eq!(code(&["estimate", "--samples", s(&x), "--grads", s(&wide), "--integrands", s(&f), "--method", "mc"]), 2);
    // Integrand rows disagree with samples.
    let short = write(dir.path(), "short.csv", "1\n2\n");
    assert_eq!(code(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&short), "--method", "mc"]), 2);
    // Order 4 needs more than five samples in one dimension.
    assert_eq!(code(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "zv:q=4"]), 3);
    // Malformed method spec, malformed CSV, unknown flag.
    assert_eq!(code(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "zv:q=x"]), 4);
    let junk = write(dir.path(), "junk.csv", "1\n2\nthree\n4\n5\n");
    assert_eq!(code(&["estimate", "--samples", s(&junk), "--grads", s(&g), "--integrands", s(&f), "--method", "mc"]), 4);
    assert_eq!(code(&["estimate", "--bogus"]), 4);
    // Missing file.
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["estimate", "--samples", s(&missing), "--grads", s(&g), "--integrands", s(&f), "--method", "mc"]), 1);

    let out = run(&["estimate", "--samples", s(&x), "--grads", s(&g), "--integrands", s(&f), "--method", "zv:q=4"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error code=3 kind=unidentifiable: "), "{err}");
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn benchmark_reports_validate_and_rank_methods() {
    let text = ok(&[
        "benchmark",
        "--target",
        "gaussian:d=2",
        "--method",
        "zv:q=2",
        "--S",
        "30,60",
        "--reps",
        "5",
        "--sampler",
        "iid",
        "--records",
    ]);
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_valid("benchmark.schema.json", &doc);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(doc["records"].as_array().unwrap().len(), 20);
    for row in rows {
        assert_eq!(row["truth_source"], "analytic");
        match row["method"].as_str().unwrap() {
            "MC" => assert_eq!(row["se"]["mean"], 1.0),
            "ZV2" => {
                assert_eq!(row["se"]["mean"], "inf");
                assert_eq!(row["se"]["infinite"], true);
            }
            m => panic!("unexpected method {m}"),
        }
    }
}

#[test]
fn benchmark_failures_and_golden_truth() {
    // d=2 with S=20 cannot identify order 5; every rep fails and the row carries nulls.
    let text = ok(&[
        "benchmark",
        "--target",
        "banana:d=2,b=0.1,scale=1",
        "--method",
        "zv:q=5",
        "--S",
        "20",
        "--reps",
        "3",
        "--sampler",
        "iid",
        "--integrand",
        "theta:1*1*2",
        "--golden-S",
        "2000",
    ]);
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_valid("benchmark.schema.json", &doc);
    assert!(doc["records"].as_array().unwrap().is_empty());
    let zv = &doc["rows"][1];
    assert_eq!(zv["reps_failed"], 3);
    assert!(zv["se"]["mean"].is_null());
    assert!(zv["truth_source"].as_str().unwrap().starts_with("golden"));
}

#[test]
fn benchmark_csv() {
    let text = ok(&[
        "benchmark", "--target", "gaussian:d=1", "--method", "mc", "--S", "10", "--reps", "2", "--sampler", "iid", "--format", "csv",
    ]);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("target,samples,method,"));
    assert!(lines.next().unwrap().starts_with("gaussian:d=1,10,MC,analytic,1,"));
    assert_eq!(lines.next(), None);
}
