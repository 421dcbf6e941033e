//! End-to-end tests that drive the installed binary the way a user would:
//! real subprocesses, real files, and byte-level checks on every artifact.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nslx")
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn nslx(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn nslx")
}

fn nslx_ok(args: &[&str]) -> Output {
    let out = nslx(args);
    assert!(
        out.status.success(),
        "nslx {:?} failed\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// One synthetic curve, shared across tests that only need some input.
fn one_curve() -> &'static Path {
    static FILE: OnceLock<PathBuf> = OnceLock::new();
    FILE.get_or_init(|| {
        let path = scratch().join("one.jsonl");
        nslx_ok(&["prior", "sample", "--n", "1", "--seed", "3", "--out", path.to_str().unwrap()]);
        path
    })
}

const TINY_TOML: &str = "\
seed = 7

[model]
nlayers = 1
nheads = 2
nhidden = 16
nbins = 10
y_support = [0.0, 1.5]
batch_size = 2
total_steps = 10
warmup = 2
peak_lr = 3e-4
autoregressive_context = true
interpolation_variant = true
";

/// A deliberately small checkpoint, trained once through the binary itself.
fn tiny_model() -> &'static Path {
    static CKPT: OnceLock<PathBuf> = OnceLock::new();
    CKPT.get_or_init(|| {
        let dir = scratch();
        let cfg = dir.join("tiny_train.toml");
        std::fs::write(&cfg, TINY_TOML).unwrap();
        let ckpt = dir.join("tiny.ckpt");
        nslx_ok(&["train", "--config", cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
        ckpt
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

/// Runs the same invocation twice into different files and asserts the
/// artifacts agree byte for byte.
fn assert_reproducible(args: &[&str], stem: &str) -> Vec<u8> {
    let dir = scratch();
    let a = dir.join(format!("{stem}-a"));
    let b = dir.join(format!("{stem}-b"));
    let with_out = |p: &Path| {
        let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        v.push("--out".into());
        v.push(p.to_str().unwrap().into());
        v
    };
    let args_a = with_out(&a);
    nslx_ok(&args_a.iter().map(String::as_str).collect::<Vec<_>>());
    let args_b = with_out(&b);
    nslx_ok(&args_b.iter().map(String::as_str).collect::<Vec<_>>());
    let bytes = read(&a);
    assert_eq!(bytes, read(&b), "two same-seed runs of {args:?} differ");
    bytes
}

#[test]
fn help_lists_every_subcommand() {
    let out = nslx(&["--help"]);
    assert_eq!(exit_code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["prior", "fit", "mcmc", "train", "predict", "evaluate", "active", "plot"] {
        assert!(text.contains(sub), "--help is missing '{sub}':\n{text}");
    }
    assert_eq!(exit_code(&nslx(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one_and_name_the_problem() {
    let out = nslx(&["frobnicate"]);
    assert_eq!(exit_code(&out), 1);

    let out = nslx(&["fit", "--family", "m2", "--curve", "x.jsonl"]);
    assert_eq!(exit_code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("--out"), "stderr should name the missing flag:\n{err}");
}

#[test]
fn sampled_priors_are_reproducible_and_annotated() {
    let bytes = assert_reproducible(&["prior", "sample", "--n", "5", "--seed", "11"], "prior");
    let lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 5);
    for (i, line) in lines.iter().enumerate() {
        let rec: serde_json::Value = serde_json::from_slice(line).unwrap();
        assert_eq!(rec["name"], format!("prior-11-{i:05}"));
        let n = rec["x"].as_array().unwrap().len();
        assert_eq!(rec["y"].as_array().unwrap().len(), n);
        let cutoff = rec["cutoff"].as_u64().unwrap() as usize;
        assert!(cutoff >= 1 && cutoff < n, "cutoff {cutoff} outside curve of {n}");
        let shape = rec["shape"].as_str().unwrap();
        assert!(["down", "down-down", "down-up-down"].contains(&shape), "{shape}");
    }

    // `--out -` must emit exactly the file bytes on standard output.
    let out = nslx_ok(&["prior", "sample", "--n", "5", "--seed", "11", "--out", "-"]);
    assert_eq!(out.stdout, bytes);
}

#[test]
fn fit_artifact_round_trips() {
    let curve = one_curve().to_str().unwrap().to_string();
    let bytes = assert_reproducible(
        &["fit", "--family", "m2", "--curve", &curve, "--seed", "4"],
        "fit",
    );
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["command"], "fit");
    assert_eq!(v["seed"], 4);
    assert_eq!(v["fit"]["family"], "m2");
    assert_eq!(v["fit"]["params"]["family"], "m2");
    let n = v["target_x"].as_array().unwrap().len();
    assert_eq!(v["prediction"].as_array().unwrap().len(), n);
    assert!(v["fit"]["objective"].as_f64().unwrap().is_finite());
}

#[test]
fn sampler_artifact_reports_the_chain() {
    let curve = one_curve().to_str().unwrap().to_string();
    let args = [
        "mcmc", "--family", "m1", "--curve", &curve, "--nwalkers", "8", "--nsamples", "40",
        "--burn-in", "10", "--seed", "5",
    ];
    let bytes = assert_reproducible(&args, "mcmc");
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["command"], "mcmc");
    // Draws = walkers x (iterations - burn-in) / thin.
    assert_eq!(v["n_draws"], 8 * (40 - 10));
    let accept = v["acceptance_rate"].as_f64().unwrap();
    assert!(accept > 0.0 && accept < 1.0);
    let n = v["target_x"].as_array().unwrap().len();
    for key in ["mean", "q05", "q50", "q95", "ll"] {
        assert_eq!(v[key].as_array().unwrap().len(), n, "{key}");
    }
    // Quantile bands in the artifact must be ordered.
    for i in 0..n {
        let lo = v["q05"][i].as_f64().unwrap();
        let hi = v["q95"][i].as_f64().unwrap();
        assert!(lo <= hi, "q05 {lo} above q95 {hi} at point {i}");
    }
}

#[test]
fn malformed_dataset_is_a_usage_error() {
    let path = scratch().join("broken.jsonl");
    std::fs::write(&path, b"{\"name\": \"x\", \"x\": [1.0], \"y\": \n").unwrap();
    let out = nslx(&["fit", "--family", "m1", "--curve", path.to_str().unwrap(), "--out", "-"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn divergent_training_is_a_numeric_error() {
    let dir = scratch();
    let cfg = dir.join("diverge.toml");
    let text = TINY_TOML
        .replace("peak_lr = 3e-4", "peak_lr = 1e300")
        .replace("warmup = 2", "warmup = 0")
        .replace("total_steps = 10", "total_steps = 2");
    std::fs::write(&cfg, text).unwrap();
    let ckpt = dir.join("diverge.ckpt");
    let out = nslx(&["train", "--config", cfg.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2, "numeric failures must exit 2");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn checkpoint_to_stdout_is_rejected() {
    let cfg = scratch().join("reject.toml");
    std::fs::write(&cfg, TINY_TOML).unwrap();
    let out = nslx(&["train", "--config", cfg.to_str().unwrap(), "--out", "-"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn evaluation_isolates_per_curve_failures() {
    let dir = scratch();
    let dataset = dir.join("mixed.jsonl");
    let mut body = read(one_curve());
    body.extend_from_slice(
        b"{\"name\":\"stub\",\"x\":[1,2,3,4,5,6],\"y\":[1.0,0.85,0.75,0.7,0.67,0.65]}\n",
    );
    std::fs::write(&dataset, body).unwrap();

    let args = [
        "evaluate", "--method", "m2", "--dataset", dataset.to_str().unwrap(), "--cutoffs",
        "0.1:0.5:0.4", "--restarts", "3",
    ];
    let bytes = assert_reproducible(&args, "eval");
    let text = String::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# nslx evaluate method=m2 seed=0"));
    assert_eq!(lines.next().unwrap(), "curve_name,fraction,rmsle,ll,msce,failed");
    // The 6-point stub cannot constrain a 3-parameter family from a
    // 1-point prefix: it fails at 0.1 but succeeds at 0.5, and the failure
    // never aborts the run.
    assert!(text.contains("stub,0.1,,,,true"), "{text}");
    assert!(text.contains("stub,0.5,"), "{text}");
    assert!(!text.contains("stub,0.5,,,,true"), "{text}");
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn predictions_carry_ordered_quantile_bands() {
    let model = tiny_model().to_str().unwrap().to_string();
    let curve = one_curve().to_str().unwrap().to_string();
    let bytes = assert_reproducible(&["predict", "--model", &model, "--curve", &curve], "pred");
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["command"], "predict");
    assert_eq!(v["model_config"]["nlayers"], 1);
    assert_eq!(v["quantiles"].as_array().unwrap().len(), 3);
    let n = v["target_x"].as_array().unwrap().len();
    let bands = v["predictions"].as_array().unwrap();
    assert_eq!(bands.len(), 3);
    for i in 0..n {
        let q05 = bands[0][i].as_f64().unwrap();
        let q50 = bands[1][i].as_f64().unwrap();
        let q95 = bands[2][i].as_f64().unwrap();
        assert!(q05 <= q50 && q50 <= q95, "bands out of order at {i}");
        assert!(q05.is_finite() && q95.is_finite());
    }

    // A custom quantile list changes the band count to match.
    let two = scratch().join("pred-two.json");
    nslx_ok(&[
        "predict", "--model", &model, "--curve", &curve, "--quantiles", "0.25,0.75", "--out",
        two.to_str().unwrap(),
    ]);
    assert_eq!(json(&two)["predictions"].as_array().unwrap().len(), 2);
}

#[test]
fn acquisition_log_is_deterministic() {
    let model = tiny_model().to_str().unwrap().to_string();
    let curve = one_curve().to_str().unwrap().to_string();
    let bytes = assert_reproducible(
        &["active", "--model", &model, "--curve", &curve, "--steps", "4"],
        "active",
    );
    let text = String::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# nslx active"));
    assert_eq!(lines.next().unwrap(), "step,acquired_x,pool_mean_ll");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "one row per acquisition step");
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[1].parse::<f64>().unwrap() > 0.0);
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn fan_chart_is_well_formed_svg() {
    let model = tiny_model().to_str().unwrap().to_string();
    let curve = one_curve().to_str().unwrap().to_string();
    let bytes = assert_reproducible(&["plot", "--model", &model, "--curve", &curve], "plot");
    let text = String::from_utf8(bytes).unwrap();
    let mut reader = quick_xml::Reader::from_str(&text);
    loop {
        match reader.read_event() {
            Ok(quick_xml::events::Event::Eof) => break,
            Ok(_) => {}
            Err(e) => panic!("plot emitted malformed XML: {e}"),
        }
    }
    assert!(text.contains("<polygon"), "missing uncertainty band");
    assert!(text.contains("<polyline"), "missing median line");
    assert!(text.contains("prior-3-00000"), "missing curve name label");
}

#[test]
fn thread_cap_env_var_is_validated() {
    let run = |threads: &str| {
        Command::new(bin())
            .env("NSLX_THREADS", threads)
            .args(["prior", "sample", "--n", "1", "--seed", "0", "--out", "-"])
            .output()
            .unwrap()
    };
    let out = run("zero point five");
    assert_eq!(exit_code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("NSLX_THREADS"), "{err}");
    assert_eq!(exit_code(&run("0")), 1);

    let ok = run("1");
    assert_eq!(exit_code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
}
