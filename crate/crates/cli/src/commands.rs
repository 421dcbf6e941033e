//! One function per subcommand. Every artifact is built as bytes first and
//! then written, so `--out -` (standard output) and files behave
//! identically and byte-reproducibility is testable. Artifacts embed the
//! seed and the options that produced them; none contain timestamps.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use nslx_core::active::run_bal;
use nslx_core::curve::{normalize_with_queries, split_at_fraction, Curve};
use nslx_core::dataset::{load_dataset, write_records, CurveRecord};
use nslx_core::error::{Error, Result};
use nslx_core::eval::{cutoff_sweep, write_report_csv, EvalResources, Method};
use nslx_core::fit::{fit_bnsl, fit_family, predict, FamilyTag, FitResult};
use nslx_core::mcmc::{ppd_stats, run_chain, McmcConfig};
use nslx_core::pfn::ckpt::{load_checkpoint, save_checkpoint};
use nslx_core::pfn::{dist_quantile, predict_ppd, prior_digest, train, ModelConfig, PfnModel};
use nslx_core::prior::{PriorConfig, PriorSampler};

use crate::args::{
    ActiveArgs, EvaluateArgs, FitArgs, McmcArgs, PlotArgs, PredictArgs, PriorSampleArgs,
    TrainArgs,
};
use crate::plot::render_fan;

/// Writes artifact bytes to a path, or to standard output for `-`.
fn write_output(path: &str, bytes: &[u8]) -> Result<()> {
    if path == "-" {
        std::io::stdout().write_all(bytes)?;
        std::io::stdout().flush()?;
        Ok(())
    } else {
        std::fs::write(path, bytes)
            .map_err(|e| Error::invalid(format!("cannot write {path}: {e}")))
    }
}

/// Loads a JSONL file that must hold exactly one curve.
fn load_one_curve(path: &str) -> Result<Curve> {
    let mut curves = load_dataset(Path::new(path))?;
    match curves.len() {
        1 => Ok(curves.pop().expect("length checked")),
        0 => Err(Error::invalid(format!("{path} holds no curves"))),
        n => Err(Error::invalid(format!("{path} holds {n} curves; expected exactly 1"))),
    }
}

fn json_artifact<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::numeric(format!("serialize artifact: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn prior_sample(args: &PriorSampleArgs) -> Result<()> {
    let config = PriorConfig { rng_seed: args.seed, ..PriorConfig::default() };
    let mut sampler = PriorSampler::new(config)?;
    let mut records = Vec::with_capacity(args.n);
    for i in 0..args.n {
        let sample = sampler.sample()?;
        records.push(CurveRecord {
            // The name carries the seed so the artifact is self-describing.
            name: format!("prior-{}-{i:05}", args.seed),
            x: sample.curve.xs,
            y: sample.curve.ys,
            cutoff: Some(sample.spec.cutoff_index),
            shape: Some(sample.spec.shape.as_str().to_string()),
        });
    }
    let mut bytes = Vec::new();
    write_records(&mut bytes, &records)?;
    write_output(&args.out, &bytes)
}

#[derive(Serialize)]
struct FitArtifact<'a> {
    command: &'static str,
    seed: u64,
    curve: &'a str,
    cutoff_fraction: f64,
    cutoff_index: usize,
    restarts: usize,
    max_breaks: usize,
    fit: &'a FitResult,
    target_x: &'a [f64],
    prediction: &'a [f64],
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let family = FamilyTag::parse(&args.family)?;
    let curve = load_one_curve(&args.curve)?;
    let split = split_at_fraction(&curve, args.cutoff)?;
    let result = match family {
        FamilyTag::Bnsl => fit_bnsl(&split.context, args.max_breaks, args.restarts, args.seed)?,
        f => fit_family(&split.context, f, args.restarts, args.seed)?,
    };
    let prediction = predict(&result, &split.target.xs)?;
    let artifact = FitArtifact {
        command: "fit",
        seed: args.seed,
        curve: &curve.name,
        cutoff_fraction: args.cutoff,
        cutoff_index: split.cutoff_index,
        restarts: args.restarts,
        max_breaks: args.max_breaks,
        fit: &result,
        target_x: &split.target.xs,
        prediction: &prediction,
    };
    write_output(&args.out, &json_artifact(&artifact)?)
}

#[derive(Serialize)]
struct McmcArtifact<'a> {
    command: &'static str,
    seed: u64,
    curve: &'a str,
    family: &'a str,
    n_breaks: usize,
    cutoff_fraction: f64,
    cutoff_index: usize,
    config: &'a McmcConfig,
    /// Divisor applied to ys before sampling; outputs below are scaled back.
    y_scale: f64,
    x_scale: f64,
    acceptance_rate: f64,
    n_draws: usize,
    target_x: &'a [f64],
    mean: Vec<f64>,
    q05: Vec<f64>,
    q50: Vec<f64>,
    q95: Vec<f64>,
    /// Per-point log predictive density, in the normalized y-space.
    ll: &'a [f64],
}

pub fn mcmc(args: &McmcArgs) -> Result<()> {
    let family = FamilyTag::parse(&args.family)?;
    let curve = load_one_curve(&args.curve)?;
    let split = split_at_fraction(&curve, args.cutoff)?;
    let (_, _, record) = normalize_with_queries(&split.context, &split.target.xs)?;
    let y_scale = record.y_scale;
    let scaled = Curve::piece(
        split.context.name.clone(),
        split.context.xs.clone(),
        split.context.ys.iter().map(|&y| y / y_scale).collect(),
    )?;
    let config = McmcConfig {
        nwalkers: args.nwalkers,
        nsamples: args.nsamples,
        burn_in: args.burn_in,
        thin: args.thin,
        stretch_a: args.stretch_a,
        seed: args.seed,
    };
    let samples = run_chain(family, args.n_breaks, &scaled, &config)?;
    let tgt_norm: Vec<f64> = split.target.ys.iter().map(|&y| y / y_scale).collect();
    let stats = ppd_stats(&samples, &split.target.xs, Some(&tgt_norm))?;
    let rescale = |v: &[f64]| v.iter().map(|&y| y * y_scale).collect::<Vec<f64>>();
    let artifact = McmcArtifact {
        command: "mcmc",
        seed: args.seed,
        curve: &curve.name,
        family: family.as_str(),
        n_breaks: args.n_breaks,
        cutoff_fraction: args.cutoff,
        cutoff_index: split.cutoff_index,
        config: &config,
        y_scale,
        x_scale: samples.x_scale,
        acceptance_rate: samples.acceptance_rate,
        n_draws: samples.draws.len(),
        target_x: &split.target.xs,
        mean: rescale(&stats.mean),
        q05: rescale(&stats.q05),
        q50: rescale(&stats.q50),
        q95: rescale(&stats.q95),
        ll: stats.ll.as_deref().expect("targets were provided"),
    };
    write_output(&args.out, &json_artifact(&artifact)?)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    if args.out == "-" {
        return Err(Error::invalid("checkpoint output must be a file path, not -"));
    }
    let file = crate::config::load_train_file(Path::new(&args.config))?;
    let log_path = match &args.log {
        Some(p) => p.clone(),
        None => Path::new(&args.out)
            .with_extension("csv")
            .to_string_lossy()
            .into_owned(),
    };
    let mut log = Vec::new();
    writeln!(
        log,
        "# nslx train seed={} prior={}",
        file.seed,
        prior_digest(&file.prior)
    )?;
    let model = train(&file.prior, &file.model, file.seed, Some(&mut log))?;
    save_checkpoint(&model, Path::new(&args.out))?;
    write_output(&log_path, &log)?;
    eprintln!("checkpoint written to {}; training log to {}", args.out, log_path);
    Ok(())
}

#[derive(Serialize)]
struct PredictArtifact<'a> {
    command: &'static str,
    curve: &'a str,
    cutoff_fraction: f64,
    cutoff_index: usize,
    model_config: &'a ModelConfig,
    prior_digest: &'a str,
    /// Divisor applied to context ys; predictions below are scaled back.
    y_scale: f64,
    quantiles: &'a [f64],
    target_x: &'a [f64],
    /// One array per requested quantile, in the curve's original units.
    predictions: Vec<Vec<f64>>,
}

fn quantile_bands(
    model: &PfnModel,
    context: &Curve,
    target_xs: &[f64],
    quantiles: &[f64],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let (dists, record) = predict_ppd(model, context, target_xs)?;
    let bands = quantiles
        .iter()
        .map(|&q| dists.iter().map(|d| dist_quantile(d, q) * record.y_scale).collect())
        .collect();
    Ok((bands, record.y_scale))
}

pub fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(Path::new(&args.model))?;
    let curve = load_one_curve(&args.curve)?;
    let split = split_at_fraction(&curve, args.cutoff)?;
    let quantiles = parse_quantiles(&args.quantiles)?;
    let (predictions, y_scale) =
        quantile_bands(&model, &split.context, &split.target.xs, &quantiles)?;
    let artifact = PredictArtifact {
        command: "predict",
        curve: &curve.name,
        cutoff_fraction: args.cutoff,
        cutoff_index: split.cutoff_index,
        model_config: &model.config,
        prior_digest: &model.prior_digest,
        y_scale,
        quantiles: &quantiles,
        target_x: &split.target.xs,
        predictions,
    };
    write_output(&args.out, &json_artifact(&artifact)?)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let dataset = load_dataset(Path::new(&args.dataset))?;
    let fractions = parse_cutoffs(&args.cutoffs)?;
    let model = match (&args.model, method) {
        (Some(path), _) => Some(load_checkpoint(Path::new(path))?),
        (None, Method::Pfn) => {
            return Err(Error::invalid("method 'pfn' needs --model <checkpoint>"));
        }
        (None, _) => None,
    };
    let resources = EvalResources {
        model: model.as_ref(),
        restarts: args.restarts,
        max_breaks: args.max_breaks,
        mcmc: McmcConfig {
            nwalkers: args.nwalkers,
            nsamples: args.nsamples,
            burn_in: args.burn_in,
            thin: args.thin,
            stretch_a: args.stretch_a,
            seed: args.seed,
        },
    };
    let reports = cutoff_sweep(method, &dataset, &fractions, args.seed, &resources)?;
    let total_failed: usize = reports.iter().map(|r| r.n_failed).sum();
    let mut bytes = Vec::new();
    writeln!(
        bytes,
        "# nslx evaluate method={} seed={} cutoffs={} restarts={} max_breaks={}",
        method.label(),
        args.seed,
        args.cutoffs,
        args.restarts,
        args.max_breaks
    )?;
    write_report_csv(&reports, &mut bytes)?;
    write_output(&args.out, &bytes)?;
    if total_failed > 0 {
        eprintln!("{total_failed} curve evaluation(s) failed; see the failed column");
    }
    Ok(())
}

pub fn active(args: &ActiveArgs) -> Result<()> {
    let model = load_checkpoint(Path::new(&args.model))?;
    let curve = load_one_curve(&args.curve)?;
    let state = run_bal(&model, &curve, args.steps)?;
    let mut bytes = Vec::new();
    writeln!(
        bytes,
        "# nslx active curve={} steps={} model={}",
        curve.name, args.steps, model.prior_digest
    )?;
    writeln!(bytes, "step,acquired_x,pool_mean_ll")?;
    for (i, (&idx, &ll)) in state.acquired.iter().zip(&state.trajectory).enumerate() {
        writeln!(bytes, "{},{},{}", i + 1, curve.xs[idx], ll)?;
    }
    write_output(&args.out, &bytes)
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let model = load_checkpoint(Path::new(&args.model))?;
    let curve = load_one_curve(&args.curve)?;
    let split = split_at_fraction(&curve, args.cutoff)?;
    let (bands, _) = quantile_bands(
        &model,
        &split.context,
        &split.target.xs,
        &[0.05, 0.5, 0.95],
    )?;
    let meta = format!(
        "nslx plot curve={} cutoff={} model={}",
        curve.name, args.cutoff, model.prior_digest
    );
    let svg = render_fan(&curve, split.cutoff_index, &bands[1], &bands[0], &bands[2], &meta)?;
    write_output(&args.out, svg.as_bytes())
}

/// Parses either a single fraction or an inclusive `start:end:step` range,
/// snapping each value to 9 decimals so printed fractions stay readable.
pub fn parse_cutoffs(s: &str) -> Result<Vec<f64>> {
    let parse_one = |tok: &str| {
        tok.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad cutoff fraction '{tok}'")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let fractions = match parts.as_slice() {
        [one] => vec![parse_one(one)?],
        [start, end, step] => {
            let (start, end, step) = (parse_one(start)?, parse_one(end)?, parse_one(step)?);
            if !(step > 0.0) {
                return Err(Error::invalid(format!("cutoff step {step} must be positive")));
            }
            let mut out = Vec::new();
            let mut k = 0u32;
            loop {
                let v = start + f64::from(k) * step;
                if v > end + 1e-9 {
                    break;
                }
                out.push((v * 1e9).round() / 1e9);
                k += 1;
            }
            out
        }
        _ => {
            return Err(Error::invalid(format!(
                "cutoffs '{s}' must be a fraction or start:end:step"
            )));
        }
    };
    if fractions.is_empty() {
        return Err(Error::invalid(format!("cutoffs '{s}' produce no fractions")));
    }
    if let Some(&bad) = fractions.iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
        return Err(Error::invalid(format!("cutoff fraction {bad} outside (0, 1)")));
    }
    Ok(fractions)
}

pub fn parse_quantiles(s: &str) -> Result<Vec<f64>> {
    let qs: Vec<f64> = s
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad quantile '{tok}'")))
        })
        .collect::<Result<_>>()?;
    if qs.is_empty() || qs.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::invalid(format!("quantiles '{s}' must lie strictly in (0, 1)")));
    }
    Ok(qs)
}
