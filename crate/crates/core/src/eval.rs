//! Extrapolation metrics — root mean squared log error, average predictive
//! log-likelihood, and mean squared calibration error — plus the cutoff-sweep
//! harness that scores a prediction method over a curve dataset.
//!
//! Every method conditions on the same inputs for a given curve and cutoff:
//! the context prefix with its ys divided by the shared normalization scale
//! (the context maximum, when that exceeds 1) and the raw xs. Likelihood and
//! calibration are reported in that normalized y-space; point predictions are
//! scaled back up before the log-error, though the shared scale cancels
//! inside the log difference anyway.

use std::io::Write;

use rayon::prelude::*;

use crate::curve::{normalize_with_queries, split_at_fraction, Curve};
use crate::error::{Error, Result};
use crate::fit::{fit_bnsl, fit_family, mean_sq_log_error, predict, FamilyTag, FitParams};
use crate::mcmc::{eval_at, run_chain, McmcConfig};
use crate::pfn::{dist_log_prob, dist_median, predict_ppd, BinnedDistribution, PfnModel};
use crate::special::{log_sum_exp, normal_cdf, normal_log_pdf};

/// Number of calibration levels used by the harness.
pub const MSCE_LEVELS: usize = 10;

/// Floor applied to the context-mean baseline's standard deviation so a
/// constant context still yields a proper density.
pub const BASELINE_STD_FLOOR: f64 = 1e-3;

/// A one-dimensional predictive density in normalized y-space.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    /// Piecewise-uniform over bins (the transformer head). Out-of-support
    /// values are clamped into the edge bins, mirroring the training loss.
    Binned(BinnedDistribution),
    /// A single Gaussian (the context-mean baseline).
    Gaussian { mean: f64, std: f64 },
    /// An equal-weight Gaussian mixture (one component per posterior draw).
    /// `means` and `stds` must be nonempty and of equal length.
    Mixture { means: Vec<f64>, stds: Vec<f64> },
}

impl Predictive {
    pub fn log_density(&self, y: f64) -> f64 {
        match self {
            Predictive::Binned(d) => dist_log_prob(d, y),
            Predictive::Gaussian { mean, std } => normal_log_pdf(y, *mean, *std),
            Predictive::Mixture { means, stds } => {
                debug_assert!(!means.is_empty() && means.len() == stds.len());
                let terms: Vec<f64> = means
                    .iter()
                    .zip(stds)
                    .map(|(&m, &s)| normal_log_pdf(y, m, s))
                    .collect();
                log_sum_exp(&terms) - (means.len() as f64).ln()
            }
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Predictive::Binned(d) => binned_cdf(d, y),
            Predictive::Gaussian { mean, std } => normal_cdf((y - mean) / std),
            Predictive::Mixture { means, stds } => {
                debug_assert!(!means.is_empty() && means.len() == stds.len());
                let total: f64 = means
                    .iter()
                    .zip(stds)
                    .map(|(&m, &s)| normal_cdf((y - m) / s))
                    .sum();
                total / means.len() as f64
            }
        }
    }
}

/// CDF of a piecewise-uniform distribution: cumulative mass below y's bin
/// plus the linear share inside it. Inverse of [`crate::pfn::dist_quantile`]
/// wherever the bin mass is positive.
fn binned_cdf(d: &BinnedDistribution, y: f64) -> f64 {
    let nbins = d.nbins();
    if y <= d.edges[0] {
        return 0.0;
    }
    if y >= d.edges[nbins] {
        return 1.0;
    }
    let i = d.edges.partition_point(|&e| e <= y).clamp(1, nbins) - 1;
    let below: f64 = d.probs[..i].iter().sum();
    below + d.probs[i] * (y - d.edges[i]) / (d.edges[i + 1] - d.edges[i])
}

/// Root mean squared log error, with both sides clamped to at least
/// [`crate::fit::LOG_CLAMP`] before the logs. Symmetric in its arguments.
pub fn rmsle(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::invalid(format!(
            "log-error needs matching nonempty inputs, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(mean_sq_log_error(preds, targets).sqrt())
}

/// Mean of the per-target log predictive densities. A −∞ density (e.g. a
/// zero-mass bin) propagates to the mean.
pub fn avg_ll(preds: &[Predictive], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::invalid(format!(
            "likelihood needs matching nonempty inputs, got {} predictives and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|(d, &y)| d.log_density(y))
        .sum();
    Ok(total / targets.len() as f64)
}

/// Mean squared calibration error over levels p_j = j/J (j = 1..J) with unit
/// weights: mean of (p_j − p̂_j)² where p̂_j is the fraction of targets whose
/// predictive CDF lies strictly below p_j.
///
/// The comparison is strict so that a predictor with all of its mass below
/// every target — CDF exactly 1 everywhere — scores the full penalty
/// (J+1)(2J+1)/(6J²) instead of dodging the j = J level. For calibrated
/// predictors the CDF values are continuous and the choice is immaterial.
pub fn msce(preds: &[Predictive], targets: &[f64], j_levels: usize) -> Result<f64> {
    if j_levels < 2 {
        return Err(Error::invalid(format!(
            "calibration needs at least 2 levels, got {j_levels}"
        )));
    }
    if preds.len() != targets.len() {
        return Err(Error::invalid(format!(
            "calibration needs matching inputs, got {} predictives and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::invalid(format!(
            "calibration needs at least 2 targets, got {}",
            targets.len()
        )));
    }
    let cdfs: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(d, &y)| d.cdf(y))
        .collect();
    let n = targets.len() as f64;
    let mut acc = 0.0;
    for j in 1..=j_levels {
        let p = j as f64 / j_levels as f64;
        let p_hat = cdfs.iter().filter(|&&c| c < p).count() as f64 / n;
        acc += (p - p_hat) * (p - p_hat);
    }
    Ok(acc / j_levels as f64)
}

/// The context-mean baseline: a Gaussian at the context mean with the
/// context (population) standard deviation, floored at
/// [`BASELINE_STD_FLOOR`].
pub fn context_mean_gaussian(context_ys: &[f64]) -> Result<Predictive> {
    if context_ys.is_empty() {
        return Err(Error::invalid("baseline needs a nonempty context"));
    }
    let n = context_ys.len() as f64;
    let mean = context_ys.iter().sum::<f64>() / n;
    let var = context_ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>() / n;
    Ok(Predictive::Gaussian {
        mean,
        std: var.sqrt().max(BASELINE_STD_FLOOR),
    })
}

/// Which predictor the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// The trained in-context transformer.
    Pfn,
    /// Point fit of one family by multi-start Nelder-Mead.
    Fit(FamilyTag),
    /// Ensemble-sampler posterior predictive for one family.
    Mcmc(FamilyTag),
}

impl Method {
    /// Parses "pfn", a family tag ("m1".."m4", "bnsl") for a point fit, or
    /// the same tag prefixed "mcmc-" for the sampler.
    pub fn parse(s: &str) -> Result<Method> {
        if s == "pfn" {
            return Ok(Method::Pfn);
        }
        match s.strip_prefix("mcmc-") {
            Some(rest) => FamilyTag::parse(rest).map(Method::Mcmc),
            None => FamilyTag::parse(s).map(Method::Fit),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Pfn => "pfn".to_string(),
            Method::Fit(t) => t.as_str().to_string(),
            Method::Mcmc(t) => format!("mcmc-{}", t.as_str()),
        }
    }
}

/// Shared inputs for the harness. `model` is required only by the
/// transformer method; the fitter settings serve both the point-fit methods
/// and the sampler's break-count selection.
#[derive(Debug, Clone)]
pub struct EvalResources<'a> {
    pub model: Option<&'a PfnModel>,
    pub restarts: usize,
    pub mcmc: McmcConfig,
    pub max_breaks: usize,
}

impl Default for EvalResources<'_> {
    fn default() -> Self {
        EvalResources {
            model: None,
            restarts: 20,
            mcmc: McmcConfig::default(),
            max_breaks: 3,
        }
    }
}

/// One method's scores on one curve at one cutoff fraction. `ll` and `msce`
/// are absent for point-fit methods (no predictive density) and `msce` also
/// when fewer than 2 target points remain.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveScore {
    pub curve_name: String,
    pub fraction: f64,
    pub rmsle: Option<f64>,
    pub ll: Option<f64>,
    pub msce: Option<f64>,
    pub failed: bool,
}

/// Aggregate scores at one cutoff fraction. Aggregates are arithmetic means
/// over the curves that produced the metric; failed curves are excluded and
/// counted in `n_failed`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub curves: Vec<CurveScore>,
    pub mean_rmsle: Option<f64>,
    pub mean_ll: Option<f64>,
    pub mean_msce: Option<f64>,
    pub n_failed: usize,
}

/// Derives a per-curve seed from the sweep seed and the curve's index.
pub fn curve_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Scores one method on one curve at one context fraction, splitting by the
/// standard floor-clamped rule (context = max(1, floor(fraction · len))
/// points). A method that cannot run on the resulting split (for example a
/// fit with fewer context points than parameters) is an error, which the
/// sweep records as a per-curve failure.
pub fn evaluate_curve(
    method: Method,
    curve: &Curve,
    fraction: f64,
    resources: &EvalResources,
    seed: u64,
) -> Result<CurveScore> {
    let split = split_at_fraction(curve, fraction)?;
    let (_, _, record) = normalize_with_queries(&split.context, &split.target.xs)?;
    let y_scale = record.y_scale;
    let tgt_norm: Vec<f64> = split.target.ys.iter().map(|&y| y / y_scale).collect();
    let scaled_context = || {
        Curve::piece(
            split.context.name.clone(),
            split.context.xs.clone(),
            split.context.ys.iter().map(|&y| y / y_scale).collect(),
        )
    };

    let want_msce = tgt_norm.len() >= 2;
    let (point_norm, ll, msce_val) = match method {
        Method::Pfn => {
            let model = resources
                .model
                .ok_or_else(|| Error::invalid("method 'pfn' needs a model"))?;
            let (dists, _) = predict_ppd(model, &split.context, &split.target.xs)?;
            let point: Vec<f64> = dists.iter().map(dist_median).collect();
            let preds: Vec<Predictive> = dists.into_iter().map(Predictive::Binned).collect();
            let ll = avg_ll(&preds, &tgt_norm)?;
            let cal = want_msce.then(|| msce(&preds, &tgt_norm, MSCE_LEVELS)).transpose()?;
            (point, Some(ll), cal)
        }
        Method::Fit(tag) => {
            let ctx = scaled_context()?;
            let fit = match tag {
                FamilyTag::Bnsl => fit_bnsl(&ctx, resources.max_breaks, resources.restarts, seed)?,
                t => fit_family(&ctx, t, resources.restarts, seed)?,
            };
            (predict(&fit, &split.target.xs)?, None, None)
        }
        Method::Mcmc(tag) => {
            let ctx = scaled_context()?;
            let n_breaks = match tag {
                FamilyTag::Bnsl => {
                    let fit = fit_bnsl(&ctx, resources.max_breaks, resources.restarts, seed)?;
                    match &fit.params {
                        FitParams::Bnsl(p) => p.breaks.len(),
                        _ => 0,
                    }
                }
                _ => 0,
            };
            let config = McmcConfig { seed, ..resources.mcmc.clone() };
            let samples = run_chain(tag, n_breaks, &ctx, &config)?;
            let xs_norm: Vec<f64> =
                split.target.xs.iter().map(|&x| x * samples.x_scale).collect();
            let k = samples.draws.len();
            let sigma_idx = samples.dim - 1;
            let mut per_point: Vec<Vec<f64>> = vec![Vec::with_capacity(k); xs_norm.len()];
            let mut stds = Vec::with_capacity(k);
            for v in &samples.draws {
                let f = eval_at(samples.family, samples.n_breaks, v, &xs_norm);
                for (store, val) in per_point.iter_mut().zip(f) {
                    store.push(val);
                }
                stds.push(v[sigma_idx].exp());
            }
            // Point summary: posterior-predictive mean.
            let point: Vec<f64> = per_point
                .iter()
                .map(|vals| vals.iter().sum::<f64>() / k as f64)
                .collect();
            let preds: Vec<Predictive> = per_point
                .into_iter()
                .map(|means| Predictive::Mixture { means, stds: stds.clone() })
                .collect();
            let ll = avg_ll(&preds, &tgt_norm)?;
            let cal = want_msce.then(|| msce(&preds, &tgt_norm, MSCE_LEVELS)).transpose()?;
            (point, Some(ll), cal)
        }
    };

    let point_raw: Vec<f64> = point_norm.iter().map(|&p| p * y_scale).collect();
    let r = rmsle(&point_raw, &split.target.ys)?;
    Ok(CurveScore {
        curve_name: curve.name.clone(),
        fraction,
        rmsle: Some(r),
        ll,
        msce: msce_val,
        failed: false,
    })
}

fn mean_over(scores: &[CurveScore], field: impl Fn(&CurveScore) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = scores
        .iter()
        .filter(|s| !s.failed)
        .filter_map(&field)
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Runs one method over the dataset at each cutoff fraction. Per-curve
/// failures (curve too short, fitter or sampler error) are recorded on the
/// curve's row and excluded from the aggregates. Deterministic for a given
/// seed: each curve's randomness is seeded from the sweep seed and the
/// curve's index, independent of scheduling.
pub fn cutoff_sweep(
    method: Method,
    dataset: &[Curve],
    fractions: &[f64],
    seed: u64,
    resources: &EvalResources,
) -> Result<Vec<EvalReport>> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if fractions.is_empty() {
        return Err(Error::invalid("no cutoff fractions given"));
    }
    if let Some(&bad) = fractions.iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
        return Err(Error::invalid(format!("fraction {bad} outside (0, 1)")));
    }
    if method == Method::Pfn && resources.model.is_none() {
        return Err(Error::invalid("method 'pfn' needs a model"));
    }

    let mut reports = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let curves: Vec<CurveScore> = dataset
            .par_iter()
            .enumerate()
            .map(|(i, curve)| {
                evaluate_curve(method, curve, fraction, resources, curve_seed(seed, i))
                    .unwrap_or(CurveScore {
                        curve_name: curve.name.clone(),
                        fraction,
                        rmsle: None,
                        ll: None,
                        msce: None,
                        failed: true,
                    })
            })
            .collect();
        let n_failed = curves.iter().filter(|s| s.failed).count();
        reports.push(EvalReport {
            method: method.label(),
            fraction,
            seed,
            mean_rmsle: mean_over(&curves, |s| s.rmsle),
            mean_ll: mean_over(&curves, |s| s.ll),
            mean_msce: mean_over(&curves, |s| s.msce),
            n_failed,
            curves,
        });
    }
    Ok(reports)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every per-curve row of the reports as CSV. Optional metrics print
/// as empty cells; floats print in shortest round-trip form, so identical
/// runs produce identical bytes.
pub fn write_report_csv(reports: &[EvalReport], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "curve_name,fraction,rmsle,ll,msce,failed")?;
    for report in reports {
        for c in &report.curves {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&c.curve_name),
                c.fraction,
                csv_opt(c.rmsle),
                csv_opt(c.ll),
                csv_opt(c.msce),
                c.failed
            )?;
        }
    }
    Ok(())
}
