//! Synthetic scaling-curve prior: power-law-like segments stitched into
//! Down / Down-Down / Down-Up-Down shapes, with per-segment re-normalization,
//! y-translation for continuity, observation noise, and rejection of
//! negative or non-finite curves.
//!
//! Segment parameter distributions (natural-log space unless noted):
//!
//! | segment  | draw                                                  |
//! |----------|-------------------------------------------------------|
//! | M3-like  | ln a ~ N(-1, 0.5); ln b ~ N(-2, 1); ln d ~ N(0, 1)    |
//! | M4-like  | ln a ~ N(-1, 0.5); ln b ~ N(0, 0.5); ln α ~ N(0, 0.5) |
//! | BetaCDF  | β ~ U(0.5, 1); ln γ ~ N(0, 0.1)                       |
//! | Norm     | y_max ~ U(0.2, 1.2); y_min ~ U(0, y_max)              |
//! | Noise    | ln σ ~ N(-4, 1), one σ per curve                      |
//!
//! The exponent draws are magnitudes: each M3/M4 segment is evaluated with
//! b = exp(draw) > 0, which orients it decreasing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::{Curve, SplitCurve};
use crate::error::{Error, Result};
use crate::families::m4_solve_ln;
use crate::special::incomplete_beta_reg;

const LN_X_LO: f64 = -4.605170185988091; // ln(0.01)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Down,
    DownDown,
    DownUpDown,
}

impl Shape {
    pub fn as_str(&self) -> &'static str {
        match self {
            Shape::Down => "down",
            Shape::DownDown => "down-down",
            Shape::DownUpDown => "down-up-down",
        }
    }
}

/// Family tag plus drawn parameters for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// y ∝ a (x^-1 + d)^b on the segment-local grid, decreasing.
    M3 { ln_a: f64, ln_b: f64, ln_d: f64 },
    /// The saturating family with c = 0, y0 = 1 on the local grid, decreasing.
    M4 { ln_a: f64, ln_b: f64, ln_alpha: f64 },
    /// y = I_t(β, β)^γ on t in [0, 1], increasing.
    BetaCdf { beta: f64, ln_gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    /// Norm target range: the rescaled segment is mapped onto [y_min, y_max].
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub shape: Shape,
    /// Sorted interior break positions in (0.01, 1); empty for Down.
    pub break_xs: Vec<f64>,
    pub segments: Vec<SegmentSpec>,
    pub noise_sigma: f64,
    pub n_points: usize,
    /// Context length: points [0, cutoff) are context, the rest target.
    pub cutoff_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// P(Down), P(DownDown), P(DownUpDown); must sum to 1.
    pub shape_probs: [f64; 3],
    pub n_points_min: usize,
    pub n_points_max: usize,
    pub noise_ln_sigma_mean: f64,
    pub noise_ln_sigma_std: f64,
    /// When set, every curve uses exactly this noise sigma (0 disables noise).
    pub noise_sigma_override: Option<f64>,
    pub rng_seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            shape_probs: [0.4, 0.4, 0.2],
            n_points_min: 50,
            n_points_max: 500,
            noise_ln_sigma_mean: -4.0,
            noise_ln_sigma_std: 1.0,
            noise_sigma_override: None,
            rng_seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.shape_probs.iter().sum();
        if self.shape_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "shape probabilities {:?} must lie in [0,1] and sum to 1",
                self.shape_probs
            )));
        }
        if self.n_points_min < 8 || self.n_points_max < self.n_points_min {
            return Err(Error::invalid(format!(
                "points range [{}, {}] invalid (need at least 8 ascending)",
                self.n_points_min, self.n_points_max
            )));
        }
        if let Some(s) = self.noise_sigma_override {
            if !(s >= 0.0) {
                return Err(Error::invalid("noise override must be >= 0"));
            }
        }
        Ok(())
    }
}

/// A sampled curve with its generating spec and the per-point segment
/// partition (`segment_starts[k]` = first point index of segment k).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample {
    pub curve: Curve,
    pub spec: CurveSpec,
    pub segment_starts: Vec<usize>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentFamily {
    M3Seg,
    M4Seg,
    BetaCdfSeg,
}

/// Draws one segment's parameters and Norm range.
pub fn sample_segment<R: Rng + ?Sized>(family: SegmentFamily, rng: &mut R) -> SegmentSpec {
    let kind = match family {
        SegmentFamily::M3Seg => SegmentKind::M3 {
            ln_a: normal(rng, -1.0, 0.5),
            ln_b: normal(rng, -2.0, 1.0),
            ln_d: normal(rng, 0.0, 1.0),
        },
        SegmentFamily::M4Seg => SegmentKind::M4 {
            ln_a: normal(rng, -1.0, 0.5),
            ln_b: normal(rng, 0.0, 0.5),
            ln_alpha: normal(rng, 0.0, 0.5),
        },
        SegmentFamily::BetaCdfSeg => SegmentKind::BetaCdf {
            beta: uniform(rng, 0.5, 1.0),
            ln_gamma: normal(rng, 0.0, 0.1),
        },
    };
    let y_max = uniform(rng, 0.2, 1.2);
    let y_min = uniform(rng, 0.0, y_max);
    SegmentSpec { kind, y_min, y_max }
}

/// Evaluates a segment on sorted local coordinates `ts` in [0, 1]: the raw
/// family shape, min-max rescaled over the evaluated points to [0, 1], then
/// mapped onto the segment's Norm range [y_min, y_max].
pub fn eval_segment(seg: &SegmentSpec, ts: &[f64]) -> Result<Vec<f64>> {
    if ts.len() < 2 {
        return Err(Error::invalid("segment needs at least 2 points"));
    }
    let mut ys = Vec::with_capacity(ts.len());
    match seg.kind {
        SegmentKind::M3 { ln_a, ln_b, ln_d } => {
            let b = ln_b.exp();
            let d = ln_d.exp();
            for &t in ts {
                // Local x on the log grid [0.01, 1].
                let x = ((1.0 - t) * LN_X_LO).exp();
                ys.push((ln_a + b * (x.recip() + d).ln()).exp());
            }
        }
        SegmentKind::M4 { ln_a, ln_b, ln_alpha } => {
            let b = ln_b.exp();
            let alpha = ln_alpha.exp();
            for &t in ts {
                let x = ((1.0 - t) * LN_X_LO).exp();
                ys.push(m4_solve_ln(ln_a, b, alpha, 0.0, 1.0, x)?);
            }
        }
        SegmentKind::BetaCdf { beta, ln_gamma } => {
            let gamma = ln_gamma.exp();
            for &t in ts {
                ys.push(incomplete_beta_reg(beta, beta, t).powf(gamma));
            }
        }
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::numeric("segment produced non-finite values"));
    }
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::numeric("segment is flat; cannot min-max rescale"));
    }
    let span = seg.y_max - seg.y_min;
    for y in &mut ys {
        *y = seg.y_min + span * (*y - lo) / (hi - lo);
    }
    Ok(ys)
}

/// First point index of each segment under the given breaks.
pub fn segment_starts(break_xs: &[f64], xs: &[f64]) -> Vec<usize> {
    let mut starts = vec![0usize];
    for &b in break_xs {
        starts.push(xs.partition_point(|&x| x <= b));
    }
    starts
}

const MAX_GRID_ATTEMPTS: usize = 100;
const MAX_CURVE_ATTEMPTS: usize = 100;

/// Draws the x grid (sorted log-uniform on [0.01, 1]), redrawing until every
/// segment holds at least 5 points, then evaluates the segments, translates
/// each to start where the previous ended, and adds observation noise.
/// A curve with any negative or non-finite y is a rejection (error), left to
/// the caller to resample.
pub fn assemble_curve<R: Rng + ?Sized>(spec: &CurveSpec, rng: &mut R) -> Result<PriorSample> {
    let nseg = spec.segments.len();
    let mut xs = Vec::new();
    let mut starts = Vec::new();
    let mut ok = false;
    for _ in 0..MAX_GRID_ATTEMPTS {
        xs.clear();
        xs.extend((0..spec.n_points).map(|_| (uniform(rng, LN_X_LO, 0.0)).exp()));
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            continue;
        }
        starts = segment_starts(&spec.break_xs, &xs);
        let enough = (0..nseg).all(|k| {
            let end = if k + 1 < nseg { starts[k + 1] } else { xs.len() };
            end.saturating_sub(starts[k]) >= 5
        });
        if enough {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::numeric(
            "could not place at least 5 points in every segment",
        ));
    }

    let mut ys = Vec::with_capacity(spec.n_points);
    let mut prev_last: Option<f64> = None;
    for k in 0..nseg {
        let end = if k + 1 < nseg { starts[k + 1] } else { xs.len() };
        let seg_xs = &xs[starts[k]..end];
        // Segment-local coordinate: position of x within the segment's
        // domain [lo, hi] on the log axis.
        let lo = if k == 0 { LN_X_LO } else { spec.break_xs[k - 1].ln() };
        let hi = if k < spec.break_xs.len() { spec.break_xs[k].ln() } else { 0.0 };
        let ts: Vec<f64> = seg_xs.iter().map(|&x| (x.ln() - lo) / (hi - lo)).collect();
        let mut seg_ys = eval_segment(&spec.segments[k], &ts)?;
        if let Some(prev) = prev_last {
            let shift = prev - seg_ys[0];
            for y in &mut seg_ys {
                *y += shift;
            }
        }
        prev_last = Some(*seg_ys.last().unwrap());
        ys.extend_from_slice(&seg_ys);
    }

    let sigma = spec.noise_sigma;
    if sigma > 0.0 {
        for y in &mut ys {
            *y += normal(rng, 0.0, sigma);
        }
    }
    if ys.iter().any(|y| !y.is_finite() || *y < 0.0) {
        return Err(Error::numeric("curve rejected (negative or non-finite y)"));
    }
    Ok(PriorSample {
        curve: Curve::new("prior", xs, ys)?,
        spec: spec.clone(),
        segment_starts: starts,
    })
}

/// Draws the per-curve observation noise scale sigma = exp(N(mean, std)),
/// unless the config overrides it.
pub fn sample_noise_sigma<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> f64 {
    match config.noise_sigma_override {
        Some(s) => s,
        None => normal(rng, config.noise_ln_sigma_mean, config.noise_ln_sigma_std).exp(),
    }
}

fn draw_shape<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> Shape {
    let u = rng.random::<f64>();
    if u < config.shape_probs[0] {
        Shape::Down
    } else if u < config.shape_probs[0] + config.shape_probs[1] {
        Shape::DownDown
    } else {
        Shape::DownUpDown
    }
}

fn draw_down_family<R: Rng + ?Sized>(rng: &mut R) -> SegmentFamily {
    if rng.random_range(0..2u32) == 0 {
        SegmentFamily::M3Seg
    } else {
        SegmentFamily::M4Seg
    }
}

/// Draws a full curve spec (without cutoff, which depends on the realized
/// point grid and is set by [`sample_prior`]).
fn draw_spec<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> CurveSpec {
    let shape = draw_shape(config, rng);
    let n_breaks = match shape {
        Shape::Down => 0,
        Shape::DownDown => rng.random_range(1..=3usize),
        Shape::DownUpDown => 2,
    };
    let mut break_xs: Vec<f64> = (0..n_breaks)
        .map(|_| uniform(rng, LN_X_LO, 0.0).exp())
        .collect();
    break_xs.sort_by(f64::total_cmp);
    let segments: Vec<SegmentSpec> = (0..n_breaks + 1)
        .map(|k| {
            let family = match shape {
                Shape::DownUpDown if k == 1 => SegmentFamily::BetaCdfSeg,
                _ => draw_down_family(rng),
            };
            sample_segment(family, rng)
        })
        .collect();
    let ln_n = uniform(
        rng,
        (config.n_points_min as f64).ln(),
        (config.n_points_max as f64).ln(),
    );
    let n_points = (ln_n.exp().round() as usize).clamp(config.n_points_min, config.n_points_max);
    let noise_sigma = sample_noise_sigma(config, rng);
    CurveSpec {
        shape,
        break_xs,
        segments,
        noise_sigma,
        n_points,
        cutoff_index: 0,
    }
}

/// Draws the cutoff uniformly over the indices the shape permits, clamped so
/// the context keeps at least 3 points and the target at least 1.
///
/// The permitted indices are those whose first target point (the point at
/// the cutoff index itself) lies in the allowed segments: anywhere for Down,
/// the final segment for Down-Down, and segments 2-3 for Down-Up-Down.
fn draw_cutoff<R: Rng + ?Sized>(sample: &PriorSample, rng: &mut R) -> usize {
    let n = sample.curve.len();
    let lo_rule = match sample.spec.shape {
        Shape::Down => 0,
        Shape::DownDown => *sample.segment_starts.last().unwrap(),
        Shape::DownUpDown => sample.segment_starts[1],
    };
    let lo = lo_rule.max(3).min(n - 1);
    rng.random_range(lo..=n - 1)
}

/// Samples one curve from the prior: shape, spec, grid, values, noise, and
/// cutoff, resampling everything on rejection (at most 100 attempts).
pub fn sample_prior<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> Result<PriorSample> {
    config.validate()?;
    for _ in 0..MAX_CURVE_ATTEMPTS {
        let spec = draw_spec(config, rng);
        match assemble_curve(&spec, rng) {
            Ok(mut sample) => {
                sample.spec.cutoff_index = draw_cutoff(&sample, rng);
                return Ok(sample);
            }
            Err(Error::Numeric(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::numeric(format!(
        "prior rejected {MAX_CURVE_ATTEMPTS} consecutive curves; check configuration"
    )))
}

/// Convenience wrapper returning the curve and its cutoff index.
pub fn sample_training_example<R: Rng + ?Sized>(
    config: &PriorConfig,
    rng: &mut R,
) -> Result<(Curve, usize)> {
    let sample = sample_prior(config, rng)?;
    let cutoff = sample.spec.cutoff_index;
    Ok((sample.curve, cutoff))
}

/// Stateful sampler seeded from the config, for streaming draws.
pub struct PriorSampler {
    config: PriorConfig,
    rng: ChaCha8Rng,
}

impl PriorSampler {
    pub fn new(config: PriorConfig) -> Result<Self> {
        config.validate()?;
        let rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.rng_seed);
        Ok(PriorSampler { config, rng })
    }

    pub fn sample(&mut self) -> Result<PriorSample> {
        sample_prior(&self.config, &mut self.rng)
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }
}

/// An interpolation-style split: some target points are revealed into the
/// context, so context and target x-ranges may interleave.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSplit {
    pub context: Curve,
    pub target: Curve,
}

/// Moves `floor(u * |target|)` randomly chosen target points into the
/// context, keeping both sides sorted by x.
pub fn interpolation_split_with_fraction<R: Rng + ?Sized>(
    split: &SplitCurve,
    u: f64,
    rng: &mut R,
) -> MixedSplit {
    let n_target = split.target.len();
    let k = (u * n_target as f64).floor() as usize;
    let mut chosen = rand::seq::index::sample(rng, n_target, k.min(n_target)).into_vec();
    chosen.sort_unstable();
    let mut ctx_xs = split.context.xs.clone();
    let mut ctx_ys = split.context.ys.clone();
    let mut tgt_xs = Vec::with_capacity(n_target - chosen.len());
    let mut tgt_ys = Vec::with_capacity(n_target - chosen.len());
    let mut next = chosen.iter().peekable();
    for i in 0..n_target {
        if next.peek() == Some(&&i) {
            next.next();
            ctx_xs.push(split.target.xs[i]);
            ctx_ys.push(split.target.ys[i]);
        } else {
            tgt_xs.push(split.target.xs[i]);
            tgt_ys.push(split.target.ys[i]);
        }
    }
    // Context stays sorted: appended points all lie above the old context.
    MixedSplit {
        context: Curve { name: split.context.name.clone(), xs: ctx_xs, ys: ctx_ys },
        target: Curve { name: split.target.name.clone(), xs: tgt_xs, ys: tgt_ys },
    }
}

/// Draws u ~ U(0, 0.5) and applies [`interpolation_split_with_fraction`].
pub fn make_interpolation_split<R: Rng + ?Sized>(split: &SplitCurve, rng: &mut R) -> MixedSplit {
    let u = uniform(rng, 0.0, 0.5);
    interpolation_split_with_fraction(split, u, rng)
}
