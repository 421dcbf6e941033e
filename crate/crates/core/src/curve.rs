//! Canonical curve representation, normalization to the model's input
//! ranges, and context/target splitting.
//!
//! A [`Curve`] is a monotone-in-x sequence of (x, y) observations of some
//! scaled quantity (dataset size, parameter count, ...) against a
//! performance metric. Model input expects x in `[0.01, 1]` on a log grid
//! and y roughly in `[0, 1.2]`; [`normalize`] maps arbitrary curves into
//! that range and [`NormalizationRecord`] stores the exact inverse.

use crate::error::{Error, Result};

const LN_X_LO: f64 = -4.605170185988091; // ln(0.01)

/// A named scaling curve: strictly increasing positive `xs`, finite `ys`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Curve {
    /// Builds a validated curve. Dataset-level curves need at least two
    /// points; see [`Curve::piece`] for split fragments.
    pub fn new(name: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let c = Self::piece(name, xs, ys)?;
        if c.len() < 2 {
            return Err(Error::invalid(format!(
                "curve '{}' has {} point(s); at least 2 required",
                c.name,
                c.len()
            )));
        }
        Ok(c)
    }

    /// Builds a curve fragment (context/target half of a split), which may
    /// hold a single point but must satisfy every other curve invariant.
    pub fn piece(name: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "curve '{}': x has {} entries but y has {}",
                name,
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::invalid(format!("curve '{name}': empty")));
        }
        for (i, &x) in xs.iter().enumerate() {
            if !x.is_finite() || x <= 0.0 {
                return Err(Error::invalid(format!(
                    "curve '{name}': x[{i}] = {x} is not a positive finite number"
                )));
            }
            if i > 0 && xs[i - 1] >= x {
                return Err(Error::invalid(format!(
                    "curve '{name}': x must be strictly increasing, but x[{}] = {} >= x[{i}] = {x}",
                    i - 1,
                    xs[i - 1]
                )));
            }
        }
        if let Some((i, &y)) = ys.iter().enumerate().find(|(_, y)| !y.is_finite()) {
            return Err(Error::invalid(format!(
                "curve '{name}': y[{i}] = {y} is not finite"
            )));
        }
        Ok(Curve { name, xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// The sub-curve over `range` (same name).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Curve {
        Curve {
            name: self.name.clone(),
            xs: self.xs[range.clone()].to_vec(),
            ys: self.ys[range].to_vec(),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }
}

/// Inverse map of a [`normalize`] call.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationRecord {
    /// ln of the original smallest x.
    pub x_log_min: f64,
    /// ln of the original largest x.
    pub x_log_max: f64,
    /// Divisor applied to ys (1.0 when no rescaling was applied).
    pub y_scale: f64,
}

/// An extrapolation split: `context` holds the first `cutoff_index` points,
/// `target` the rest, so every context x lies below every target x.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCurve {
    pub context: Curve,
    pub target: Curve,
    pub cutoff_index: usize,
}

/// Maps a curve into model input ranges.
///
/// xs are mapped affinely in log-space so that the smallest x lands on 0.01
/// and the largest on 1.0; the map uses the full curve domain because target
/// x positions are known at evaluation time. ys are divided by the largest
/// y among the first `context_len` points, but only when that maximum
/// exceeds 1 — so already-small metrics pass through unchanged and target ys
/// may still exceed 1 after normalization.
pub fn normalize(curve: &Curve, context_len: usize) -> Result<(Curve, NormalizationRecord)> {
    if context_len == 0 || context_len > curve.len() {
        return Err(Error::invalid(format!(
            "context_len {} outside 1..={}",
            context_len,
            curve.len()
        )));
    }
    let x_log_min = curve.xs[0].ln();
    let x_log_max = curve.xs[curve.len() - 1].ln();
    if !(x_log_max > x_log_min) {
        return Err(Error::invalid(format!(
            "curve '{}': degenerate x domain (all xs equal)",
            curve.name
        )));
    }
    let ctx_max = curve.ys[..context_len]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let y_scale = if ctx_max > 1.0 {
        if ctx_max <= 0.0 {
            return Err(Error::invalid(format!(
                "curve '{}': non-positive context maximum {ctx_max} cannot be used as a y scale",
                curve.name
            )));
        }
        ctx_max
    } else {
        1.0
    };
    let span = x_log_max - x_log_min;
    let xs = curve
        .xs
        .iter()
        .map(|&x| {
            let t = (x.ln() - x_log_min) / span;
            ((1.0 - t) * LN_X_LO).exp()
        })
        .collect();
    let ys = curve.ys.iter().map(|&y| y / y_scale).collect();
    Ok((
        Curve {
            name: curve.name.clone(),
            xs,
            ys,
        },
        NormalizationRecord {
            x_log_min,
            x_log_max,
            y_scale,
        },
    ))
}

/// Exact inverse of [`normalize`] up to floating-point round-off.
pub fn denormalize(curve: &Curve, record: &NormalizationRecord) -> Curve {
    let span = record.x_log_max - record.x_log_min;
    let xs = curve
        .xs
        .iter()
        .map(|&xn| {
            let t = 1.0 - xn.ln() / LN_X_LO;
            (record.x_log_min + t * span).exp()
        })
        .collect();
    let ys = curve.ys.iter().map(|&y| y * record.y_scale).collect();
    Curve {
        name: curve.name.clone(),
        xs,
        ys,
    }
}

/// Maps a single raw x through the same log-affine map as [`normalize`].
pub fn normalize_x(x: f64, record: &NormalizationRecord) -> f64 {
    let t = (x.ln() - record.x_log_min) / (record.x_log_max - record.x_log_min);
    ((1.0 - t) * LN_X_LO).exp()
}

/// Normalization for a context curve plus standalone query positions, which
/// may interleave with the context on the x-axis. The log-affine x-map spans
/// the union of both point sets; the y scale comes from the context alone
/// (its maximum, when above 1). Returns the normalized context, the
/// normalized query xs, and the record for inverting point summaries.
pub fn normalize_with_queries(
    context: &Curve,
    query_xs: &[f64],
) -> Result<(Curve, Vec<f64>, NormalizationRecord)> {
    if let Some(&bad) = context
        .xs
        .iter()
        .chain(query_xs)
        .find(|&&x| !(x > 0.0) || !x.is_finite())
    {
        return Err(Error::invalid(format!(
            "curve '{}': non-positive or non-finite x {bad}",
            context.name
        )));
    }
    let all = context.xs.iter().chain(query_xs);
    let x_log_min = all.clone().cloned().fold(f64::INFINITY, f64::min).ln();
    let x_log_max = all.cloned().fold(f64::NEG_INFINITY, f64::max).ln();
    if !(x_log_max > x_log_min) {
        return Err(Error::invalid(format!(
            "curve '{}': degenerate x domain (all xs equal)",
            context.name
        )));
    }
    let ctx_max = context.ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_scale = if ctx_max > 1.0 { ctx_max } else { 1.0 };
    let record = NormalizationRecord {
        x_log_min,
        x_log_max,
        y_scale,
    };
    let ctx = Curve {
        name: context.name.clone(),
        xs: context.xs.iter().map(|&x| normalize_x(x, &record)).collect(),
        ys: context.ys.iter().map(|&y| y / y_scale).collect(),
    };
    let q = query_xs.iter().map(|&x| normalize_x(x, &record)).collect();
    Ok((ctx, q, record))
}

/// Splits at `cutoff = max(1, floor(fraction * len))`, clamping so the
/// context keeps at least one point.
pub fn split_at_fraction(curve: &Curve, fraction: f64) -> Result<SplitCurve> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let cutoff = ((fraction * curve.len() as f64).floor() as usize).max(1);
    split_at_index(curve, cutoff)
}

/// Splits so the context holds the first `cutoff` points.
pub fn split_at_index(curve: &Curve, cutoff: usize) -> Result<SplitCurve> {
    if cutoff == 0 {
        return Err(Error::invalid("split leaves an empty context"));
    }
    if cutoff >= curve.len() {
        return Err(Error::invalid(format!(
            "cutoff {} leaves an empty target on a {}-point curve",
            cutoff,
            curve.len()
        )));
    }
    Ok(SplitCurve {
        context: curve.slice(0..cutoff),
        target: curve.slice(cutoff..curve.len()),
        cutoff_index: cutoff,
    })
}
