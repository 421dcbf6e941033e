//! Maximum-likelihood point fits of the scaling families via multi-start
//! Nelder-Mead simplex descent on mean squared log-error, plus validation
//! based break-count selection for the broken power law.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::families::{
    eval_bnsl, eval_m1, eval_m2, eval_m3, m4_solve_ln, BnslBreak, ParamsBNSL, ParamsM1, ParamsM2,
    ParamsM3, ParamsM4,
};

pub const LOG_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyTag {
    M1,
    M2,
    M3,
    M4,
    Bnsl,
}

impl FamilyTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyTag::M1 => "m1",
            FamilyTag::M2 => "m2",
            FamilyTag::M3 => "m3",
            FamilyTag::M4 => "m4",
            FamilyTag::Bnsl => "bnsl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m1" => Ok(FamilyTag::M1),
            "m2" => Ok(FamilyTag::M2),
            "m3" => Ok(FamilyTag::M3),
            "m4" => Ok(FamilyTag::M4),
            "bnsl" => Ok(FamilyTag::Bnsl),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected m1|m2|m3|m4|bnsl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FitParams {
    M1(ParamsM1),
    M2(ParamsM2),
    M3(ParamsM3),
    M4(ParamsM4),
    Bnsl(ParamsBNSL),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: FamilyTag,
    pub params: FitParams,
    /// Mean squared log-error over the fitted context.
    pub objective: f64,
    pub n_restarts_used: usize,
}

/// Mean of (ln pred - ln y)^2 with both sides clamped to at least 1e-8.
pub fn mean_sq_log_error(preds: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(preds.len(), ys.len());
    let mut acc = 0.0;
    for (&p, &y) in preds.iter().zip(ys) {
        if !p.is_finite() {
            return f64::INFINITY;
        }
        let d = p.max(LOG_CLAMP).ln() - y.max(LOG_CLAMP).ln();
        acc += d * d;
    }
    acc / preds.len() as f64
}

/// Number of free parameters for a family at a given break count.
fn n_free(family: FamilyTag, n_breaks: usize) -> usize {
    match family {
        FamilyTag::M1 => 2,
        FamilyTag::M2 | FamilyTag::M3 => 3,
        FamilyTag::M4 => 5,
        FamilyTag::Bnsl => 3 + 3 * n_breaks,
    }
}

/// Decodes an optimizer coordinate vector into family parameters.
///
/// Coordinates live in log space except the break slope deltas:
/// M1 (ln a, ln b); M2 (ln a, ln b, ln c); M3 (ln a, ln b, ln d);
/// M4 (ln a, ln b, ln alpha, ln c, ln(y0-c));
/// BNSL (ln a, ln b, ln c, then per break ln e, ln s, delta_b).
fn decode(family: FamilyTag, v: &[f64]) -> FitParams {
    match family {
        FamilyTag::M1 => FitParams::M1(ParamsM1 { a: v[0].exp(), b: v[1].exp() }),
        FamilyTag::M2 => FitParams::M2(ParamsM2 { a: v[0].exp(), b: v[1].exp(), c: v[2].exp() }),
        FamilyTag::M3 => FitParams::M3(ParamsM3 { a: v[0].exp(), b: v[1].exp(), d: v[2].exp() }),
        FamilyTag::M4 => {
            let c = v[3].exp();
            FitParams::M4(ParamsM4 {
                a: v[0].exp(),
                b: v[1].exp(),
                alpha: v[2].exp(),
                c,
                y0: c + v[4].exp(),
            })
        }
        FamilyTag::Bnsl => {
            let breaks = v[3..]
                .chunks_exact(3)
                .map(|w| BnslBreak { e: w[0].exp(), s: w[1].exp(), delta_b: w[2] })
                .collect();
            FitParams::Bnsl(ParamsBNSL { a: v[0].exp(), b: v[1].exp(), c: v[2].exp(), breaks })
        }
    }
}

/// Evaluates decoded parameters at the given xs.
pub fn predict(fit: &FitResult, xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("prediction xs must be positive"));
    }
    Ok(match &fit.params {
        FitParams::M1(p) => eval_m1(p, xs),
        FitParams::M2(p) => eval_m2(p, xs),
        FitParams::M3(p) => eval_m3(p, xs),
        FitParams::M4(p) => {
            let ln_a = p.a.ln();
            let mut out = Vec::with_capacity(xs.len());
            for &x in xs {
                out.push(m4_solve_ln(ln_a, p.b, p.alpha, p.c, p.y0, x)?);
            }
            out
        }
        FitParams::Bnsl(p) => eval_bnsl(p, xs),
    })
}

fn objective_at(family: FamilyTag, v: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    let params = decode(family, v);
    let preds = match &params {
        FitParams::M1(p) => eval_m1(p, xs),
        FitParams::M2(p) => eval_m2(p, xs),
        FitParams::M3(p) => eval_m3(p, xs),
        FitParams::M4(p) => {
            let ln_a = p.a.ln();
            let mut out = Vec::with_capacity(xs.len());
            for &x in xs {
                match m4_solve_ln(ln_a, p.b, p.alpha, p.c, p.y0, x) {
                    Ok(y) => out.push(y),
                    Err(_) => return f64::INFINITY,
                }
            }
            out
        }
        FitParams::Bnsl(p) => eval_bnsl(p, xs),
    };
    mean_sq_log_error(&preds, &ys)
}

/// Draws one multi-start coordinate vector from the family's start boxes.
fn draw_start<R: Rng + ?Sized>(
    family: FamilyTag,
    n_breaks: usize,
    xs: &[f64],
    ys: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let u = |rng: &mut R, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min).max(LOG_CLAMP);
    let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(LOG_CLAMP);
    let mut v = vec![u(rng, -5.0, 2.0), u(rng, -4.0, 1.0)];
    match family {
        FamilyTag::M1 => {}
        FamilyTag::M2 => v.push(u(rng, 0.0, min_y).max(1e-10).ln()),
        FamilyTag::M3 => v.push(u(rng, -4.0, 2.0)),
        FamilyTag::M4 => {
            v.push(u(rng, -3.0, 2.0)); // ln alpha
            let c = u(rng, 0.0, min_y).max(1e-10);
            v.push(c.ln());
            // The ceiling draw is ours to pick (no stated box): place y0
            // within a few spans of the largest context value.
            let h = (max_y - c).max(1e-3);
            v.push(u(rng, (0.5 * h).ln(), (4.0 * h).ln()));
        }
        FamilyTag::Bnsl => {
            v.push(u(rng, 0.0, min_y).max(1e-10).ln());
            let ln_x_lo = xs[0].ln();
            let ln_x_hi = xs[xs.len() - 1].ln().max(ln_x_lo + 1e-6);
            for _ in 0..n_breaks {
                v.push(u(rng, ln_x_lo, ln_x_hi)); // ln e
                v.push(u(rng, -3.0, 1.0)); // ln s
                v.push(u(rng, -3.0, 3.0)); // delta_b
            }
        }
    }
    v
}

const NM_ALPHA: f64 = 1.0;
const NM_GAMMA: f64 = 2.0;
const NM_RHO: f64 = 0.5;
const NM_SIGMA: f64 = 0.5;

/// One Nelder-Mead run from `start` with initial per-coordinate step `step`.
/// Returns the best vertex and its objective.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iters {
        // Order vertices by objective (stable: ties keep insertion order).
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&i, &j| fvals[i].total_cmp(&fvals[j]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        if fvals[worst] - fvals[best] < 1e-16 && fvals[best].is_finite() {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for &i in &order[..dim] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(&c, &w)| c + t * (c - w))
                .collect()
        };

        let reflected = lerp(NM_ALPHA);
        let f_r = f(&reflected);
        if f_r < fvals[best] {
            let expanded = lerp(NM_GAMMA);
            let f_e = f(&expanded);
            if f_e < f_r {
                simplex[worst] = expanded;
                fvals[worst] = f_e;
            } else {
                simplex[worst] = reflected;
                fvals[worst] = f_r;
            }
        } else if f_r < fvals[second_worst] {
            simplex[worst] = reflected;
            fvals[worst] = f_r;
        } else {
            let contracted = if f_r < fvals[worst] { lerp(NM_RHO) } else { lerp(-NM_RHO) };
            let f_c = f(&contracted);
            if f_c < fvals[worst].min(f_r) {
                simplex[worst] = contracted;
                fvals[worst] = f_c;
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    for (x, &a) in simplex[i].iter_mut().zip(&anchor) {
                        *x = a + NM_SIGMA * (*x - a);
                    }
                    fvals[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=simplex.len() - 1 {
        if fvals[i] < fvals[best] {
            best = i;
        }
    }
    (simplex[best].clone(), fvals[best])
}

const EARLY_EXIT_OBJECTIVE: f64 = 1e-14;

fn fit_with_breaks(
    context: &Curve,
    family: FamilyTag,
    n_breaks: usize,
    restarts: usize,
    seed: u64,
) -> Result<FitResult> {
    let dim = n_free(family, n_breaks);
    if context.len() < dim {
        return Err(Error::invalid(format!(
            "context of {} points cannot constrain {} parameters",
            context.len(),
            dim
        )));
    }
    let xs = &context.xs;
    let ys = &context.ys;
    let f = |v: &[f64]| objective_at(family, v, xs, ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..restarts.max(1))
        .map(|_| draw_start(family, n_breaks, xs, ys, &mut rng))
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut used = 0;
    for start in &starts {
        used += 1;
        let (v1, _) = nelder_mead(&f, start, 0.4, 250 * dim);
        // Refinement pass: restart the simplex small around the found point
        // to recover from collapsed geometry.
        let (v2, f2) = nelder_mead(&f, &v1, 0.05, 250 * dim);
        if f2.is_finite() && best.as_ref().map_or(true, |(_, fb)| f2 < *fb) {
            best = Some((v2, f2));
        }
        if let Some((_, fb)) = &best {
            if *fb < EARLY_EXIT_OBJECTIVE {
                break;
            }
        }
    }

    match best {
        Some((v, obj)) => Ok(FitResult {
            family,
            params: decode(family, &v),
            objective: obj,
            n_restarts_used: used,
        }),
        None => Err(Error::numeric(format!(
            "all {} restarts diverged for {}; starts: {:?}",
            starts.len(),
            family.as_str(),
            starts
        ))),
    }
}

/// Fits one family by multi-start simplex descent on mean squared log-error.
/// Deterministic given (context, seed). For the broken power law this fits
/// zero breaks; use [`fit_bnsl`] for break-count selection.
pub fn fit_family(context: &Curve, family: FamilyTag, restarts: usize, seed: u64) -> Result<FitResult> {
    let n_breaks = 0;
    fit_with_breaks(context, family, n_breaks, restarts, seed)
}

/// Selects the broken-power-law break count by validation: fit each
/// n in {0..max_breaks} on the first 90% of the context, score mean squared
/// log-error on the held-out last ceil(10%), then refit the winner on the
/// full context.
pub fn fit_bnsl(context: &Curve, max_breaks: usize, restarts: usize, seed: u64) -> Result<FitResult> {
    if context.len() < 6 {
        return Err(Error::invalid(format!(
            "break selection needs at least 6 context points, got {}",
            context.len()
        )));
    }
    let n = context.len();
    let n_val = ((n as f64) * 0.1).ceil() as usize;
    let n_fit = n - n_val;
    let fit_part = context.slice(0..n_fit);
    let val_xs = &context.xs[n_fit..];
    let val_ys = &context.ys[n_fit..];

    let mut best: Option<(f64, usize)> = None;
    for n_breaks in 0..=max_breaks {
        if fit_part.len() < n_free(FamilyTag::Bnsl, n_breaks) {
            continue;
        }
        let fit = fit_with_breaks(&fit_part, FamilyTag::Bnsl, n_breaks, restarts, seed)?;
        let preds = predict(&fit, val_xs)?;
        let score = mean_sq_log_error(&preds, val_ys);
        // Prefer fewer breaks on effective ties: when several counts fit a
        // curve exactly the scores differ only by rounding noise, and the
        // simplest model should win.
        if best.map_or(true, |(s, _)| score + 1e-12 < s) {
            best = Some((score, n_breaks));
        }
    }
    let (_, chosen) = best.ok_or_else(|| {
        Error::invalid("context too small to fit even the zero-break model on its first 90%")
    })?;
    fit_with_breaks(context, FamilyTag::Bnsl, chosen, restarts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let (l, h) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    fn curve_from(xs: Vec<f64>, ys: Vec<f64>) -> Curve {
        Curve::new("fit-test", xs, ys).unwrap()
    }

    #[test]
    fn recovers_exact_m2() {
        let xs = log_spaced(20, 0.01, 1.0);
        let p = ParamsM2 { a: 0.5, b: 0.3, c: 0.1 };
        let ys = eval_m2(&p, &xs);
        let c = curve_from(xs.clone(), ys.clone());
        let fit = fit_family(&c, FamilyTag::M2, 20, 7).unwrap();
        let preds = predict(&fit, &xs).unwrap();
        let rmsle = mean_sq_log_error(&preds, &ys).sqrt();
        assert!(rmsle < 1e-6, "context RMSLE {rmsle:.2e}");
    }

    #[test]
    fn m1_on_constant_data_degenerates_to_flat() {
        let xs = log_spaced(15, 0.01, 1.0);
        let ys = vec![1.0; 15];
        let c = curve_from(xs, ys);
        let fit = fit_family(&c, FamilyTag::M1, 20, 3).unwrap();
        assert!(fit.objective < 1e-10, "objective {:.2e}", fit.objective);
        match fit.params {
            FitParams::M1(p) => {
                assert!((p.a - 1.0).abs() < 1e-3, "a = {}", p.a);
                assert!(p.b < 1e-4, "b = {}", p.b);
            }
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn m3_fit_of_m1_data_sends_d_to_zero() {
        let xs = log_spaced(25, 0.01, 1.0);
        let m1 = ParamsM1 { a: 0.4, b: 0.25 };
        let ys = eval_m1(&m1, &xs);
        let c = curve_from(xs, ys);
        let f1 = fit_family(&c, FamilyTag::M1, 20, 11).unwrap();
        let f3 = fit_family(&c, FamilyTag::M3, 20, 11).unwrap();
        match f3.params {
            FitParams::M3(p) => assert!(p.d.abs() < 1e-3, "d = {}", p.d),
            _ => panic!("wrong family"),
        }
        assert!(
            (f3.objective - f1.objective).abs() < 1e-8,
            "objectives {:.2e} vs {:.2e}",
            f3.objective,
            f1.objective
        );
    }

    #[test]
    fn bnsl_selects_zero_breaks_on_pure_power_law() {
        let xs = log_spaced(40, 0.01, 1.0);
        let ys: Vec<f64> = xs.iter().map(|&x| 0.7 * x.powf(-0.2)).collect();
        let c = curve_from(xs, ys);
        let fit = fit_bnsl(&c, 3, 12, 5).unwrap();
        match &fit.params {
            FitParams::Bnsl(p) => assert!(p.breaks.is_empty(), "selected {} breaks", p.breaks.len()),
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn bnsl_detects_a_strong_break() {
        let truth = ParamsBNSL {
            a: 0.8,
            b: 0.1,
            c: 0.0,
            breaks: vec![BnslBreak { e: 0.1, s: 0.3, delta_b: 1.5 }],
        };
        let xs = log_spaced(60, 0.01, 1.0);
        let ys = eval_bnsl(&truth, &xs);
        let c = curve_from(xs.clone(), ys.clone());
        let fit = fit_bnsl(&c, 3, 20, 9).unwrap();
        match &fit.params {
            FitParams::Bnsl(p) => assert!(!p.breaks.is_empty(), "missed the break"),
            _ => panic!("wrong family"),
        }
        let preds = predict(&fit, &xs).unwrap();
        let rmsle = mean_sq_log_error(&preds, &ys).sqrt();
        assert!(rmsle < 1e-3, "full-context RMSLE {rmsle:.2e}");
    }

    #[test]
    fn validation_set_is_one_point_for_six() {
        // Observable contract: fit_bnsl works on exactly 6 points, which
        // forces a 5-point fit set and ceil(0.6)=1 validation point.
        let xs = log_spaced(6, 0.01, 1.0);
        let ys: Vec<f64> = xs.iter().map(|&x| 0.5 * x.powf(-0.3)).collect();
        let c = curve_from(xs, ys);
        let fit = fit_bnsl(&c, 3, 8, 2).unwrap();
        assert!(fit.objective < 1e-8);
        let tiny = curve_from(vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![1.0, 0.9, 0.8, 0.7, 0.6]);
        assert!(fit_bnsl(&tiny, 3, 8, 2).unwrap_err().is_validation());
    }

    #[test]
    fn predict_at_unit_x_returns_amplitude_for_m1() {
        let fit = FitResult {
            family: FamilyTag::M1,
            params: FitParams::M1(ParamsM1 { a: 0.37, b: 0.5 }),
            objective: 0.0,
            n_restarts_used: 1,
        };
        let ys = predict(&fit, &[1.0]).unwrap();
        assert!((ys[0] - 0.37).abs() < 1e-15);
        assert!(predict(&fit, &[0.0]).unwrap_err().is_validation());
        let ys = predict(&fit, &[0.25, 0.5, 1.0, 2.0]).unwrap();
        for w in ys.windows(2) {
            assert!(w[1] < w[0], "fitted power law must decrease");
        }
    }

    #[test]
    fn fit_is_deterministic_and_beats_its_starts() {
        let xs = log_spaced(30, 0.01, 1.0);
        let p = ParamsM3 { a: 0.5, b: 0.4, d: 1.3 };
        let ys = eval_m3(&p, &xs);
        let c = curve_from(xs, ys);
        let a = fit_family(&c, FamilyTag::M3, 10, 123).unwrap();
        let b = fit_family(&c, FamilyTag::M3, 10, 123).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        assert!(a.objective < 1e-10);
    }

    #[test]
    fn too_few_points_is_a_validation_error() {
        let c = curve_from(vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.9, 0.8, 0.7]);
        assert!(fit_family(&c, FamilyTag::M4, 5, 0).unwrap_err().is_validation());
    }

    #[test]
    fn recovers_exact_m4() {
        let truth = ParamsM4 { a: 0.3, b: 0.8, alpha: 1.2, c: 0.05, y0: 1.1 };
        let xs = log_spaced(25, 0.01, 1.0);
        let ys: Vec<f64> = {
            let ln_a = truth.a.ln();
            xs.iter()
                .map(|&x| m4_solve_ln(ln_a, truth.b, truth.alpha, truth.c, truth.y0, x).unwrap())
                .collect()
        };
        let c = curve_from(xs.clone(), ys.clone());
        let fit = fit_family(&c, FamilyTag::M4, 20, 31).unwrap();
        let preds = predict(&fit, &xs).unwrap();
        let rmsle = mean_sq_log_error(&preds, &ys).sqrt();
        assert!(rmsle < 1e-5, "M4 recovery RMSLE {rmsle:.2e}");
    }
}
