//! Closed-form scaling-law families M1-M4 and the broken-power-law BNSL,
//! including the monotone inverse solve that defines M4.
//!
//! All evaluators are pure; parameter structs are plain data with a
//! `validate` used at fitting/sampling boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// y = a * x^(-b)
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsM1 {
    pub a: f64,
    pub b: f64,
}

/// y = a * x^(-b) + c
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsM2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// y = a * (x^(-1) + d)^b
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsM3 {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

/// Defined through its inverse: x = g(y) = ((y-c) / (a * (y0-y)^alpha))^(-1/b)
/// for y in (c, y0). alpha controls how sharply the curve saturates toward
/// its floor; alpha = 0 reduces to M2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsM4 {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub c: f64,
    pub y0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnslBreak {
    pub e: f64,
    pub s: f64,
    pub delta_b: f64,
}

/// y = c + a * x^(-b) * prod_i (1 + (x/e_i)^(1/s_i))^(-delta_b_i * s_i)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBNSL {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub breaks: Vec<BnslBreak>,
}

impl ParamsM1 {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("M1 requires a, b > 0; got {self:?}")))
        }
    }
}

impl ParamsM2 {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.c >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("M2 requires a, b > 0 and c >= 0; got {self:?}")))
        }
    }
}

impl ParamsM3 {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.d >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("M3 requires a, b > 0 and d >= 0; got {self:?}")))
        }
    }
}

impl ParamsM4 {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.alpha >= 0.0 && self.c >= 0.0 && self.y0 > self.c {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "M4 requires a, b > 0, alpha >= 0, y0 > c >= 0; got {self:?}"
            )))
        }
    }
}

impl ParamsBNSL {
    pub fn validate(&self) -> Result<()> {
        let breaks_ok = self.breaks.iter().all(|br| br.e > 0.0 && br.s > 0.0);
        if self.a > 0.0 && self.c >= 0.0 && breaks_ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "BNSL requires a > 0, c >= 0, e_i > 0, s_i > 0; got {self:?}"
            )))
        }
    }
}

pub fn eval_m1(p: &ParamsM1, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| p.a * x.powf(-p.b)).collect()
}

pub fn eval_m2(p: &ParamsM2, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| p.a * x.powf(-p.b) + p.c).collect()
}

pub fn eval_m3(p: &ParamsM3, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| p.a * (x.recip() + p.d).powf(p.b)).collect()
}

/// Solves x = g(y) for y on (c, y0) by bisection in log-space.
///
/// `ln_a` is passed as a log so callers whose parameterization lives in
/// log-space can use amplitudes far beyond f64 range. Monotonicity of
/// ln g(y) = (-1/b) * (ln(y-c) - ln_a - alpha*ln(y0-y)) guarantees a unique
/// root whenever the truncated bracket contains it.
pub fn m4_solve_ln(ln_a: f64, b: f64, alpha: f64, c: f64, y0: f64, x: f64) -> Result<f64> {
    debug_assert!(x > 0.0);
    if alpha == 0.0 {
        // Exact reduction to M2; the formula no longer confines y below y0.
        return Ok(c + (ln_a - b * x.ln()).exp());
    }
    let ln_x = x.ln();
    let ln_g = |y: f64| (-1.0 / b) * ((y - c).ln() - ln_a - alpha * (y0 - y).ln());
    let eps = 1e-12 * (y0 - c);
    let mut lo = c + eps;
    let mut hi = y0 - eps;
    // ln_g is decreasing in y, so the root needs ln_g(lo) >= ln_x >= ln_g(hi).
    if ln_g(lo) < ln_x || ln_g(hi) > ln_x {
        return Err(Error::numeric(format!(
            "M4 inverse not bracketed for x={x} with ln_a={ln_a}, b={b}, alpha={alpha}, c={c}, y0={y0}"
        )));
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let diff = ln_g(mid) - ln_x;
        // Relative x-residual |g(y)-x|/x = |exp(diff) - 1|.
        if (diff.exp() - 1.0).abs() < 1e-10 {
            return Ok(mid);
        }
        if diff > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// The forward map x = g(y) of M4 (log amplitude form), for y in (c, y0).
pub fn m4_forward_ln(ln_a: f64, b: f64, alpha: f64, c: f64, y0: f64, y: f64) -> f64 {
    ((-1.0 / b) * ((y - c).ln() - ln_a - alpha * (y0 - y).ln())).exp()
}

pub fn eval_m4(p: &ParamsM4, xs: &[f64]) -> Result<Vec<f64>> {
    let ln_a = p.a.ln();
    xs.iter()
        .map(|&x| m4_solve_ln(ln_a, p.b, p.alpha, p.c, p.y0, x))
        .collect()
}

/// Stable log(1 + exp(t)).
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn eval_bnsl(p: &ParamsBNSL, xs: &[f64]) -> Vec<f64> {
    let ln_a = p.a.ln();
    xs.iter()
        .map(|&x| {
            let ln_x = x.ln();
            let mut ln_y = ln_a - p.b * ln_x;
            for br in &p.breaks {
                // (1 + (x/e)^(1/s))^(-db*s) as -db*s*log1p(exp((ln x - ln e)/s)).
                ln_y -= br.delta_b * br.s * softplus((ln_x - br.e.ln()) / br.s);
            }
            p.c + ln_y.exp()
        })
        .collect()
}
