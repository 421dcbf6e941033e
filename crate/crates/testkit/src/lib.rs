//! Independent numeric oracles for the nslx test suites.
//!
//! Everything here is deliberately implemented without touching the library
//! code under test, so oracle and implementation cannot share a bug: the
//! quadrature oracle integrates densities directly, and the KS helpers use
//! their own normal CDF.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`. Recursion uses the classic Richardson error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    rec(&f, a, fa, b, fb, whole, m, fm, tol, 60)
}

/// Regularized incomplete beta by direct quadrature of the Beta(p, q)
/// density. Integrable endpoint singularities (p < 1 or q < 1) are handled
/// by substituting them away: near 0, t = u^(1/p) makes the integrand
/// bounded, and symmetrically near 1.
pub fn beta_cdf_quadrature(p: f64, q: f64, x: f64, tol: f64) -> f64 {
    assert!(p > 0.0 && q > 0.0 && (0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    // ln B(p, q) via direct quadrature-compatible Stirling-free route:
    // use the library-independent product form through ln_gamma below.
    let lnb = ln_gamma_oracle(p) + ln_gamma_oracle(q) - ln_gamma_oracle(p + q);
    if x <= 0.5 {
        // integral_0^x t^(p-1)(1-t)^(q-1) dt, with t = u^(1/p):
        // dt = (1/p) u^(1/p - 1) du, so the integrand becomes
        // (1/p)(1-u^(1/p))^(q-1) over u in [0, x^p].
        let g = |u: f64| {
            let t = u.powf(1.0 / p);
            (1.0 - t).powf(q - 1.0) / p
        };
        adaptive_simpson(g, 0.0, x.powf(p), tol) * (-lnb).exp()
    } else {
        1.0 - beta_cdf_quadrature(q, p, 1.0 - x, tol)
    }
}

/// Stirling series log-gamma (independent of the library's Lanczos form).
pub fn ln_gamma_oracle(z: f64) -> f64 {
    // Shift into the asymptotic regime, then apply the Stirling series.
    let mut z = z;
    let mut shift = 0.0;
    while z < 12.0 {
        shift -= z.ln();
        z += 1.0;
    }
    const B: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360360.0,
        1.0 / 156.0,
    ];
    let mut series = 0.0;
    let z2 = z * z;
    let mut zp = z;
    for &b in &B {
        series += b / zp;
        zp *= z2;
    }
    shift + 0.5 * ((2.0 * std::f64::consts::PI).ln() - z.ln()) + z * (z.ln() - 1.0) + series
}

/// Abramowitz & Stegun 7.1.26 erf approximation (absolute error < 1.5e-7).
pub fn erf_oracle(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

pub fn normal_cdf_oracle(z: f64) -> f64 {
    0.5 * (1.0 + erf_oracle(z / std::f64::consts::SQRT_2))
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let c = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((c - lo).abs()).max((hi - c).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the two
/// empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov distribution p-value for statistic `d` with `n`
/// samples (Q_KS of the Kolmogorov limit law).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let n = n as f64;
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
