//! SVG fan charts: filled context points, hollow target points, the
//! predictive median as a line, and a shaded q05–q95 band, on a log-x axis.
//! Output is a self-contained SVG string with no external assets and no
//! timestamps, so identical inputs render identical bytes.

use std::fmt::Write as _;

use nslx_core::curve::Curve;
use nslx_core::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 45.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    lx_min: f64,
    lx_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x.ln() - self.lx_min) / (self.lx_max - self.lx_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Renders the extrapolation fan for one curve split at `cutoff`: points
/// `[0, cutoff)` are context (filled), the rest targets (hollow), with the
/// median line and the q05–q95 band drawn at the target xs. `meta` is
/// embedded as the SVG description.
pub fn render_fan(
    curve: &Curve,
    cutoff: usize,
    median: &[f64],
    q05: &[f64],
    q95: &[f64],
    meta: &str,
) -> Result<String> {
    if cutoff == 0 || cutoff >= curve.len() {
        return Err(Error::invalid(format!(
            "cutoff {} outside 1..{} for curve '{}'",
            cutoff,
            curve.len(),
            curve.name
        )));
    }
    let n_targets = curve.len() - cutoff;
    if median.len() != n_targets || q05.len() != n_targets || q95.len() != n_targets {
        return Err(Error::invalid(format!(
            "band lengths {}/{}/{} against {} target points",
            median.len(),
            q05.len(),
            q95.len(),
            n_targets
        )));
    }
    let bands = median.iter().chain(q05).chain(q95);
    if bands.clone().any(|v| !v.is_finite()) {
        return Err(Error::numeric("prediction band contains non-finite values"));
    }

    let y_data_max = curve
        .ys
        .iter()
        .chain(bands.clone())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let y_data_min = curve.ys.iter().chain(bands).fold(f64::INFINITY, |a, &b| a.min(b));
    let span = (y_data_max - y_data_min).max(1e-9);
    let frame = Frame {
        lx_min: curve.xs[0].ln(),
        lx_max: curve.xs[curve.len() - 1].ln(),
        y_min: (y_data_min.min(0.0) - 0.05 * span).min(0.0),
        y_max: y_data_max + 0.08 * span,
    };

    let mut svg = String::with_capacity(8192);
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    )
    .ok();
    writeln!(svg, "  <desc>{}</desc>", esc(meta)).ok();
    writeln!(svg, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").ok();

    draw_axes(&mut svg, &frame);

    // Shaded q05-q95 band: q05 forward, q95 reversed -> 2n vertices.
    let target_xs = &curve.xs[cutoff..];
    let mut pts = String::new();
    for (x, y) in target_xs.iter().zip(q05) {
        write!(pts, "{:.2},{:.2} ", frame.px(*x), frame.py(*y)).ok();
    }
    for (x, y) in target_xs.iter().zip(q95).rev() {
        write!(pts, "{:.2},{:.2} ", frame.px(*x), frame.py(*y)).ok();
    }
    writeln!(
        svg,
        "  <polygon points=\"{}\" fill=\"#bcd7eb\" fill-opacity=\"0.65\" stroke=\"none\"/>",
        pts.trim_end()
    )
    .ok();

    // Median line over the targets.
    let mut line = String::new();
    for (x, y) in target_xs.iter().zip(median) {
        write!(line, "{:.2},{:.2} ", frame.px(*x), frame.py(*y)).ok();
    }
    writeln!(
        svg,
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fb5\" stroke-width=\"1.5\"/>",
        line.trim_end()
    )
    .ok();

    // Context points filled, target points hollow.
    for (&x, &y) in curve.xs[..cutoff].iter().zip(&curve.ys[..cutoff]) {
        writeln!(
            svg,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#333333\"/>",
            frame.px(x),
            frame.py(y)
        )
        .ok();
    }
    for (&x, &y) in curve.xs[cutoff..].iter().zip(&curve.ys[cutoff..]) {
        writeln!(
            svg,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"none\" stroke=\"#333333\"/>",
            frame.px(x),
            frame.py(y)
        )
        .ok();
    }

    writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 8.0,
        esc(&curve.name)
    )
    .ok();
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn draw_axes(svg: &mut String, frame: &Frame) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#555555\"/>"
    )
    .ok();
    writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#555555\"/>"
    )
    .ok();

    // Decade ticks on the log-x axis; endpoint ticks when the span holds
    // no full decade.
    let e_lo = (frame.lx_min / std::f64::consts::LN_10).ceil() as i32;
    let e_hi = (frame.lx_max / std::f64::consts::LN_10).floor() as i32;
    let ticks: Vec<f64> = if e_lo <= e_hi {
        (e_lo..=e_hi).map(|e| 10f64.powi(e)).collect()
    } else {
        vec![frame.lx_min.exp(), frame.lx_max.exp()]
    };
    for t in ticks {
        let px = frame.px(t);
        writeln!(
            svg,
            "  <line x1=\"{px:.2}\" y1=\"{y0}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#555555\"/>",
            y0 + 4.0
        )
        .ok();
        writeln!(
            svg,
            "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{t}</text>",
            y0 + 16.0
        )
        .ok();
    }

    for i in 0..=4 {
        let y = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let py = frame.py(y);
        writeln!(
            svg,
            "  <line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"#555555\"/>",
            x0 - 4.0
        )
        .ok();
        writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{y:.2}</text>",
            x0 - 7.0,
            py + 3.5
        )
        .ok();
    }
}
