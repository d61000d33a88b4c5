//! Pressure-volume loop plots as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Result};
use cardiotwin_core::analysis::PvLoop;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Data extrema widened by 5% of the span on each side.
pub fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.05 * span } else { 0.05 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render `loops` with V_LV (ml) on x and P_LV (mmHg) on y.
pub fn render_pv_svg(loops: &[&PvLoop], labels: &[String]) -> Result<String> {
    ensure!(!loops.is_empty(), "no PV loops to plot");
    ensure!(loops.len() == labels.len(), "{} loops but {} labels", loops.len(), labels.len());
    ensure!(loops.iter().all(|l| !l.points.is_empty()), "empty PV loop");
    let fold = |f: fn(&PvLoop) -> (f64, f64)| {
        loops.iter().map(|l| f(l)).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)))
    };
    let (v_lo, v_hi) = fold(PvLoop::volume_range);
    let (p_lo, p_hi) = fold(PvLoop::pressure_range);
    ensure!(v_lo.is_finite() && v_hi.is_finite() && p_lo.is_finite() && p_hi.is_finite(), "non-finite PV data");
    let (x0, x1) = padded_range(v_lo, v_hi);
    let (y0, y1) = padded_range(p_lo, p_hi);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let sy = |p: f64| TOP + (y1 - p) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<desc>x-range {x0:.4} {x1:.4}; y-range {y0:.4} {y1:.4}</desc>"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let (v, p) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (x, y) = (sx(v), sy(p));
        let bottom = TOP + ph;
        let _ =
            writeln!(s, r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#, bottom + 18.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{p:.1}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">V_LV (ml)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">P_LV (mmHg)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, l) in loops.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = l.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.volume), sy(p.pressure))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
    }
    let lx = LEFT + pw + 15.0;
    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, y + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_pv_svg(loops: &[&PvLoop], labels: &[String], path: &Path) -> Result<()> {
    let svg = render_pv_svg(loops, labels)?;
    crate::io::write_file(path, |w| Ok(std::io::Write::write_all(w, svg.as_bytes())?))
}
