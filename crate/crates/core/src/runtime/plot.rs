//! Return-vs-wall-clock line charts as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::metrics::MetricsRecord;
use crate::error::{Error, Result};

const W: f64 = 800.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `(seconds since first record, value)` per `node/key` series, in time
/// order.
pub fn series(records: &[MetricsRecord], keys: &[&str]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let t0 = records.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        for k in keys {
            if let Some(v) = r.get(k) {
                out.entry(format!("{}/{k}", r.node)).or_default().push((r.time - t0, v));
            }
        }
    }
    for s in out.values_mut() {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

/// Line chart of `keys` against wall-clock minutes.
pub fn plot_svg(records: &[MetricsRecord], keys: &[&str], title: &str) -> Result<String> {
    let data = series(records, keys);
    let points: Vec<(f64, f64)> = data.values().flatten().copied().collect();
    if points.is_empty() {
        return Err(Error::Empty(format!("no values for {keys:?} in the metrics")));
    }
    let x_hi = points.iter().map(|p| p.0 / 60.0).fold(0.0, f64::max).max(1e-6);
    let mut y_lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut y_hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if y_hi - y_lo < 1e-9 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + x / x_hi * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for x in ticks(0.0, x_hi) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.1}</text>"#, sx(x), TOP + ph + 18.0);
    }
    for y in ticks(y_lo, y_hi) {
        let _ = writeln!(s, r#"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="lightgray"/>"#, LEFT + pw, sy(y), sy(y));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.0}</text>"#, LEFT - 6.0, sy(y) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">wall-clock (min)</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">return</text>"#, TOP + ph / 2.0, TOP + ph / 2.0);
    for (i, (name, pts)) in data.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(x / 60.0), sy(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{0}" x2="{1}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - RIGHT + 10.0, W - RIGHT + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 35.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
