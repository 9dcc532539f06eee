//! Line plots of one metric against percent remaining weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::output::aggregate;
use super::sweep::SweepRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Distinct metric names present in `rows`.
pub fn available_metrics(rows: &[SweepRow]) -> Vec<String> {
    let mut m: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
    m.sort();
    m.dedup();
    m
}

/// Renders `metric` with one polyline per parameter and ±1 std error bars.
/// The x axis is log-scaled percent remaining weights, decreasing to the right.
pub fn render_svg(rows: &[SweepRow], metric: &str) -> Result<String> {
    let agg = aggregate(rows);
    let mut series: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in agg.rows.iter().filter(|r| r.metric == metric) {
        series
            .entry(&r.parameter)
            .or_default()
            .push((r.keep_fraction_pct, r.mean, r.std));
    }
    if metric.is_empty() || series.is_empty() {
        return Err(Error::Config(format!(
            "unknown metric {metric:?}; available: {}",
            available_metrics(rows).join(", ")
        )));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    let all: Vec<&(f64, f64, f64)> = series.values().flatten().collect();
    let (xmin, xmax) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut ymin, mut ymax) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.1 - p.2), hi.max(p.1 + p.2))
    });
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let (lmin, lmax) = (xmin.max(1e-12).log10(), xmax.max(1e-12).log10());
    let px = |x: f64| {
        if lmax - lmin < 1e-12 {
            LEFT + pw / 2.0
        } else {
            LEFT + (lmax - x.max(1e-12).log10()) / (lmax - lmin) * pw
        }
    };
    let py = |y: f64| TOP + (ymax - y) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(metric)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| b.total_cmp(a));
    xs.dedup();
    for x in &xs {
        let xp = px(*x);
        let _ = writeln!(
            s,
            r#"<line x1="{xp:.2}" y1="{:.2}" x2="{xp:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            trim(*x)
        );
    }
    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        let yp = py(y);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{yp:.2}" x2="{LEFT}" y2="{yp:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.3}</text>"#,
            LEFT - 8.0,
            yp + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">% remaining weights</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    for (i, (param, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for p in pts {
            let (xp, lo, hi) = (px(p.0), py(p.1 - p.2), py(p.1 + p.2));
            let _ = writeln!(
                s,
                r#"<path d="M{xp:.2} {lo:.2}V{hi:.2}M{:.2} {lo:.2}h8M{:.2} {hi:.2}h8" stroke="{color}"/>"#,
                xp - 4.0,
                xp - 4.0
            );
            let _ = writeln!(s, r#"<circle cx="{xp:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, py(p.1));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let label = if param.is_empty() { metric } else { param };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn trim(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn emit_svg(rows: &[SweepRow], metric: &str, path: &Path) -> Result<()> {
    let svg = render_svg(rows, metric)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
