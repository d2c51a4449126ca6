//! Minimal static SVG plots: grouped bar charts, box plots and line charts.
//! Output depends only on the input values, so files are byte-stable.

use std::fmt::Write as _;

use crate::metrics::Quartiles;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Map `v` from `[lo, hi]` to the plot's vertical pixel range.
fn y_pixel(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    HEIGHT - MARGIN - (v - lo) / span * (HEIGHT - 2.0 * MARGIN)
}

fn axes(s: &mut String, lo: f64, hi: f64) {
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{}" x2="{MARGIN}" y2="{MARGIN}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
        WIDTH - MARGIN,
        y = HEIGHT - MARGIN
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_pixel(v, lo, hi);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            y + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 90.0,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            WIDTH - MARGIN - 75.0,
            y,
            escape(name)
        );
    }
}

/// Bars for each category label, one colored bar per series.
pub fn grouped_bars(title: &str, labels: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let hi = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0);
    axes(&mut s, 0.0, hi);
    let groups = labels.len().max(1) as f64;
    let group_w = (WIDTH - 2.0 * MARGIN) / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let x0 = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let y = y_pixel(v, 0.0, hi);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                x0 + k as f64 * bar_w,
                y,
                bar_w,
                HEIGHT - MARGIN - y,
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + group_w * 0.4,
            HEIGHT - MARGIN + 14.0,
            escape(label)
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// One box (Q1..Q3, median line, min/max whiskers) per labelled summary.
pub fn boxplot(title: &str, boxes: &[(String, Quartiles)]) -> String {
    let mut s = header(title);
    let lo = boxes.iter().map(|(_, q)| q.min).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|(_, q)| q.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi.is_finite() { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    axes(&mut s, lo, hi);
    let slot = (WIDTH - 2.0 * MARGIN) / boxes.len().max(1) as f64;
    for (i, (name, q)) in boxes.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let half = slot * 0.2;
        let color = PALETTE[i % PALETTE.len()];
        let (y_min, y_q1, y_med, y_q3, y_max) = (
            y_pixel(q.min, lo, hi),
            y_pixel(q.q1, lo, hi),
            y_pixel(q.median, lo, hi),
            y_pixel(q.q3, lo, hi),
            y_pixel(q.max, lo, hi),
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{y_min:.1}" x2="{cx:.1}" y2="{y_max:.1}" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{y_q3:.1}" width="{:.1}" height="{:.1}" fill="{color}" stroke="black"/>"#,
            cx - half,
            2.0 * half,
            (y_q1 - y_q3).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y_med:.1}" x2="{:.1}" y2="{y_med:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline per series over a shared x axis.
pub fn lines(title: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let values = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    axes(&mut s, lo, hi);
    let x_lo = x.first().copied().unwrap_or(0.0);
    let x_hi = x.last().copied().unwrap_or(1.0);
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    for (k, (_, values)) in series.iter().enumerate() {
        let mut pts = String::new();
        for (xi, yi) in x.iter().zip(values) {
            if yi.is_finite() {
                let px = MARGIN + (xi - x_lo) / x_span * (WIDTH - 2.0 * MARGIN);
                let _ = write!(pts, "{:.1},{:.1} ", px, y_pixel(*yi, lo, hi));
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}"/>"#,
            pts.trim_end(),
            PALETTE[k % PALETTE.len()]
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}
