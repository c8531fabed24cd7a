//! Minimal hand-written SVG charts for detection summaries.

use std::fmt::Write;

use crate::scenarios::DetectionSummary;

const WIDTH: f64 = 640.0;
const ROW: f64 = 22.0;
const LEFT: f64 = 200.0;
const TOP: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bars, one per `(label, rate)` with rates in `[0, 1]`.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let height = TOP + ROW * bars.len() as f64 + 30.0;
    let span = WIDTH - LEFT - 60.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    for (i, (label, rate)) in bars.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let w = span * rate.clamp(0.0, 1.0);
        let _ = writeln!(out, r#"<text x="10" y="{:.1}">{}</text>"#, y + 14.0, escape(label));
        let _ = writeln!(out, r##"<rect x="{LEFT}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="#4a78b0"/>"##, ROW - 6.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{:.3}</text>"#, LEFT + w + 4.0, y + 14.0, rate);
    }
    let axis_y = TOP + ROW * bars.len() as f64;
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{axis_y:.1}" stroke="black"/>"#);
    out.push_str("</svg>\n");
    out
}

/// Overall detection rate per scenario.
pub fn summaries_chart(summaries: &[DetectionSummary]) -> String {
    let bars: Vec<(String, f64)> = summaries.iter().map(|s| (s.scenario.clone(), s.rate())).collect();
    bar_chart("overall detection rate", &bars)
}

/// Per-mechanism detection rates of one scenario, skipping mechanisms that
/// never fired.
pub fn mechanism_chart(summary: &DetectionSummary) -> String {
    let mut bars: Vec<(String, f64)> = summary
        .per_mechanism
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(m, &n)| (m.clone(), n as f64 / summary.trials as f64))
        .collect();
    bars.insert(0, ("overall".into(), summary.rate()));
    bar_chart(&format!("{} ({} trials)", summary.scenario, summary.trials), &bars)
}

/// Detection rate against attack magnitude.
pub fn rate_curve(title: &str, points: &[(f64, f64)]) -> String {
    let (h, pad) = (320.0, 50.0);
    let x_max = points.iter().map(|p| p.0).fold(0.0f64, f64::max).max(1e-12);
    let px = |x: f64| pad + (WIDTH - 2.0 * pad) * x / x_max;
    let py = |y: f64| h - pad - (h - 2.0 * pad) * y.clamp(0.0, 1.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{h}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(out, r#"<line x1="{pad}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, h - pad, WIDTH - pad, h - pad);
    let _ = writeln!(out, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{:.1}" stroke="black"/>"#, h - pad);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#b04a4a"/>"##, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3"/>"#, px(x), py(y));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{x}</text>"#, px(x) - 6.0, h - pad + 16.0);
    }
    out.push_str("</svg>\n");
    out
}
