//! Minimal SVG charts. Bar charts draw exactly one `<rect>` per bar; axes
//! and labels use other elements.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChartBar {
    pub label: String,
    pub value: f64,
    /// Drawn in the highlight colour when set.
    pub highlight: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, y_max: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<text x=\"{MARGIN}\" y=\"20\" font-size=\"14\">{}</text>", escape(title));
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>", x0 - 4.0, y0 + 4.0);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        x0 - 4.0,
        y1 + 4.0,
        fmt_value(y_max)
    );
    s
}

fn fmt_value(v: f64) -> String {
    format!("{v:.3}")
}

fn axis_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Vertical bars from zero; an optional dashed line marks `threshold`.
pub fn bar_chart(title: &str, bars: &[ChartBar], threshold: Option<f64>) -> String {
    let y_max = axis_max(bars.iter().map(|b| b.value).chain(threshold));
    let mut s = open(title, y_max);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let base = HEIGHT - MARGIN;
    if !bars.is_empty() {
        let slot = plot_w / bars.len() as f64;
        for (i, b) in bars.iter().enumerate() {
            let h = (b.value.max(0.0) / y_max).min(1.0) * plot_h;
            let x = MARGIN + i as f64 * slot + slot * 0.1;
            let fill = if b.highlight { "#d9534f" } else { "#4a7ab5" };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{fill}\"><title>{}: {}</title></rect>",
                base - h,
                slot * 0.8,
                escape(&b.label),
                b.value
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                x + slot * 0.4,
                base + 14.0,
                escape(&b.label)
            );
        }
    }
    if let Some(t) = threshold {
        let y = base - (t / y_max).min(1.0) * plot_h;
        let _ = writeln!(
            s,
            "<line x1=\"{MARGIN}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>",
            WIDTH - MARGIN / 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline over evenly spaced points.
pub fn line_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let y_max = axis_max(values.iter().copied());
    let mut s = open(title, y_max);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let base = HEIGHT - MARGIN;
    if !values.is_empty() {
        let step = plot_w / values.len() as f64;
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = MARGIN + (i as f64 + 0.5) * step;
                let y = base - (v.max(0.0) / y_max).min(1.0) * plot_h;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#4a7ab5\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        for (i, label) in labels.iter().enumerate().take(values.len()) {
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                MARGIN + (i as f64 + 0.5) * step,
                base + 14.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
