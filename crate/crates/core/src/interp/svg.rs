// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal single-file SVG plots with a fixed grayscale ramp.

use std::fmt::Write as _;

const CELL: f64 = 28.0;
const MARGIN: f64 = 40.0;

/// Maps `v` in `[lo, hi]` to a gray level: `lo` is white, `hi` black.
pub fn gray(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let g = (255.0 * (1.0 - t)).round() as u8;
    format!("#{g:02x}{g:02x}{g:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of `rows` (first row at the top) with values ramped over
/// `[lo, hi]`.
pub fn heatmap(title: &str, rows: &[Vec<f64>], lo: f64, hi: f64) -> String {
    let n_rows = rows.len();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let w = 2.0 * MARGIN + CELL * n_cols as f64;
    let h = 2.0 * MARGIN + CELL * n_rows as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"{}\">{}</text>",
        MARGIN / 2.0,
        escape(title)
    );
    for (r, row) in rows.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{r}</text>", MARGIN + CELL * (r as f64 + 0.6));
        for (c, &v) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"><title>{r},{c}: {v:.4}</title></rect>",
                MARGIN + CELL * c as f64,
                MARGIN + CELL * r as f64,
                gray(v, lo, hi)
            );
        }
    }
    for c in 0..n_cols {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{c}</text>",
            MARGIN + CELL * (c as f64 + 0.3),
            h - MARGIN / 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot of `(x, y, shade)` points, shade ramped over its range.
pub fn scatter(title: &str, points: &[(f64, f64, f64)]) -> String {
    let size = 480.0;
    let range = |f: fn(&(f64, f64, f64)) -> f64| {
        points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = range(|p| p.0);
    let (y0, y1) = range(|p| p.1);
    let (s0, s1) = range(|p| p.2);
    let sx = |x: f64| MARGIN + if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 } * (size - 2.0 * MARGIN);
    let sy = |y: f64| size - MARGIN - if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.5 } * (size - 2.0 * MARGIN);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"{}\">{}</text>",
        MARGIN / 2.0,
        escape(title)
    );
    for p in points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{}\"/>",
            sx(p.0),
            sy(p.1),
            gray(p.2, s0, s1)
        );
    }
    s.push_str("</svg>\n");
    s
}
