//! Minimal static SVG rendering for sweep curves and confusion heatmaps.

use super::{ConfusionReport, SweepResults};
use crate::gesture::NUM_CLASSES;
use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Mean macro-F1 against the swept value, with one-standard-deviation bars.
pub fn sweep_svg(results: &SweepResults) -> String {
    let mut s = header(W, H);
    let pts = &results.points;
    let (x0, x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.value), b.max(p.value))
        });
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| MARGIN + (v - x0) / span * (W - 2.0 * MARGIN);
    let py = |v: f64| H - MARGIN - v.clamp(0.0, 1.0) * (H - 2.0 * MARGIN);
    let _ = writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t:.2}</text>",
            MARGIN - 4.0,
            py(t) + 4.0
        );
    }
    for p in pts {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(p.value),
            H - MARGIN + 14.0,
            p.value
        );
        let (lo, hi) = (
            p.macro_f1.mean - p.macro_f1.std,
            p.macro_f1.mean + p.macro_f1.std,
        );
        let _ = writeln!(
            s,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"gray\"/>",
            py(lo),
            py(hi),
            x = px(p.value)
        );
    }
    let path: Vec<String> = pts
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.value), py(p.macro_f1.mean)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
        path.join(" ")
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{} ({}), macro-F1</text>",
        W / 2.0,
        H - 8.0,
        results.axis,
        results.kind
    );
    s.push_str("</svg>\n");
    s
}

/// Row-normalized confusion matrix as a grayscale grid with raw counts.
pub fn confusion_svg(report: &ConfusionReport) -> String {
    let cell = 48.0;
    let side = MARGIN + cell * NUM_CLASSES as f64 + 16.0;
    let mut s = header(side, side);
    for r in 0..NUM_CLASSES {
        for c in 0..NUM_CLASSES {
            let v = report.normalized[r][c];
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let (x, y) = (MARGIN + c as f64 * cell, MARGIN + r as f64 * cell);
            let text = if v > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\" stroke=\"#ccc\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text}\">{}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                report.raw[r][c]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{r}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{r}</text>",
            MARGIN - 6.0,
            MARGIN + r as f64 * cell + cell / 2.0 + 4.0,
            MARGIN + r as f64 * cell + cell / 2.0,
            MARGIN - 8.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"4\" y=\"14\">rows: true, columns: predicted</text>"
    );
    s.push_str("</svg>\n");
    s
}
