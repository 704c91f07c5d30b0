//! Self-contained SVG of two validation curves on a log-scaled y axis.

use std::fmt::Write as _;

use super::Fig1Result;
use crate::training::TrainingTrace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn decade_range(traces: &[&TrainingTrace]) -> (i32, i32) {
    let vals = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.val_rmse_norm))
        .filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-2, 0);
    }
    let lo = lo.log10().floor() as i32;
    let hi = (hi.log10().ceil() as i32).max(lo + 1);
    (lo, hi)
}

/// Validation normalized RMSE per round for both targets.
pub fn fig1_svg(result: &Fig1Result) -> String {
    let traces = [&result.matched, &result.mismatched];
    let (lo, hi) = decade_range(&traces);
    let rounds = traces
        .iter()
        .filter_map(|t| t.records.last().map(|r| r.round))
        .max()
        .unwrap_or(1)
        .max(1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |round: usize| LEFT + plot_w * round as f64 / rounds as f64;
    let y = |v: f64| {
        let t = (v.max(10f64.powi(lo)).log10() - lo as f64) / (hi - lo) as f64;
        TOP + plot_h * (1.0 - t)
    };

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for d in lo..=hi {
        let yy = y(10f64.powi(d));
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    for i in 0..=5 {
        let round = rounds * i / 5;
        let xx = x(round);
        let _ = writeln!(
            w,
            r#"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="black"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{round}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">boosting round</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">validation RMSE / std(target)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    let series = [
        (&result.matched, "#1f77b4", &result.summary.matched.expr),
        (&result.mismatched, "#d62728", &result.summary.mismatched.expr),
    ];
    for (i, (trace, color, label)) in series.iter().enumerate() {
        let points: Vec<String> = trace
            .records
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.round), y(r.val_rmse_norm)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w - 230.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0,
            lx + 30.0,
            escape(label)
        );
    }
    let _ = writeln!(w, "</svg>");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
