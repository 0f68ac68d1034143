//! Minimal SVG line charts: one stacked panel per series, shared time axis.

use std::fmt::Write as _;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;

const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const GAP: f64 = 40.0;

pub struct Series<'a> {
    pub label: String,
    pub values: &'a [f64],
}

/// Renders each series in its own panel against `times` (seconds), with
/// x-axis ticks every second.
pub fn line_chart(title: &str, times: &[f64], series: &[Series<'_>]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();

    let panels = series.len().max(1) as f64;
    let panel_h = (HEIGHT - TOP - BOTTOM - GAP * (panels - 1.0)) / panels;
    let plot_w = WIDTH - LEFT - RIGHT;
    let t0 = times.first().copied().unwrap_or(0.0);
    let t1 = times.last().copied().unwrap_or(1.0).max(t0 + f64::EPSILON);
    let sx = |t: f64| LEFT + (t - t0) / (t1 - t0) * plot_w;

    for (k, s) in series.iter().enumerate() {
        let y_top = TOP + k as f64 * (panel_h + GAP);
        let y_bot = y_top + panel_h;
        let (mut lo, mut hi) = s
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        if hi - lo < 1e-300 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let sy = |v: f64| y_bot - (v - lo) / (hi - lo) * panel_h;

        writeln!(
            out,
            r##"<rect x="{LEFT}" y="{y_top:.2}" width="{plot_w}" height="{panel_h:.2}" fill="none" stroke="#444"/>"##
        )
        .unwrap();
        if lo < 0.0 && hi > 0.0 {
            let y0 = sy(0.0);
            writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
                LEFT + plot_w
            )
            .unwrap();
        }
        for (v, anchor) in [(hi, y_top + 10.0), (lo, y_bot - 2.0)] {
            writeln!(
                out,
                r#"<text x="{:.2}" y="{anchor:.2}" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                tick_label(v)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
            (y_top + y_bot) / 2.0,
            (y_top + y_bot) / 2.0,
            escape(&s.label)
        )
        .unwrap();

        let mut tick = t0.ceil();
        while tick <= t1 + 1e-9 {
            let x = sx(tick);
            writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{y_bot:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/>"##,
                y_bot + 4.0
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"#,
                y_bot + 15.0
            )
            .unwrap();
            tick += 1.0;
        }

        let mut path = String::new();
        for (i, (&t, &v)) in times.iter().zip(s.values).enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(path, "{cmd}{:.2},{:.2} ", sx(t), sy(v)).unwrap();
        }
        writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
            path.trim_end()
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
