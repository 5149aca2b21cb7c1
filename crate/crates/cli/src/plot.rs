//! Static SVG charts. The plotted numbers are embedded as a CSV table in
//! `<desc>` so a figure can be checked without the run directory.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
    /// Grouped bars; x values are category positions.
    Bars,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub style: Style,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, style: Style, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            style,
            points,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Category labels for bar charts, by position.
    pub categories: Vec<String>,
    /// Horizontal reference line (e.g. ratio 1).
    pub reference: Option<f64>,
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// About five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).abs().max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1e6).round() / 1e6)
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

pub fn render(chart: &Chart, stamp: &str) -> String {
    let bars = chart.series.iter().any(|s| s.style == Style::Bars);
    let (mut x0, mut x1) = bounds(chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    if bars {
        let n = chart.categories.len().max(1) as f64;
        x0 = -0.5;
        x1 = n - 0.5;
    }
    let ys = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (mut y0, mut y1) = bounds(ys.chain(chart.reference));
    if bars {
        y0 = y0.min(0.0);
        y1 = y1.max(0.0);
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<metadata>{}</metadata>", esc(stamp));
    let _ = writeln!(s, "<title>{}</title>", esc(&chart.title));
    s.push_str("<desc>series,x,y\n");
    for ser in &chart.series {
        for &(x, y) in &ser.points {
            let _ = writeln!(s, "{},{x},{y}", esc(&ser.name));
        }
    }
    s.push_str("</desc>\n");
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        esc(&chart.title)
    );

    // Axes and grid.
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            label(t)
        );
    }
    if bars {
        for (i, c) in chart.categories.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64),
                TOP + ph + 18.0,
                esc(c)
            );
        }
    } else {
        for t in ticks(x0, x1) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(t),
                TOP + ph + 18.0,
                label(t)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 18.0,
        esc(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&chart.y_label)
    );
    if let Some(r) = chart.reference {
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
            sy(r),
            LEFT + pw
        );
    }

    // Data.
    let bar_series = chart.series.iter().filter(|s| s.style == Style::Bars).count().max(1) as f64;
    let slot = pw / (x1 - x0) * 0.8;
    let mut bar_index = 0.0;
    for (i, ser) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match ser.style {
            Style::Line => {
                let pts: Vec<String> = ser
                    .points
                    .iter()
                    .filter(|p| p.1.is_finite())
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            Style::Points => {
                for &(x, y) in ser.points.iter().filter(|p| p.1.is_finite()) {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                        sx(x),
                        sy(y)
                    );
                }
            }
            Style::Bars => {
                let bw = slot / bar_series;
                for &(x, y) in ser.points.iter().filter(|p| p.1.is_finite()) {
                    let left = sx(x) - slot / 2.0 + bar_index * bw;
                    let (top, bottom) = (sy(y.max(0.0)), sy(y.min(0.0)));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{left:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="{color}"/>"#,
                        (bottom - top).max(0.5)
                    );
                }
                bar_index += 1.0;
            }
        }
        let ly = TOP + 14.0 + i as f64 * 18.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 10.0,
            lx + 18.0,
            ly,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.03, 0.97);
        assert!(t.len() >= 4 && t.len() <= 7, "{t:?}");
        assert!(t.iter().all(|&v| (0.03..=0.97).contains(&v)));
    }

    #[test]
    fn data_table_and_stamp_are_embedded() {
        let chart = Chart {
            title: "a < b".into(),
            series: vec![Series::new("s", Style::Line, vec![(1.0, 2.0), (2.0, 3.5)])],
            ..Default::default()
        };
        let svg = render(&chart, "gmmd-version=0 spec-hash=ab");
        assert!(svg.contains("s,2,3.5"));
        assert!(svg.contains("<metadata>gmmd-version=0 spec-hash=ab</metadata>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg, render(&chart, "gmmd-version=0 spec-hash=ab"));
    }

    #[test]
    fn degenerate_inputs_render() {
        let chart = Chart {
            series: vec![Series::new("flat", Style::Bars, vec![(0.0, 0.0)])],
            categories: vec!["x".into()],
            ..Default::default()
        };
        assert!(render(&chart, "").ends_with("</svg>\n"));
        assert!(render(&Chart::default(), "").contains("<desc>"));
    }
}
