//! Static SVG line and scatter plots built from result tables.

use std::fmt::Write as _;

use super::output::Table;
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Solid,
    Dotted,
    Markers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
    /// Dotted vertical reference lines at these data x values.
    pub v_lines: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let t = if log { v.log10() } else { v };
            if t.is_finite() {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let pad = 0.03 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad, log }
    }

    fn transform(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    /// `(position in [0, 1], label)` pairs.
    fn ticks(&self) -> Vec<(f64, String)> {
        let (lo, hi) = (self.lo, self.hi);
        if self.log {
            let step = ((hi - lo) / 6.0).ceil().max(1.0);
            let mut e = (lo / step).ceil() * step;
            let mut out = Vec::new();
            while e <= hi {
                out.push(((e - lo) / (hi - lo), format!("1e{}", e as i64)));
                e += step;
            }
            return out;
        }
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut v = (lo / step).ceil() * step;
        let mut out = Vec::new();
        while v <= hi + 1e-9 * step {
            let label = if v.abs() < 1e-12 * step { "0".to_string() } else { format!("{}", (v / step).round() * step) };
            let label = if label.len() > 8 { format!("{v:.3e}") } else { label };
            out.push(((v - lo) / (hi - lo), label));
            v += step;
        }
        out
    }
}

pub fn render(fig: &Figure) -> String {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let xs = fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(fig.v_lines.iter().copied());
    let ys = fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let xa = Axis::fit(xs, fig.x_log);
    let ya = Axis::fit(ys, fig.y_log);
    let px = |x: f64| LEFT + xa.transform(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.transform(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&fig.title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (t, label) in xa.ticks() {
        let x = LEFT + t * pw;
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, escape(&label));
    }
    for (t, label) in ya.ticks() {
        let y = TOP + (1.0 - t) * ph;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, escape(&label));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(&fig.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&fig.y_label)
    );
    for &v in &fig.v_lines {
        let x = px(v);
        if x.is_finite() {
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#777" stroke-dasharray="2,3"/>"##, TOP + ph);
        }
    }
    for series in &fig.series {
        let color = PALETTE[series.color % PALETTE.len()];
        let pts: Vec<(f64, f64)> = series
            .points
            .iter()
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        match series.style {
            Style::Markers => {
                for &(x, y) in pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#);
                }
            }
            Style::Solid | Style::Dotted => {
                let dash = if series.style == Style::Dotted { r#" stroke-dasharray="2,3""# } else { "" };
                for run in pts.split(|p| !(p.0.is_finite() && p.1.is_finite())) {
                    if run.len() < 2 {
                        continue;
                    }
                    let coords: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                        coords.join(" ")
                    );
                }
            }
        }
    }
    let mut seen = Vec::new();
    let mut ly = TOP + 10.0;
    for series in &fig.series {
        if series.label.is_empty() || seen.contains(&series.label) {
            continue;
        }
        seen.push(series.label.clone());
        let color = PALETTE[series.color % PALETTE.len()];
        let lx = LEFT + pw + 12.0;
        match series.style {
            Style::Markers => {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{ly:.2}" r="3" fill="{color}"/>"#, lx + 10.0);
            }
            style => {
                let dash = if style == Style::Dotted { r#" stroke-dasharray="2,3""# } else { "" };
                let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/>"#, lx + 20.0);
            }
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label));
        ly += 18.0;
    }
    s.push_str("</svg>\n");
    s
}

/// Correct-rank frequency (or another column) against λ, one curve per table.
pub fn replication_figure(curves: &[(String, Table)], y_column: &str, title: &str) -> Result<Figure> {
    let mut series = Vec::new();
    for (i, (label, table)) in curves.iter().enumerate() {
        let x = table.column("lambda")?;
        let y = table.column(y_column)?;
        series.push(Series { label: label.clone(), points: x.into_iter().zip(y).collect(), style: Style::Solid, color: i });
    }
    Ok(Figure {
        title: title.into(),
        x_label: "lambda".into(),
        y_label: y_column.replace('_', " "),
        x_log: true,
        y_log: false,
        series,
        v_lines: Vec::new(),
    })
}

/// Best correct-rank error against `log₁₀‖Λ‖₂`; designs without a
/// correct-rank point are drawn in a second color.
pub fn scatter_figure(table: &Table, title: &str) -> Result<Figure> {
    let x = table.column("log10_lambda_norm")?;
    let y = table.column("best_error")?;
    let j = table.column_index("correct_rank_found")?;
    let (mut ok, mut flagged) = (Vec::new(), Vec::new());
    for (k, row) in table.rows.iter().enumerate() {
        if row[j] == "true" {
            ok.push((x[k], y[k]));
        } else {
            flagged.push((x[k], y[k]));
        }
    }
    let mut series = vec![Series { label: "correct rank".into(), points: ok, style: Style::Markers, color: 0 }];
    if !flagged.is_empty() {
        series.push(Series { label: "no correct rank".into(), points: flagged, style: Style::Markers, color: 1 });
    }
    Ok(Figure {
        title: title.into(),
        x_label: "log10 ||Lambda||_2".into(),
        y_label: "best error".into(),
        x_log: false,
        y_log: true,
        series,
        v_lines: vec![0.0],
    })
}

/// Singular values along a path: estimates solid, population values dotted.
pub fn path_figure(table: &Table, title: &str) -> Result<Figure> {
    let lambda = table.column("lambda")?;
    let mut series = Vec::new();
    let mut i = 1;
    while let Ok(s) = table.column(&format!("s{i}")) {
        series.push(Series {
            label: if i == 1 { "estimated".into() } else { String::new() },
            points: lambda.iter().copied().zip(s).collect(),
            style: Style::Solid,
            color: i - 1,
        });
        if let Ok(t) = table.column(&format!("true_s{i}")) {
            series.push(Series {
                label: if i == 1 { "population".into() } else { String::new() },
                points: lambda.iter().copied().zip(t).collect(),
                style: Style::Dotted,
                color: i - 1,
            });
        }
        i += 1;
    }
    Ok(Figure {
        title: title.into(),
        x_label: "lambda".into(),
        y_label: "singular values".into(),
        x_log: true,
        y_log: false,
        series,
        v_lines: Vec::new(),
    })
}
