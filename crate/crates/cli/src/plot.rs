//! Hand-written SVG line and scatter plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use choicenet::{Error, Result};

use crate::results::{Table, FINAL_EPOCH};
use crate::summary::median;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    RmseVsRate,
    LearningCurve,
    FitOverlay,
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse_vs_rate" => Ok(PlotKind::RmseVsRate),
            "learning_curve" => Ok(PlotKind::LearningCurve),
            "fit_overlay" => Ok(PlotKind::FitOverlay),
            _ => Err(Error::Config(format!(
                "unknown plot kind {s:?} (expected rmse_vs_rate, learning_curve or fit_overlay)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
    LineAndMarkers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Renders `fig`; fails with a data error when there is nothing to draw.
pub fn render(fig: &Figure) -> Result<String> {
    let series: Vec<Series> = fig
        .series
        .iter()
        .map(|s| Series {
            points: s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
            ..s.clone()
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    if series.is_empty() {
        return Err(Error::Data("nothing to plot: no series with finite points".into()));
    }
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&fig.title)).unwrap();

    writeln!(w, r#"<g class="axes" stroke="black" fill="none">"#).unwrap();
    writeln!(w, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/>"#, TOP + ph, LEFT + pw, TOP + ph).unwrap();
    writeln!(w, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/>"#, TOP + ph).unwrap();
    writeln!(w, "</g>").unwrap();
    writeln!(w, r#"<g class="ticks">"#).unwrap();
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        writeln!(w, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0).unwrap();
        writeln!(w, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(xv)).unwrap();
        writeln!(w, r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, tick_label(yv)).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(&fig.x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&fig.y_label)
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        writeln!(w, r#"<g class="series" data-label="{}">"#, escape(&s.label)).unwrap();
        if s.style != Style::Markers && s.points.len() > 1 {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            writeln!(w, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        }
        // A lone point on a line series still needs something visible.
        if s.style != Style::Line || s.points.len() == 1 {
            let r = if s.style == Style::Markers { 2.0 } else { 3.5 };
            for &(x, y) in &s.points {
                writeln!(w, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="{r}" fill="{colour}"/>"#, sx(x), sy(y)).unwrap();
            }
        }
        writeln!(w, "</g>").unwrap();
    }

    writeln!(w, r#"<g class="legend">"#).unwrap();
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        writeln!(w, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{colour}"/>"#, y - 2.0).unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, x + 20.0, y + 4.0, escape(&s.label)).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

/// Per-seed final metric: the `final` row when present, else the last epoch.
fn final_by_seed(t: &Table, keys: &[usize]) -> Result<BTreeMap<Vec<String>, BTreeMap<String, (f64, f64)>>> {
    let (seed, epoch, metric) = (t.column("seed")?, t.column("epoch")?, t.column("test_metric")?);
    let mut out: BTreeMap<Vec<String>, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        let key: Vec<String> = keys.iter().map(|&k| row[k].clone()).collect();
        let value = t.number(i, metric)?;
        let order = if row[epoch] == FINAL_EPOCH { f64::INFINITY } else { t.number(i, epoch)? };
        let slot = out.entry(key).or_default().entry(row[seed].clone()).or_insert((f64::NEG_INFINITY, f64::NAN));
        if order >= slot.0 {
            *slot = (order, value);
        }
    }
    Ok(out)
}

fn metric_label(t: &Table) -> &'static str {
    let is_acc = t.column("corruption_kind").ok().is_some_and(|c| {
        t.rows.iter().any(|r| matches!(r[c].as_str(), "symmetric" | "pairflip" | "biased_to_class" | "permutation"))
    });
    if is_acc { "test accuracy" } else { "test RMSE" }
}

/// Median final test metric against corruption rate, one series per method.
/// Accepts a results table or a summary table (`median_last`).
pub fn rmse_vs_rate(t: &Table) -> Result<Figure> {
    let method = t.column("method")?;
    let rate = t.column("corruption_rate")?;
    let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    if let Ok(m) = t.column("median_last") {
        for (i, row) in t.rows.iter().enumerate() {
            by_method.entry(row[method].clone()).or_default().push((t.number(i, rate)?, t.number(i, m)?));
        }
    } else {
        for (key, seeds) in final_by_seed(t, &[method, rate])? {
            let r: f64 = key[1].parse().map_err(|_| Error::Data(format!("bad corruption_rate {:?}", key[1])))?;
            let values: Vec<f64> = seeds.values().map(|v| v.1).collect();
            by_method.entry(key[0].clone()).or_default().push((r, median(&values)));
        }
    }
    let series = by_method
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points, style: Style::LineAndMarkers }
        })
        .collect();
    Ok(Figure {
        title: "Final test metric vs corruption rate (median over seeds)".into(),
        x_label: "corruption rate".into(),
        y_label: metric_label(t).into(),
        series,
    })
}

/// Median per-epoch test metric, one series per `(method, rate)`.
pub fn learning_curve(t: &Table) -> Result<Figure> {
    let (method, rate, epoch, metric) =
        (t.column("method")?, t.column("corruption_rate")?, t.column("epoch")?, t.column("test_metric")?);
    let mut acc: BTreeMap<(String, String), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        if row[epoch] == FINAL_EPOCH {
            continue;
        }
        let e = t.number(i, epoch)? as u64;
        acc.entry((row[method].clone(), row[rate].clone())).or_default().entry(e).or_default().push(t.number(i, metric)?);
    }
    let series = acc
        .into_iter()
        .map(|((m, r), epochs)| Series {
            label: format!("{m} @ {r}"),
            points: epochs.into_iter().map(|(e, v)| (e as f64, median(&v))).collect(),
            style: Style::Line,
        })
        .collect();
    Ok(Figure {
        title: "Learning curves (median over seeds)".into(),
        x_label: "epoch".into(),
        y_label: metric_label(t).into(),
        series,
    })
}

/// Training scatter (`data`), reference curve and model curves from a fit CSV.
pub fn fit_overlay(t: &Table) -> Result<Figure> {
    let (series_col, x, y) = (t.column("series")?, t.column("x")?, t.column("y")?);
    let mut order: Vec<String> = Vec::new();
    let mut points: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        let name = row[series_col].clone();
        if !points.contains_key(&name) {
            order.push(name.clone());
        }
        points.entry(name).or_default().push((t.number(i, x)?, t.number(i, y)?));
    }
    let series = order
        .into_iter()
        .map(|label| {
            let mut pts = points.remove(&label).expect("collected");
            let style = if label == "data" {
                Style::Markers
            } else {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                Style::Line
            };
            Series { label, points: pts, style }
        })
        .collect();
    Ok(Figure { title: "Fit overlay".into(), x_label: "x".into(), y_label: "y".into(), series })
}

pub fn figure(kind: PlotKind, t: &Table) -> Result<Figure> {
    match kind {
        PlotKind::RmseVsRate => rmse_vs_rate(t),
        PlotKind::LearningCurve => learning_curve(t),
        PlotKind::FitOverlay => fit_overlay(t),
    }
}
