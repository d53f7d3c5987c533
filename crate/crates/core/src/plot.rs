//! Deterministic SVG figures: component functions, contour charts with score
//! scatter, spaghetti plots of growth paths and screening-power heat maps.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::contour::{ContourChart, ANGULAR_GRID};
use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::simharness::PowerReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A labeled series of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for &(a, b) in points {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let pad = |r: (f64, f64)| {
            if !r.0.is_finite() {
                return (0.0, 1.0);
            }
            let w = (r.1 - r.0).max(1e-9 * r.0.abs().max(1.0));
            (r.0 - 0.05 * w, r.1 + 0.05 * w)
        };
        Frame { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        "<g class=\"axes\" stroke=\"black\" fill=\"none\"><line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\"/><line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\"/></g>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            frame.px(xv),
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            frame.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn points_attr(frame: &Frame, pts: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", frame.px(x), frame.py(y));
    }
    s
}

fn legend(out: &mut String, entries: &[(String, &str, bool)]) {
    for (i, (label, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            x + 24.0
        );
        let _ = writeln!(
            out,
            "<text class=\"label\" x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            x + 30.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Line plot of labeled curves, one `<polyline class="curve">` each.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<String> {
    if series.iter().any(|s| s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite())) {
        return Err(Error::InvalidInput("non-finite value in plotted series".into()));
    }
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, xlabel, ylabel);
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<polyline class=\"curve\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points_attr(&frame, &s.points)
        );
        entries.push((s.label.clone(), color, false));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Score scatter with the chart's contours at `levels`, each a closed
/// `<polygon class="contour">`, and optional labeled highlighted points.
pub fn chart_plot(
    chart: &ContourChart,
    scores: &DMatrix<f64>,
    levels: &[f64],
    highlights: &[(String, [f64; 2])],
) -> Result<String> {
    if scores.ncols() < 2 {
        return Err(Error::InvalidInput("chart plot needs two score columns".into()));
    }
    let mut polygons = Vec::with_capacity(levels.len());
    for &tau in levels {
        let idx = chart
            .level_index(tau)
            .ok_or_else(|| Error::InvalidInput(format!("level {tau} is not on the chart's grid")))?;
        let pts: Vec<(f64, f64)> = chart.polyline(idx, ANGULAR_GRID).iter().map(|p| (p[2], p[3])).collect();
        polygons.push((tau, pts));
    }
    let scatter: Vec<(f64, f64)> = (0..scores.nrows()).map(|i| (scores[(i, 0)], scores[(i, 1)])).collect();
    let marks: Vec<(f64, f64)> = highlights.iter().map(|(_, p)| (p[0], p[1])).collect();
    let frame = Frame::fit(scatter.iter().chain(polygons.iter().flat_map(|p| p.1.iter())).chain(marks.iter()));
    let mut out = String::new();
    header(&mut out, "Component scores with quantile contours");
    axes(&mut out, &frame, "first component score", "second component score");
    let _ = writeln!(out, "<g class=\"scatter\" fill=\"#888888\" fill-opacity=\"0.6\">");
    for &(x, y) in &scatter {
        let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\"/>", frame.px(x), frame.py(y));
    }
    out.push_str("</g>\n");
    let mut entries = Vec::new();
    for (i, (tau, pts)) in polygons.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<polygon class=\"contour\" data-level=\"{tau}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points_attr(&frame, pts)
        );
        entries.push((format!("level {tau}"), color, false));
    }
    for (label, p) in highlights {
        let (x, y) = (frame.px(p[0]), frame.py(p[1]));
        let _ = writeln!(
            out,
            "<g class=\"highlight\"><circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\">{}</text></g>",
            x + 7.0,
            y - 7.0,
            escape(label)
        );
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Observed paths in gray, an optional reference curve dashed, and
/// highlighted subjects in color.
pub fn paths_plot(data: &SparseDataset, reference: Option<&Series>, highlight: &[String]) -> Result<String> {
    for id in highlight {
        if !data.subjects().iter().any(|s| &s.id == id) {
            return Err(Error::InvalidInput(format!("subject {id} not found")));
        }
    }
    let paths: Vec<(String, Vec<(f64, f64)>)> = data
        .subjects()
        .iter()
        .map(|s| (s.id.clone(), s.times.iter().copied().zip(s.values.iter().copied()).collect()))
        .collect();
    let frame = Frame::fit(paths.iter().flat_map(|p| p.1.iter()).chain(reference.iter().flat_map(|r| r.points.iter())));
    let mut out = String::new();
    header(&mut out, "Growth paths");
    axes(&mut out, &frame, "time", "value");
    let _ = writeln!(out, "<g class=\"paths\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"1\">");
    for (id, pts) in &paths {
        if !highlight.contains(id) {
            let _ = writeln!(out, "<polyline points=\"{}\"/>", points_attr(&frame, pts));
        }
    }
    out.push_str("</g>\n");
    let mut entries = Vec::new();
    if let Some(r) = reference {
        let _ = writeln!(
            out,
            "<polyline class=\"reference\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"6 4\" points=\"{}\"/>",
            points_attr(&frame, &r.points)
        );
        entries.push((r.label.clone(), "black", true));
    }
    for (i, id) in highlight.iter().enumerate() {
        let color = PALETTE[(i + 1) % PALETTE.len()];
        let pts = &paths.iter().find(|p| &p.0 == id).map(|p| p.1.clone()).unwrap_or_default();
        let _ = writeln!(
            out,
            "<polyline class=\"highlight\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2.5\" points=\"{}\"/>",
            points_attr(&frame, pts)
        );
        for &(x, y) in pts {
            let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", frame.px(x), frame.py(y));
        }
        entries.push((id.clone(), color, false));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Heat map of flag rates with the percentage printed in every cell.
pub fn power_plot(report: &PowerReport) -> Result<String> {
    let mut a_values: Vec<f64> = Vec::new();
    let mut b_values: Vec<f64> = Vec::new();
    for c in &report.cells {
        if !a_values.contains(&c.a) {
            a_values.push(c.a);
        }
        if !b_values.contains(&c.b) {
            b_values.push(c.b);
        }
    }
    if a_values.is_empty() {
        return Err(Error::InvalidInput("power report has no cells".into()));
    }
    let cw = (WIDTH - LEFT - RIGHT) / b_values.len() as f64;
    let ch = (HEIGHT - TOP - BOTTOM) / a_values.len() as f64;
    let mut out = String::new();
    header(&mut out, &format!("Percent flagged at level {}", report.level));
    for (i, a) in a_values.iter().enumerate() {
        for (j, b) in b_values.iter().enumerate() {
            let Some(cell) = report.cell(*a, *b) else { continue };
            let x = LEFT + j as f64 * cw;
            let y = TOP + i as f64 * ch;
            let v = if cell.mean.is_finite() { cell.mean.clamp(0.0, 1.0) } else { 0.0 };
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb(255,{shade},{shade})\" stroke=\"white\"/>"
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{:.1}</text>",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0,
                100.0 * cell.mean
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">A={a}</text>",
            LEFT - 6.0,
            TOP + (i as f64 + 0.5) * ch + 4.0
        );
    }
    for (j, b) in b_values.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">B={b}</text>",
            LEFT + (j as f64 + 0.5) * cw,
            HEIGHT - BOTTOM + 18.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
