//! Self-contained SVG figures plus the CSV they are drawn from.
//!
//! Output depends only on the input values, so re-rendering the same CSV
//! produces identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dvf_core::envs::MazeSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::eval::{CorrelationPoint, SampleSet};
use crate::train::MetricsRow;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            return Self { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn map(&self, v: f64, out_lo: f64, out_hi: f64) -> f64 {
        out_lo + (v - self.lo) / (self.hi - self.lo) * (out_hi - out_lo)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str, w: f64, h: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    s
}

fn frame(s: &mut String, xa: Axis, ya: Axis, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 1.5);
    let _ = writeln!(s, r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xa.lo + f * (xa.hi - xa.lo);
        let yv = ya.lo + f * (ya.hi - ya.lo);
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 14.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 8.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" text-anchor="middle" transform="rotate(-90 12 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Scatter of `(x, y)` pairs; `groups[i]` picks the colour of point `i`.
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], groups: &[usize]) -> String {
    let xa = Axis::fit(points.iter().map(|p| p.0));
    let ya = Axis::fit(points.iter().map(|p| p.1));
    let mut s = header(title, W, H);
    frame(&mut s, xa, ya, xlabel, ylabel);
    for (i, p) in points.iter().enumerate() {
        if !(p.0.is_finite() && p.1.is_finite()) {
            continue;
        }
        let colour = PALETTE[groups.get(i).copied().unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{colour}" fill-opacity="0.6"/>"#,
            xa.map(p.0, MARGIN, W - MARGIN / 2.0),
            ya.map(p.1, H - MARGIN, MARGIN / 1.5)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Named series against a shared x axis; non-finite values break the line.
pub fn lines_svg(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let xa = Axis::fit(xs.iter().copied());
    let ya = Axis::fit(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = header(title, W, H);
    frame(&mut s, xa, ya, xlabel, ylabel);
    for (k, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for (x, y) in xs.iter().zip(ys) {
            if !y.is_finite() {
                pen_down = false;
                continue;
            }
            let cmd = if pen_down { 'L' } else { 'M' };
            let _ = write!(path, "{cmd}{:.2},{:.2} ", xa.map(*x, MARGIN, W - MARGIN / 2.0), ya.map(*y, H - MARGIN, MARGIN / 1.5));
            pen_down = true;
        }
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.2"/>"#, path.trim_end());
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
            MARGIN + 6.0,
            MARGIN / 1.5 + 14.0 * (k + 1) as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Sample clouds drawn over the wall grid, one colour per set.
pub fn maze_svg(title: &str, spec: &MazeSpec, sets: &[SampleSet]) -> String {
    let scale = 40.0;
    let (w, h) = (spec.cols() as f64 * scale, spec.rows() as f64 * scale + 24.0);
    let mut s = header(title, w, h);
    // x runs along columns, y upward from the bottom row.
    for r in 0..spec.rows() {
        for c in 0..spec.cols() {
            if spec.is_wall((r, c)) {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{:.1}" width="{scale:.1}" height="{scale:.1}" fill="#444"/>"##,
                    c as f64 * scale,
                    24.0 + r as f64 * scale
                );
            }
        }
    }
    for (k, set) in sets.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        for &(x, y) in &set.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="{colour}" fill-opacity="0.5"/>"#,
                x / spec.cell_size * scale,
                24.0 + (spec.rows() as f64 - y / spec.cell_size) * scale
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

pub fn sample_rows(sets: &[SampleSet]) -> Vec<SampleRow> {
    sets.iter()
        .flat_map(|s| {
            s.points.iter().map(|&(x, y)| SampleRow {
                label: s.label.clone(),
                x,
                y,
            })
        })
        .collect()
}

/// Regroups rows into sets in order of first appearance.
pub fn sample_sets(rows: &[SampleRow]) -> Vec<SampleSet> {
    let mut sets: Vec<SampleSet> = Vec::new();
    for r in rows {
        match sets.iter_mut().find(|s| s.label == r.label) {
            Some(s) => s.points.push((r.x, r.y)),
            None => sets.push(SampleSet {
                label: r.label.clone(),
                points: vec![(r.x, r.y)],
            }),
        }
    }
    sets
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let err = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|x| x.map_err(err)).collect()
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Everything a figure set can be drawn from.
#[derive(Debug, Clone, Default)]
pub struct FigureInputs<'a> {
    pub metrics: &'a [MetricsRow],
    pub correlation: &'a [CorrelationPoint],
    pub samples: &'a [SampleSet],
    pub maze: Option<&'a MazeSpec>,
}

/// Writes every figure the inputs support, each next to the CSV it is
/// drawn from, creating `out` if needed. Returns the files written.
pub fn emit_figures(inputs: &FigureInputs<'_>, out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.metrics.is_empty() && inputs.correlation.is_empty() && inputs.samples.is_empty() {
        return Err(HarnessError::Config("nothing to plot".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut files = Vec::new();
    if !inputs.metrics.is_empty() {
        let path = out.join("metrics.csv");
        write_csv(&path, inputs.metrics)?;
        files.push(path);
        let xs: Vec<f64> = inputs.metrics.iter().map(|r| r.step as f64).collect();
        let col = |f: fn(&MetricsRow) -> Option<f64>| inputs.metrics.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect::<Vec<_>>();
        let losses = [
            ("diffusion", col(|r| Some(r.diffusion_loss))),
            ("reward", col(|r| r.reward_loss)),
            ("policy", col(|r| r.policy_loss)),
        ];
        files.push(write_file(&out.join("losses.svg"), &lines_svg("training losses", "step", "loss", &xs, &losses))?);
        let values = [("mean V", col(|r| r.mean_v)), ("eval return", col(|r| r.eval_return))];
        files.push(write_file(&out.join("values.svg"), &lines_svg("value and return", "step", "value", &xs, &values))?);
    }
    if !inputs.correlation.is_empty() {
        let path = out.join("correlation.csv");
        write_csv(&path, inputs.correlation)?;
        files.push(path);
        let groups: Vec<usize> = inputs.correlation.iter().map(|p| p.checkpoint).collect();
        let rv: Vec<(f64, f64)> = inputs.correlation.iter().map(|p| (p.value, p.mc_return)).collect();
        files.push(write_file(
            &out.join("returns_vs_value.svg"),
            &scatter_svg("returns versus value estimate", "V estimate", "Monte-Carlo return", &rv, &groups),
        )?);
        let vr: Vec<(f64, f64)> = inputs.correlation.iter().map(|p| (p.value, p.future_reward)).collect();
        files.push(write_file(
            &out.join("value_vs_future_reward.svg"),
            &scatter_svg("value versus future reward", "V estimate", "mean reward at sampled futures", &vr, &groups),
        )?);
    }
    if !inputs.samples.is_empty() {
        let path = out.join("samples.csv");
        write_csv(&path, &sample_rows(inputs.samples))?;
        files.push(path);
        let svg = match inputs.maze {
            Some(spec) => maze_svg("sampled future states", spec, inputs.samples),
            None => {
                let pts: Vec<(f64, f64)> = inputs.samples.iter().flat_map(|s| s.points.iter().copied()).collect();
                let groups: Vec<usize> = inputs.samples.iter().enumerate().flat_map(|(k, s)| std::iter::repeat_n(k, s.points.len())).collect();
                scatter_svg("sampled future states", "x", "y", &pts, &groups)
            }
        };
        files.push(write_file(&out.join("samples.svg"), &svg)?);
    }
    Ok(files)
}
