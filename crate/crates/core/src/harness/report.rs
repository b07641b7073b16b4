use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{RunRecord, SummaryRow};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Svg,
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path, &["experiment_id", "preset", "seed", "metric", "phase", "value", "ci_low", "ci_high"])
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}

pub fn write_records_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        records,
        path,
        &[
            "seed",
            "phase",
            "epoch",
            "step",
            "online_reward",
            "rated_reward",
            "heldout_bleu",
            "loss",
            "wall_clock_s",
        ],
    )
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    read_csv(path)
}

fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>, header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Writes `records` to `path` as CSV, or as the online-reward chart.
pub fn emit_report(records: &[RunRecord], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    match format {
        ReportFormat::Csv => write_records_csv(records, path),
        ReportFormat::Svg => {
            fs::write(path, online_reward_svg(records))?;
            Ok(())
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Frame {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.filter(|x| x.is_finite())
        .fold(None, |acc: Option<(f64, f64)>, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
        .unwrap_or((0.0, 1.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for (v, y) in [(f.y0, b), (f.y1, t)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, l - 4.0, y + 4.0, v);
    }
    for (v, x) in [(f.x0, l), (f.x1, r)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, trim(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Online reward against bandit step, one polyline per seed.
pub fn online_reward_svg(records: &[RunRecord]) -> String {
    let mut by_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase == "bandit") {
        if let Some(v) = r.online_reward {
            by_seed.entry(r.seed).or_default().push((r.step as f64, v));
        }
    }
    let pts = by_seed.values().flatten();
    let frame = Frame::new(pts.clone().map(|p| p.0), pts.map(|p| p.1));
    let mut s = open_svg("Online reward", "bandit step", "running mean sentence BLEU", &frame);
    for (i, (seed, line)) in by_seed.iter().enumerate() {
        let points: Vec<String> = line
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-seed="{seed}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub mean: f64,
    pub half_width: f64,
}

/// Mean ΔS against the sweep parameter with confidence whiskers.
pub fn sweep_svg(title: &str, parameter: &str, points: &[SweepPoint]) -> String {
    let frame = Frame::new(
        points.iter().map(|p| p.x),
        points
            .iter()
            .flat_map(|p| [p.mean - p.half_width, p.mean + p.half_width, 0.0]),
    );
    let mut s = open_svg(title, parameter, "delta", &frame);
    let zero = frame.py(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        WIDTH - MARGIN
    );
    let line: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", frame.px(p.x), frame.py(p.mean)))
        .collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, COLORS[0], line.join(" "));
    for p in points {
        let x = frame.px(p.x);
        let (lo, hi) = (frame.py(p.mean - p.half_width), frame.py(p.mean + p.half_width));
        let _ = writeln!(s, r#"<line class="whisker" x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{}"/>"#, frame.py(p.mean), COLORS[0]);
    }
    s.push_str("</svg>\n");
    s
}
