//! Plain SVG rendering of sweep outputs. Output is a pure function of the
//! input CSV, with every coordinate printed at fixed precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::analytic::{fmt_num, SWEEP_HEADER};
use crate::metrics::{mean, parse_results_csv, ResultRow, RESULTS_HEADER};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlotError {
    #[error("unrecognized csv header `{0}`")]
    UnknownHeader(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no data rows")]
    Empty,
}

/// A rendered figure: file name and SVG text.
pub type Figure = (String, String);

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;

/// Renders whichever CSV `text` holds: a speedup sweep or simulation results.
pub fn render_csv(text: &str) -> Result<Vec<Figure>, PlotError> {
    let header = text.lines().next().unwrap_or("").trim();
    if header == SWEEP_HEADER {
        heatmaps(text)
    } else if header == RESULTS_HEADER {
        let rows = parse_results_csv(text).map_err(|msg| PlotError::Parse { line: 0, msg })?;
        line_charts(&rows)
    } else {
        Err(PlotError::UnknownHeader(header.to_string()))
    }
}

struct Cell {
    alpha: f64,
    ratio: f64,
    speedup: f64,
}

/// One heatmap of speedup over (g/G, alpha) per tool time.
pub fn heatmaps(text: &str) -> Result<Vec<Figure>, PlotError> {
    let mut by_t: BTreeMap<String, (f64, Vec<Cell>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| PlotError::Parse { line: i + 1, msg };
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let n = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let (alpha, ratio, t, speedup) = (n(f[0])?, n(f[1])?, n(f[2])?, n(f[3])?);
        // key sorts numerically for non-negative values
        let key = format!("{:020.9}", t);
        by_t.entry(key).or_insert((t, Vec::new())).1.push(Cell { alpha, ratio, speedup });
    }
    if by_t.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(by_t.into_values().map(|(t, cells)| (format!("speedup_T{}.svg", fmt_num(t)), heatmap_svg(t, &cells))).collect())
}

fn axis_values(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn color(v: f64, lo: f64, hi: f64) -> String {
    let x = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let r = (255.0 * x).round() as u8;
    let b = (255.0 * (1.0 - x)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

fn heatmap_svg(t: f64, cells: &[Cell]) -> String {
    let xs = axis_values(cells.iter().map(|c| c.ratio));
    let ys = axis_values(cells.iter().map(|c| c.alpha));
    let lo = cells.iter().map(|c| c.speedup).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c.speedup).fold(f64::NEG_INFINITY, f64::max);
    let cw = (W - 2.0 * PAD) / xs.len() as f64;
    let ch = (H - 2.0 * PAD) / ys.len() as f64;
    let mut s = open(&format!("speedup, T = {}", fmt_num(t)));
    for c in cells {
        let xi = xs.iter().position(|&x| x == c.ratio).unwrap_or(0) as f64;
        let yi = ys.iter().position(|&y| y == c.alpha).unwrap_or(0) as f64;
        let x = PAD + xi * cw;
        let y = H - PAD - (yi + 1.0) * ch;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"><title>alpha={} g/G={} speedup={:.4}</title></rect>"#,
            color(c.speedup, lo, hi),
            fmt_num(c.alpha),
            fmt_num(c.ratio),
            c.speedup
        );
    }
    for (i, x) in xs.iter().enumerate() {
        let cx = PAD + (i as f64 + 0.5) * cw;
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#, H - PAD + 14.0, fmt_num(*x));
    }
    for (i, y) in ys.iter().enumerate() {
        let cy = H - PAD - (i as f64 + 0.5) * ch;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{cy:.2}" text-anchor="end" font-size="10">{}</text>"#, PAD - 4.0, fmt_num(*y));
    }
    labels(&mut s, "g/G", "alpha");
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10">range {:.4} to {:.4}</text>"#, W - PAD - 120.0, PAD - 8.0, lo, hi);
    close(s)
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn labels(s: &mut String, x: &str, y: &str) {
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 20.0, escape(x));
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.2})">{}</text>"#, H / 2.0, H / 2.0, escape(y));
}

fn close(mut s: String) -> String {
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// x value and the (time saved, throughput) samples at it.
type Column = (f64, Vec<(f64, f64)>);

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Time saved and throughput against mean tool latency, one series per
/// mode, alpha and lambda, averaged over repetitions.
pub fn line_charts(rows: &[ResultRow]) -> Result<Vec<Figure>, PlotError> {
    if rows.is_empty() {
        return Err(PlotError::Empty);
    }
    let mut series: BTreeMap<String, BTreeMap<String, Column>> = BTreeMap::new();
    for r in rows {
        let name = format!("{} a={} l={}", r.mode, fmt_num(r.alpha), r.lambda);
        let x_key = format!("{:020.9}", r.tool_mean);
        series
            .entry(name)
            .or_default()
            .entry(x_key)
            .or_insert((r.tool_mean, Vec::new()))
            .1
            .push((r.time_saved_pct, r.throughput));
    }
    let pts = |pick: fn(&(f64, f64)) -> f64| -> Vec<(String, Vec<(f64, f64)>)> {
        series
            .iter()
            .map(|(name, xs)| {
                let p = xs.values().map(|(x, v)| (*x, mean(&v.iter().map(pick).collect::<Vec<_>>()))).collect();
                (name.clone(), p)
            })
            .collect()
    };
    Ok(vec![
        ("time_saved_vs_tool_mean.svg".into(), line_svg("time saved (%)", &pts(|v| v.0))),
        ("throughput_vs_tool_mean.svg".into(), line_svg("throughput (tokens/s)", &pts(|v| v.1))),
    ])
}

fn line_svg(y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = open(&format!("{y_label} vs mean tool latency"));
    let _ = writeln!(s, r#"<path d="M{PAD:.2},{:.2} H{:.2} M{PAD:.2},{:.2} V{:.2}" stroke="black" fill="none"/>"#, H - PAD, W - PAD, H - PAD, PAD);
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" fill="none" stroke-width="2"/>"#, d.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{c}">{}</text>"#, W - PAD - 150.0, PAD + 12.0 * i as f64, escape(name));
    }
    let _ = writeln!(s, r#"<text x="{PAD:.2}" y="{:.2}" font-size="10">{}</text>"#, H - PAD + 14.0, fmt_num(x0));
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, W - PAD, H - PAD + 14.0, fmt_num(x1));
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{:.3}</text>"#, PAD - 4.0, H - PAD, y0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{PAD:.2}" font-size="10" text-anchor="end">{:.3}</text>"#, PAD - 4.0, y1);
    labels(&mut s, "mean tool latency (s)", y_label);
    close(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{sweep_client, sweep_csv, Range, SweepGrid};

    #[test]
    fn one_heatmap_per_tool_time() {
        let grid = SweepGrid {
            alpha: Range { start: 0.0, stop: 1.0, step: 0.5 },
            g_over_big_g: Range { start: 0.1, stop: 0.5, step: 0.2 },
            tool_time: Range { start: 0.5, stop: 1.5, step: 0.5 },
            big_g: 2.0,
        };
        let csv = sweep_csv(&sweep_client(&grid).unwrap());
        let figs = render_csv(&csv).unwrap();
        let names: Vec<_> = figs.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(names, ["speedup_T0.5.svg", "speedup_T1.svg", "speedup_T1.5.svg"]);
        assert_eq!(figs, render_csv(&csv).unwrap());
        assert!(figs[0].1.starts_with("<svg"));
    }

    #[test]
    fn rejects_unknown_input() {
        assert!(matches!(render_csv("x,y\n1,2\n"), Err(PlotError::UnknownHeader(_))));
        assert!(matches!(render_csv(&format!("{SWEEP_HEADER}\n")), Err(PlotError::Empty)));
    }
}
