//! Learning curves as self-contained SVG.
//!
//! Runs rarely share step counts (episodes end at different times), so every
//! curve is resampled onto a common grid before averaging: `grid_points`
//! evenly spaced steps from 0 to the shortest run's final step, each taking
//! the trailing success rate of the last episode finished at or before it
//! (0 before the first episode).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::commands::read_metrics;
use super::{write_file, HarnessError, PlotConfig, Workspace};
use crate::agent::{AgentMode, EpisodeRow};
use crate::env::TaskId;

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub mode: AgentMode,
    pub seeds: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation across seeds.
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub task: TaskId,
    pub grid: Vec<f64>,
    pub bands: Vec<Band>,
}

/// Step-hold resampling of one run's trailing success rate.
pub fn resample(rows: &[EpisodeRow], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut i = 0;
    let mut current = 0.0;
    for &x in grid {
        while i < rows.len() && rows[i].step as f64 <= x {
            current = rows[i].success_rate;
            i += 1;
        }
        out.push(current);
    }
    out
}

fn build(task: TaskId, runs: &BTreeMap<AgentMode, Vec<Vec<EpisodeRow>>>, points: usize) -> PlotData {
    let end = runs
        .values()
        .flatten()
        .map(|r| r.last().map_or(0, |l| l.step))
        .min()
        .unwrap_or(0) as f64;
    let grid: Vec<f64> = (0..points).map(|i| end * i as f64 / (points - 1) as f64).collect();
    let bands = runs
        .iter()
        .map(|(&mode, seeds)| {
            let curves: Vec<Vec<f64>> = seeds.iter().map(|r| resample(r, &grid)).collect();
            let n = curves.len() as f64;
            let mean: Vec<f64> = (0..grid.len()).map(|j| curves.iter().map(|c| c[j]).sum::<f64>() / n).collect();
            let std = (0..grid.len())
                .map(|j| (curves.iter().map(|c| (c[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            Band {
                mode,
                seeds: curves.len(),
                mean,
                std,
            }
        })
        .collect();
    PlotData { task, grid, bands }
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn render_svg(data: &PlotData, cfg: &PlotConfig) -> String {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 45.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_max = data.grid.last().copied().unwrap_or(0.0).max(1.0);
    let px = |x: f64| left + pw * x / x_max;
    let py = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, data.task);
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{x2}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{tx}" y="{ty:.1}" text-anchor="end">{y:.1}</text>"##,
            x2 = left + pw,
            yy = py(y),
            tx = left - 6.0,
            ty = py(y) + 4.0,
        );
        let x = x_max * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(x),
            top + ph + 16.0,
            x.round()
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">environment steps</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">success rate (trailing 20 episodes)</text>"#,
        top + ph / 2.0
    );
    for (k, band) in data.bands.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let upper = data.grid.iter().zip(&band.mean).zip(&band.std).map(|((&x, m), sd)| (x, m + sd));
        let lower = data.grid.iter().zip(&band.mean).zip(&band.std).map(|((&x, m), sd)| (x, m - sd));
        let mut poly: Vec<String> = upper.map(|(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        poly.extend(lower.rev().map(|(x, y)| format!("{:.1},{:.1}", px(x), py(y))));
        let _ = writeln!(
            s,
            r#"<polygon class="band" data-mode="{}" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band.mode,
            poly.join(" ")
        );
        let line: Vec<String> = data
            .grid
            .iter()
            .zip(&band.mean)
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" data-mode="{}" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            band.mode,
            line.join(" ")
        );
        let ly = top + 10.0 + 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><rect x="{:.1}" y="{:.1}" width="14" height="10" fill="{colour}"/><text x="{:.1}" y="{:.1}">{} (n={})</text></g>"#,
            left + pw + 12.0,
            ly - 9.0,
            left + pw + 32.0,
            ly,
            band.mode,
            band.seeds
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One SVG per task found in the given metrics files.
pub fn cmd_plot(cfg: &PlotConfig, paths: &[PathBuf], ws: &Workspace) -> Result<Vec<(PathBuf, PlotData)>, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::NoMetrics);
    }
    let mut by_task: BTreeMap<TaskId, BTreeMap<AgentMode, Vec<Vec<EpisodeRow>>>> = BTreeMap::new();
    for path in paths {
        let rows = read_metrics(path)?;
        let first = &rows[0];
        by_task
            .entry(first.task)
            .or_default()
            .entry(first.mode)
            .or_default()
            .push(rows);
    }
    let mut out = Vec::new();
    for (task, runs) in by_task {
        let data = build(task, &runs, cfg.grid_points.max(2));
        let path = ws.plot(task);
        write_file(&path, render_svg(&data, cfg).as_bytes())?;
        out.push((path, data));
    }
    Ok(out)
}
