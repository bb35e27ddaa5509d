//! Experiment tables, plot data and SVG plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bedmesh_core::data::Cover;
use bedmesh_core::eval::S2rTable;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One experiment row flattened for delimiter-separated output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub seed: u64,
    pub fraction: f64,
    pub model: String,
    pub n_real: usize,
    pub mpjpe_mm: f64,
    pub pve_mm: f64,
    pub mpjpe_uncover_mm: f64,
    pub mpjpe_cover1_mm: f64,
    pub mpjpe_cover2_mm: f64,
}

/// A `(fraction, metric, seed)` plot sample of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub model: String,
    pub fraction: f64,
    pub metric: String,
    pub seed: u64,
    pub value: f64,
}

pub fn table_rows(table: &S2rTable) -> Vec<TableRow> {
    table
        .rows
        .iter()
        .map(|r| {
            let cover = |c: Cover| r.report.per_cover.get(c.name()).map_or(f64::NAN, |m| m.mpjpe_mm);
            TableRow {
                seed: r.seed,
                fraction: r.fraction,
                model: r.model.name().into(),
                n_real: r.n_real,
                mpjpe_mm: r.report.mpjpe_mm,
                pve_mm: r.report.pve_mm,
                mpjpe_uncover_mm: cover(Cover::Uncover),
                mpjpe_cover1_mm: cover(Cover::Cover1),
                mpjpe_cover2_mm: cover(Cover::Cover2),
            }
        })
        .collect()
}

pub fn plot_points(rows: &[TableRow]) -> Vec<PlotPoint> {
    rows.iter()
        .flat_map(|r| {
            [("mpjpe_mm", r.mpjpe_mm), ("pve_mm", r.pve_mm)].map(|(metric, value)| PlotPoint {
                model: r.model.clone(),
                fraction: r.fraction,
                metric: metric.into(),
                seed: r.seed,
                value,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Format(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds per model and fraction, for one metric.
pub fn curves(points: &[PlotPoint], metric: &str) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut grouped: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.metric == metric) {
        grouped
            .entry(p.model.clone())
            .or_default()
            .entry(p.fraction.to_bits())
            .or_default()
            .push(p.value);
    }
    grouped
        .into_iter()
        .map(|(model, by_f)| {
            let mut pts: Vec<(f64, f64)> = by_f.into_iter().map(|(f, v)| (f64::from_bits(f), median(v))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (model, pts)
        })
        .collect()
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn plot_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Format(format!("plot: {e:?}"))
}

/// Draws one metric-versus-real-fraction chart with a curve per model
/// (median over seeds). A model seen at a single fraction only (sim-only)
/// is drawn as a flat line across the axis.
pub fn plot_metric(path: &Path, points: &[PlotPoint], metric: &str) -> Result<()> {
    let curves = curves(points, metric);
    if curves.is_empty() {
        return Err(CliError::Format(format!("no {metric} values to plot")));
    }
    let all: Vec<(f64, f64)> = curves.values().flatten().copied().collect();
    let x_hi = all.iter().map(|p| p.0 * 100.0).fold(0.0, f64::max).max(1.0);
    let (y_lo, y_hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let pad = ((y_hi - y_lo) * 0.1).max(1.0);
    let label = match metric {
        "pve_mm" => "PVE (mm)",
        _ => "MPJPE (mm)",
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..x_hi * 1.05, (y_lo - pad)..(y_hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("real data used (%)")
            .y_desc(label)
            .draw()
            .map_err(plot_err)?;
        for (i, (model, pts)) in curves.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = if pts.len() == 1 {
                vec![(0.0, pts[0].1), (x_hi, pts[0].1)]
            } else {
                pts.iter().map(|&(f, v)| (f * 100.0, v)).collect()
            };
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(model.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}

/// Writes `s2r_mpjpe.svg` and `s2r_pve.svg` into `dir`.
pub fn emit_plots(points: &[PlotPoint], dir: &Path) -> Result<Vec<PathBuf>> {
    if points.is_empty() {
        return Err(CliError::Format("experiment table is empty".into()));
    }
    let mut out = Vec::new();
    for (metric, file) in [("mpjpe_mm", "s2r_mpjpe.svg"), ("pve_mm", "s2r_pve.svg")] {
        let path = dir.join(file);
        plot_metric(&path, points, metric)?;
        out.push(path);
    }
    Ok(out)
}
