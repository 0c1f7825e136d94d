//! CSV tables, metadata sidecars and log-log plots.

use std::path::Path;

use mosco_core::{ReportRow, StudyReport};
use plotters::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CSV_HEADER: [&str; 12] = [
    "study",
    "n",
    "h",
    "gamma",
    "delta",
    "err_sup",
    "err_l2",
    "err_energy",
    "violation",
    "iterations",
    "residual",
    "flag",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn record(study: &str, r: &ReportRow) -> [String; 12] {
    [
        study.to_string(),
        r.n.to_string(),
        num(r.h),
        num(r.gamma),
        num(r.delta),
        num(r.err_sup),
        num(r.err_l2),
        num(r.err_energy),
        num(r.violation),
        r.iterations.map(|i| i.to_string()).unwrap_or_default(),
        num(r.residual),
        r.flag.clone().unwrap_or_default(),
    ]
}

/// CSV text with the fixed column order; missing quantities are empty.
pub fn to_csv(report: &StudyReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &report.rows {
        w.write_record(record(&report.study, r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Serialize)]
pub struct FlagMeta {
    pub name: String,
    pub passed: bool,
    pub asserted: bool,
}

#[derive(Serialize)]
pub struct Meta {
    pub study: String,
    pub config_sha256: String,
    pub version: &'static str,
    pub seed: u64,
    pub wall_time_s: f64,
    pub passed: bool,
    pub flags: Vec<FlagMeta>,
    pub failures: Vec<(usize, String)>,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn meta(report: &StudyReport, config_text: &str, seed: u64, wall_time_s: f64) -> Meta {
    Meta {
        study: report.study.clone(),
        config_sha256: config_hash(config_text),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        wall_time_s,
        passed: report.passed(),
        flags: report
            .flags
            .iter()
            .map(|f| FlagMeta {
                name: f.name.clone(),
                passed: f.passed,
                asserted: f.asserted,
            })
            .collect(),
        failures: report.failures.clone(),
    }
}

pub fn write_meta(path: &Path, m: &Meta) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).map_err(io)?;
    std::fs::write(path, text).map_err(io)
}

/// Picks the abscissa (h, delta or gamma, whichever varies) and the error
/// column (sup, then energy) for the plot.
fn series(report: &StudyReport) -> Option<(&'static str, &'static str, Vec<(f64, f64)>)> {
    let xs: [(&str, fn(&ReportRow) -> Option<f64>); 3] = [
        ("delta", |r| r.delta),
        ("gamma", |r| r.gamma),
        ("h", |r| r.h),
    ];
    let ys: [(&str, fn(&ReportRow) -> Option<f64>); 2] =
        [("err_sup", |r| r.err_sup), ("err_energy", |r| r.err_energy)];
    let rows: Vec<&ReportRow> = match report.rows.iter().find_map(|r| r.flag.as_deref()) {
        // Stability tables hold two series; plot the first one.
        Some(first @ ("minimal" | "maximal")) => report
            .rows
            .iter()
            .filter(|r| r.flag.as_deref() == Some(first))
            .collect(),
        _ => report.rows.iter().collect(),
    };
    for (xn, xf) in xs {
        let vals: Vec<f64> = rows.iter().filter_map(|r| xf(r)).collect();
        if vals.len() < 2 || vals.iter().all(|v| *v == vals[0]) {
            continue;
        }
        for (yn, yf) in ys {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| Some((xf(r)?, yf(r)?)))
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
                .collect();
            if pts.len() >= 2 {
                return Some((xn, yn, pts));
            }
        }
    }
    None
}

/// Log-log error plot as SVG. Returns `false` when the table has nothing to
/// plot.
pub fn write_plot(path: &Path, report: &StudyReport) -> Result<bool, CliError> {
    let Some((xn, yn, pts)) = series(report) else {
        return Ok(false);
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(io)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&report.study, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(
            (x0 / 1.5..x1 * 1.5).log_scale(),
            (y0 / 2.0..y1 * 2.0).log_scale(),
        )
        .map_err(io)?;
    chart
        .configure_mesh()
        .x_desc(xn)
        .y_desc(yn)
        .x_label_formatter(&|v| format!("{v:.0e}"))
        .y_label_formatter(&|v| format!("{v:.0e}"))
        .draw()
        .map_err(io)?;
    chart
        .draw_series(LineSeries::new(pts.clone(), &BLUE))
        .map_err(io)?;
    chart
        .draw_series(pts.iter().map(|p| Circle::new(*p, 3, BLUE.filled())))
        .map_err(io)?;
    root.present().map_err(io)?;
    Ok(true)
}
