//! CSV outputs: training logs, DSC reports and the ablation and sweep
//! summaries.

use std::path::Path;

use asc_core::metrics::DscReport;
use asc_core::trainer::{Ablation, StepRecord, TrainLog};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const TRAIN_LOG_HEADER: [&str; 8] = ["step", "epoch", "lr", "lambda", "l_seg", "l_app", "l_str", "l_total"];

#[derive(Serialize)]
struct LogRow {
    step: usize,
    epoch: usize,
    lr: f64,
    lambda: f64,
    l_seg: f64,
    l_app: f64,
    l_str: f64,
    l_total: f64,
}

impl From<&StepRecord> for LogRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            epoch: r.epoch,
            lr: r.lr,
            lambda: r.lambda,
            l_seg: r.l_seg,
            l_app: r.l_app,
            l_str: r.l_str,
            l_total: r.l_total,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(path))?;
    for row in rows {
        w.serialize(row).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    write_rows(path, log.records.iter().map(LogRow::from))
}

/// One row of a report file. Per-volume rows name the volume and the class;
/// trailing rows with volume `mean` and class `foreground` hold the
/// aggregates for the `abnormal`, `normal` and `all` subsets.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub volume: String,
    pub subset: String,
    pub class: String,
    pub dsc: f64,
}

pub fn report_rows(report: &DscReport) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for v in &report.volumes {
        let subset = v.subset.map_or("-", |s| s.as_str());
        for (c, &d) in v.per_class.iter().enumerate() {
            rows.push(ReportRow {
                volume: v.name.clone(),
                subset: subset.to_string(),
                class: c.to_string(),
                dsc: d,
            });
        }
    }
    let summary = [("abnormal", report.dsc_a), ("normal", report.dsc_n), ("all", Some(report.avg))];
    for (subset, value) in summary {
        if let Some(dsc) = value {
            rows.push(ReportRow {
                volume: "mean".into(),
                subset: subset.into(),
                class: "foreground".into(),
                dsc,
            });
        }
    }
    rows
}

pub fn write_report(path: &Path, report: &DscReport) -> Result<()> {
    write_rows(path, report_rows(report))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(CliError::csv(path))
}

/// Subset means of one configuration, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMean {
    pub dsc_a: Option<f64>,
    pub dsc_n: Option<f64>,
    pub avg: f64,
    pub seeds: usize,
}

impl SeedMean {
    pub fn of(reports: &[DscReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
            let xs: Option<Vec<f64>> = xs.into_iter().collect();
            xs.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(Self {
            dsc_a: mean(reports.iter().map(|r| r.dsc_a).collect()),
            dsc_n: mean(reports.iter().map(|r| r.dsc_n).collect()),
            avg: mean(reports.iter().map(|r| Some(r.avg)).collect()).expect("all present"),
            seeds: reports.len(),
        })
    }
}

#[derive(Serialize)]
struct AblationRow {
    mode: String,
    seg_swapped: u8,
    app_target: u8,
    app_swapped: u8,
    structure: u8,
    dsc_a: Option<f64>,
    dsc_n: Option<f64>,
    avg: f64,
    seeds: usize,
}

/// One row per mode with its loss-term flags and seed-averaged DSC.
pub fn write_ablation(path: &Path, rows: &[(Ablation, SeedMean)]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|&(mode, m)| AblationRow {
            mode: mode.to_string(),
            seg_swapped: mode.seg_on_swapped().into(),
            app_target: mode.app_on_target().into(),
            app_swapped: mode.app_on_swapped().into(),
            structure: mode.structure().into(),
            dsc_a: m.dsc_a,
            dsc_n: m.dsc_n,
            avg: m.avg,
            seeds: m.seeds,
        }),
    )
}

#[derive(Serialize)]
struct SweepRow {
    gamma: f64,
    dsc_a: Option<f64>,
    dsc_n: Option<f64>,
    avg: f64,
    seeds: usize,
}

pub fn write_sweep(path: &Path, rows: &[(f64, SeedMean)]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|&(gamma, m)| SweepRow {
            gamma,
            dsc_a: m.dsc_a,
            dsc_n: m.dsc_n,
            avg: m.avg,
            seeds: m.seeds,
        }),
    )
}
