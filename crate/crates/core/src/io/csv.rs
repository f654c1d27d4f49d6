//! CSV reports: comma-separated, header row, `.` decimals, `\n` endings.
//! Undefined values are written as empty cells.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::models::LogRow;

pub const TRAINING_LOG_HEADER: &str = "epoch,step,recon,kl_or_entropy,E_pos,E_neg";

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_training_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let mut s = String::from(TRAINING_LOG_HEADER);
    s.push('\n');
    for r in rows {
        let p = &r.report;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.step, p.recon, p.kl_or_entropy, p.e_pos, p.e_neg);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Variance traces. A single trace is written as `step,variance`; with
/// `with_repeat` every trace gets a leading repeat index. Steps count from 1.
pub fn write_trace_csv(path: impl AsRef<Path>, traces: &[Vec<f64>], with_repeat: bool) -> Result<()> {
    let mut s = String::from(if with_repeat { "repeat,step,variance\n" } else { "step,variance\n" });
    for (r, trace) in traces.iter().enumerate() {
        for (i, v) in trace.iter().enumerate() {
            if with_repeat {
                let _ = write!(s, "{r},");
            }
            let _ = writeln!(s, "{},{v}", i + 1);
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// One row of the make-data manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub hq: String,
    pub lq: String,
    /// Dice of the degraded volume against its source.
    pub dice: f64,
}

pub fn write_manifest_csv(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let mut s = String::from("id,hq,lq,dice\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.id, r.hq, r.lq, r.dice);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Per-sample metric values in [`MetricsReport::NAMES`] order; `None` where
/// a metric is undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sample_id: String,
    pub values: [Option<f64>; 6],
}

impl EvalRow {
    pub fn from_report(sample_id: impl Into<String>, r: &MetricsReport) -> Self {
        EvalRow {
            sample_id: sample_id.into(),
            values: r.values().map(Some),
        }
    }
}

/// Mean and population standard deviation of each metric over the rows
/// where it is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: [Option<f64>; 6],
    pub std: [Option<f64>; 6],
}

pub fn eval_summary(rows: &[EvalRow]) -> Summary {
    let mut mean = [None; 6];
    let mut std = [None; 6];
    for j in 0..6 {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.values[j]).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = Some(m);
        std[j] = Some(var.sqrt());
    }
    Summary { mean, std }
}

/// Per-sample rows followed by `mean` and `std` summary rows.
pub fn write_eval_csv(path: impl AsRef<Path>, rows: &[EvalRow]) -> Result<()> {
    let mut s = String::from("sample_id,dice,vs,sen,spec,nmi,ck\n");
    let mut line = |id: &str, values: &[Option<f64>; 6]| {
        s.push_str(id);
        for v in values {
            s.push(',');
            s.push_str(&cell(*v));
        }
        s.push('\n');
    };
    for r in rows {
        line(&r.sample_id, &r.values);
    }
    let summary = eval_summary(rows);
    line("mean", &summary.mean);
    line("std", &summary.std);
    fs::write(path, s)?;
    Ok(())
}
