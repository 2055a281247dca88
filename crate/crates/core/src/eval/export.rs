use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, HistBin, OffsetRow, RocReport};
use crate::error::Result;

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub split: String,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub mi_bound: Option<f64>,
    pub mi_bound_raw: Option<f64>,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

impl From<&EvalReport> for Summary {
    fn from(r: &EvalReport) -> Self {
        Self {
            split: r.split.clone(),
            auc: r.roc.auc,
            eer: r.roc.eer,
            eer_threshold: r.roc.eer_threshold,
            mi_bound: r.mi_bound.map(|b| b.shifted),
            mi_bound_raw: r.mi_bound.map(|b| b.raw),
            intra_pairs: r.scores.intra.len(),
            inter_pairs: r.scores.inter.len(),
        }
    }
}

fn csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, roc: &RocReport) -> Result<()> {
    csv(
        path,
        "threshold,tpr,fpr",
        roc.thresholds
            .iter()
            .zip(&roc.tpr)
            .zip(&roc.fpr)
            .map(|((t, p), f)| format!("{t},{p},{f}")),
    )
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> Result<()> {
    let mut s = serde_json::to_string_pretty(summary)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_dist_hist_csv(path: &Path, bins: &[HistBin]) -> Result<()> {
    csv(
        path,
        "bin_lo,bin_hi,intra_count,inter_count",
        bins.iter()
            .map(|b| format!("{},{},{},{}", b.lo, b.hi, b.intra, b.inter)),
    )
}

pub fn write_offsets_csv(path: &Path, rows: &[OffsetRow]) -> Result<()> {
    csv(
        path,
        "device_id,w_ts,phi_ts,w_ns,phi_ns",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.device_id, r.w_ts, r.phi_ts, r.w_ns, r.phi_ns
            )
        }),
    )
}
