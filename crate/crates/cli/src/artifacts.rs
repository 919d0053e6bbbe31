//! Artifact emission. Files are written to a temp path in the destination
//! directory and atomically renamed into place, so a crashed or aborted run
//! never leaves a partially written artifact behind. All emitted bytes are a
//! pure function of the resolved config and the crate version; wallclock
//! timings go to stdout only.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use marginlab_core::error::{Error, Result};
use marginlab_core::selection::CriterionStats;
use marginlab_core::trainer::{MetricsRow, SelectionLogRow};

/// 17 significant digits: parses back to the identical f64.
pub fn float_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub const METRICS_HEADER: &str =
    "step,ce,mmr,composite,alpha,phi_max,train_error,validation_error,lr,mean_selected_criterion";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let criterion =
            r.mean_selected_criterion.map(float_cell).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            float_cell(r.ce),
            float_cell(r.mmr),
            float_cell(r.composite),
            float_cell(r.alpha),
            float_cell(r.phi_max),
            float_cell(r.train_error),
            float_cell(r.validation_error),
            float_cell(r.lr),
            criterion,
        );
    }
    out
}

fn stats_cells(stats: &Option<CriterionStats>) -> String {
    match stats {
        Some(s) => format!(
            "{},{},{},{}",
            float_cell(s.mean),
            float_cell(s.min),
            float_cell(s.max),
            s.non_finite_count
        ),
        None => ",,,".to_string(),
    }
}

pub fn selection_csv(rows: &[SelectionLogRow]) -> String {
    let mut out = String::from(
        "step,policy,chosen_mean,chosen_min,chosen_max,chosen_non_finite,\
         rejected_mean,rejected_min,rejected_max,rejected_non_finite",
    );
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.step,
            r.policy,
            stats_cells(&r.chosen),
            stats_cells(&r.rejected)
        );
    }
    out
}

/// Steps-to-target cell: the step count, or the `not-reached` sentinel.
pub fn steps_cell(steps: Option<u64>) -> String {
    match steps {
        Some(s) => s.to_string(),
        None => "not-reached".to_string(),
    }
}
