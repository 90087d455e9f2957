//! Deterministic rendering of protocol reports to CSV and JSON.
//!
//! All files are assembled as single strings and written in one call, so
//! identical reports always produce byte-identical files. Floats are
//! printed with six decimal places; counts and seeds as plain integers.

use std::path::{Path, PathBuf};

use super::protocol::MetricsReport;
use crate::error::{Error, Result};

/// Header of `summary.csv`: one row per (disease, backend, mode) report.
pub const SUMMARY_HEADER: &str = "disease,backend,mode,auc_mean,auc_std,f1_mean,f1_std,precision_mean,precision_std,recall_mean,recall_std";

/// Header of `runs.csv`: one row per protocol run.
pub const RUNS_HEADER: &str =
    "disease,backend,mode,run,seed,auc,f1,precision,recall,tp,fp,fn,tn";

/// Header of `curves.csv`: one row per swept mode, with the sweep parameter
/// (weeks or subjects) in the `x` column and the bare mode family in `mode`.
pub const CURVES_HEADER: &str = "disease,backend,mode,x,auc_mean,auc_std,f1_mean,f1_std,precision_mean,precision_std,recall_mean,recall_std";

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Render the per-run table for any number of reports.
pub fn render_runs_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(RUNS_HEADER);
    out.push('\n');
    for report in reports {
        for run in &report.runs {
            let m = &run.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                report.disease,
                report.backend,
                report.mode,
                run.run,
                run.seed,
                fmt(m.auc),
                fmt(m.f1),
                fmt(m.precision),
                fmt(m.recall),
                m.tp,
                m.fp,
                m.fn_,
                m.tn
            ));
        }
    }
    out
}

/// Render the mean±std table, one row per report.
pub fn render_summary_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for report in reports {
        let s = &report.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            report.disease,
            report.backend,
            report.mode,
            fmt(s.auc_mean),
            fmt(s.auc_std),
            fmt(s.f1_mean),
            fmt(s.f1_std),
            fmt(s.precision_mean),
            fmt(s.precision_std),
            fmt(s.recall_mean),
            fmt(s.recall_std)
        ));
    }
    out
}

/// Render the sweep table: one row per report whose mode carries a numeric
/// parameter. Returns `None` when no report belongs on a curve.
pub fn render_curves_csv(reports: &[MetricsReport]) -> Result<Option<String>> {
    let mut rows = Vec::new();
    for report in reports {
        let mode = report.mode()?;
        let Some(x) = mode.x() else { continue };
        let s = &report.summary;
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            report.disease,
            report.backend,
            mode.family(),
            x,
            fmt(s.auc_mean),
            fmt(s.auc_std),
            fmt(s.f1_mean),
            fmt(s.f1_std),
            fmt(s.precision_mean),
            fmt(s.precision_std),
            fmt(s.recall_mean),
            fmt(s.recall_std)
        ));
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
    }
    Ok(Some(out))
}

/// Write `runs.csv`, `summary.csv`, `report.json`, and — when any report is
/// part of a parameter sweep — `curves.csv` into `out_dir`. Returns the
/// paths written, in a fixed order.
pub fn emit_report(reports: &[MetricsReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::write_io(out_dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::write_io(&path, e))?;
        written.push(path);
        Ok(())
    };
    write("runs.csv", render_runs_csv(reports))?;
    write("summary.csv", render_summary_csv(reports))?;
    if let Some(curves) = render_curves_csv(reports)? {
        write("curves.csv", curves)?;
    }
    let mut json = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    json.push('\n');
    write("report.json", json)?;
    Ok(written)
}

/// Read back a `report.json` produced by [`emit_report`].
pub fn load_report(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: 0,
        msg: format!("{}: {e}", path.display()),
    })
}
