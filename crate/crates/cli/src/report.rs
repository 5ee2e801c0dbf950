//! Summaries of a finished (or partial) run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::pipeline::{MethodName, RunError, Summary};

pub struct Report {
    pub summaries: Vec<Summary>,
    /// Methods whose directory exists but whose summary is missing or
    /// unreadable.
    pub warnings: Vec<String>,
}

impl Report {
    pub fn is_complete(&self) -> bool {
        self.warnings.is_empty() && !self.summaries.is_empty()
    }

    /// Long format: one row per defined accuracy cell per method.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("method,after_domain,eval_domain,accuracy\n");
        for s in &self.summaries {
            for (t, row) in s.accuracy_matrix.iter().enumerate() {
                for (d, a) in row.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{a:.6}", s.method.as_str(), t + 1, d + 1);
                }
            }
        }
        out
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for s in &self.summaries {
            let _ = writeln!(out, "method: {}", s.method.as_str());
            let _ = writeln!(out, "  average accuracy: {:.4}", s.average);
            for (name, f) in s.domains.iter().zip(&s.forgetting_per_domain) {
                let _ = writeln!(out, "  forgetting {name}: {f:.4}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

pub fn load_report(run_dir: &Path) -> Result<Report, RunError> {
    if !run_dir.is_dir() {
        return Err(RunError::Io {
            path: run_dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a run directory"),
        });
    }
    let mut report = Report {
        summaries: Vec::new(),
        warnings: Vec::new(),
    };
    for m in [MethodName::Lleda, MethodName::Baseline] {
        let dir = run_dir.join(m.as_str());
        if !dir.is_dir() {
            continue;
        }
        let path = dir.join("summary.json");
        match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<Summary>(&bytes) {
                Ok(s) => report.summaries.push(s),
                Err(e) => report
                    .warnings
                    .push(format!("{}: unreadable summary: {e}", m.as_str())),
            },
            Err(_) => report
                .warnings
                .push(format!("{}: run incomplete, no summary.json", m.as_str())),
        }
    }
    if report.summaries.is_empty() && report.warnings.is_empty() {
        report
            .warnings
            .push("no method directories found".to_string());
    }
    Ok(report)
}

/// Loads the report, writes `accuracy_long.csv` into the run directory and
/// returns it.
pub fn report(run_dir: &Path) -> Result<Report, RunError> {
    let r = load_report(run_dir)?;
    let path = run_dir.join("accuracy_long.csv");
    fs::write(&path, r.long_csv()).map_err(|source| RunError::Io { path, source })?;
    Ok(r)
}
