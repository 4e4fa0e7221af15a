//! Run summaries and the iterations / time-per-iteration / total-time table
//! across network sizes.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::admm::{RunOutcome, RunStatus};
use crate::error::{Error, Result};

/// One analysis run, as written next to its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_agents: usize,
    pub algorithm: String,
    pub status: String,
    pub iterations: usize,
    pub avg_iter_ms: f64,
    pub total_s: f64,
    pub wall_s: f64,
    pub lambda_max_qbar: Option<f64>,
    pub epsilon: f64,
    pub max_projection_dim: usize,
    pub audit_passed: Option<bool>,
    pub message: Option<String>,
}

impl RunSummary {
    pub fn new(n_agents: usize, out: &RunOutcome) -> Self {
        Self {
            n_agents,
            algorithm: out.algorithm.as_str().into(),
            status: out.status.as_str().into(),
            iterations: out.iterations,
            avg_iter_ms: out.avg_iteration_ms(),
            total_s: out.total_s(),
            wall_s: out.wall_s,
            lambda_max_qbar: out.lambda_max,
            epsilon: out.epsilon,
            max_projection_dim: out.max_projection_dim,
            audit_passed: out.audit.as_ref().map(|log| crate::admm::audit_messages(log).passed),
            message: out.message.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n_uavs: usize,
    pub algorithm: String,
    pub iterations: usize,
    pub avg_iter_ms: f64,
    pub total_s: f64,
    pub status: String,
}

impl ReportRow {
    /// A run without any recorded iteration has no timing; unless it was
    /// certified at the starting point it is reported as an error.
    pub fn from_summary(s: &RunSummary) -> Self {
        let status = if s.iterations == 0 && s.status != RunStatus::Certified.as_str() {
            RunStatus::Error.as_str().to_string()
        } else {
            s.status.clone()
        };
        Self {
            n_uavs: s.n_agents,
            algorithm: s.algorithm.clone(),
            iterations: s.iterations,
            avg_iter_ms: s.avg_iter_ms,
            total_s: s.total_s,
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: String,
}

impl Report {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Rows sorted by size then algorithm, plus a text comparison of the
/// algorithms at every size both were run on.
pub fn emit_report(runs: &[RunSummary]) -> Result<Report> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("no runs to report".into()));
    }
    let mut rows: Vec<ReportRow> = runs.iter().map(ReportRow::from_summary).collect();
    rows.sort_by(|a, b| (a.n_uavs, &a.algorithm).cmp(&(b.n_uavs, &b.algorithm)));
    let mut summary = String::new();
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n_uavs).collect();
    sizes.dedup();
    for n in sizes {
        let at: Vec<&ReportRow> = rows.iter().filter(|r| r.n_uavs == n).collect();
        let _ = write!(summary, "{n:>3} agents:");
        for r in &at {
            let _ = write!(
                summary,
                "  {} {} in {} iterations, {:.2} ms/iter, {:.2} s",
                r.algorithm, r.status, r.iterations, r.avg_iter_ms, r.total_s
            );
        }
        let find = |name: &str| at.iter().find(|r| r.algorithm == name && r.avg_iter_ms > 0.0);
        if let (Some(a), Some(b)) = (find("alg1"), find("alg2")) {
            let _ = write!(
                summary,
                "  (alg1/alg2 time per iteration {:.1}x)",
                a.avg_iter_ms / b.avg_iter_ms
            );
        }
        summary.push('\n');
    }
    Ok(Report { rows, summary })
}
