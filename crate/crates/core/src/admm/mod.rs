//! Distributed ADMM solvers: the centralized-stability splitting and the
//! clique-decomposed one. Both share the trace, audit and stopping logic
//! defined here.

pub mod alg1;
pub mod alg2;
pub mod audit;
pub mod index_maps;
pub mod scaling;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dissipativity::{fixed_certificate, kyp_membership, KypProblem};
use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;
use crate::model::{DissipativityCertificate, Network, SolverConfig};
use crate::projections::{ProjectionOptions, WarmStart};
use crate::stability::assemble_qbar;

pub use alg1::run_alg1;
pub use alg2::run_alg2;
pub use audit::{audit_messages, AuditBus, AuditLog, AuditReport, Endpoint, MessageKind, MessageRecord};
pub use index_maps::{build_index_maps, dual_update, j_update, Consumer, IndexMaps};
pub use scaling::InputScaling;

/// The dense certificate threshold is `lambda_max(Qbar) <= -epsilon * CERTIFY_FRACTION`.
/// The projections target `-epsilon`, so this leaves margin for roundoff
/// while still certifying strict negativity.
pub const CERTIFY_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Certified,
    MaxIter,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Certified => "certified",
            RunStatus::MaxIter => "max_iter",
            RunStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Alg1,
    Alg2,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" | "1" => Ok(Algorithm::Alg1),
            "alg2" | "2" => Ok(Algorithm::Alg2),
            other => Err(Error::InvalidParameter(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// One trace row. Times follow the parallel model: each phase costs the
/// slowest of its concurrent tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Only evaluated on check iterations.
    pub lambda_max_qbar: Option<f64>,
    #[serde(rename = "t_P_ms")]
    pub t_p_ms: f64,
    #[serde(rename = "t_J_ms")]
    pub t_j_ms: f64,
    #[serde(rename = "t_D_ms")]
    pub t_d_ms: f64,
}

impl TraceRow {
    pub fn iteration_ms(&self) -> f64 {
        self.t_p_ms + self.t_j_ms + self.t_d_ms
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub iterations: usize,
    /// Last iterate of the agent-side variables; a valid certificate when
    /// the status is `Certified`.
    pub certificates: Vec<DissipativityCertificate>,
    pub lambda_max: Option<f64>,
    pub epsilon: f64,
    pub trace: Vec<TraceRow>,
    pub audit: Option<AuditLog>,
    /// Largest single projection, in scalar coordinates.
    pub max_projection_dim: usize,
    pub wall_s: f64,
    pub message: Option<String>,
}

impl RunOutcome {
    /// Mean modelled per-iteration time.
    pub fn avg_iteration_ms(&self) -> f64 {
        if self.trace.is_empty() {
            return 0.0;
        }
        self.trace.iter().map(TraceRow::iteration_ms).sum::<f64>() / self.trace.len() as f64
    }

    pub fn total_s(&self) -> f64 {
        self.trace.iter().map(TraceRow::iteration_ms).sum::<f64>() / 1e3
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_trace_csv(&self.trace, std::fs::File::create(path)?)
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Validates inputs shared by both algorithms.
pub(crate) fn check_inputs(net: &Network, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if net.is_empty() {
        return Err(Error::InvalidNetwork("network has no agents".into()));
    }
    net.ensure_valid(cfg.sym_tol)
}

pub(crate) fn thread_pool(cfg: &SolverConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {} workers: {e}", cfg.worker_count)))
}

/// Runs `f` and returns its value with the elapsed milliseconds.
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64() * 1e3)
}

/// Largest violation of an agent's certificate set by `x`, as used by the
/// stopping tests: `max(lambda_max(KYP), delta - lambda_min(P), 0)`. A
/// declared supply rate stands in for the KYP test.
pub(crate) fn kyp_residual(net: &Network, i: usize, x: &DissipativityCertificate, delta_pd: f64) -> f64 {
    let m = kyp_membership(&net.agents[i], x, delta_pd, 0.0);
    let kyp = if net.is_fixed(i) { 0.0 } else { m.kyp_lambda_max };
    kyp.max(delta_pd - m.p_lambda_min).max(0.0)
}

/// The agent-local step: project `seed` onto agent `i`'s certificate set.
pub(crate) fn agent_project(
    net: &Network,
    i: usize,
    problem: Option<&KypProblem>,
    seed: &DissipativityCertificate,
    opts: &ProjectionOptions,
    delta_pd: f64,
    warm: &mut WarmStart,
) -> Result<DissipativityCertificate> {
    match problem {
        Some(p) => p.project(seed, opts, Some(warm)),
        None => fixed_certificate(&net.agents[i], &seed.p, delta_pd),
    }
}

/// Dense verification of a scaled-network iterate, mapped back to `net`:
/// every agent within `primal_tol` of its set and
/// `lambda_max(Qbar) <= -CERTIFY_FRACTION * epsilon`.
pub(crate) fn dense_check(
    net: &Network,
    scaling: &InputScaling,
    x: &[DissipativityCertificate],
    cfg: &SolverConfig,
    epsilon: f64,
) -> Result<(bool, f64)> {
    let x = &scaling.restore(net, x);
    let lam = max_eigenvalue(&assemble_qbar(x, &net.h)?.matrix)?;
    let agents_ok = (0..net.len()).all(|i| kyp_residual(net, i, &x[i], cfg.delta_pd) <= cfg.primal_tol);
    Ok((agents_ok && lam <= -CERTIFY_FRACTION * epsilon, lam))
}

/// Agent-local projection state: the KYP problem of a free agent, or
/// nothing for an agent with a declared supply rate.
pub(crate) fn kyp_problems(net: &Network, cfg: &SolverConfig) -> Result<Vec<Option<KypProblem>>> {
    net.agents
        .iter()
        .map(|a| match a.fixed_qsr() {
            Some(_) => Ok(None),
            None => KypProblem::new(a, cfg.delta_pd).map(Some),
        })
        .collect()
}

pub(crate) fn max_ms(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Flattened entries of a certificate, for message payloads.
pub(crate) fn cert_values(x: &DissipativityCertificate) -> Vec<f64> {
    crate::dissipativity::certificate_blocks(x)
        .iter()
        .flat_map(|m| m.iter().copied())
        .collect()
}
