//! Network data model: agents, interconnection, certificates, solver
//! configuration and the shared parameter symbols.
//!
//! Agents are stored in a `Vec` and identified by their position (0-based in
//! the API, 1-based in files). Block order in every stacked matrix follows
//! agent order.
//!
//! Minimality of each realization is a user obligation; it is not checked.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, asymmetry, eye, BlockShape, Mat};

/// A declared (Q, S, R) supply-rate triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Qsr {
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
}

impl Qsr {
    /// Passivity supply rate `2 y^T S u` with `S = I/2`.
    pub fn passive(dim: usize) -> Self {
        Self {
            q: Mat::zeros(dim, dim),
            s: eye(dim, dim) * 0.5,
            r: Mat::zeros(dim, dim),
        }
    }

    /// Finite L2-gain supply rate `gamma^2 |u|^2 - |y|^2`.
    pub fn l2_gain(outputs: usize, inputs: usize, gamma: f64) -> Self {
        Self {
            q: -eye(outputs, outputs),
            s: Mat::zeros(outputs, inputs),
            r: eye(inputs, inputs) * (gamma * gamma),
        }
    }
}

/// State-space realization `x' = A x + B e`, `y = C x + D e` of one agent.
///
/// The matrices are private to the agent: no solver message ever carries
/// them.
#[derive(Debug, Clone)]
pub struct AgentDynamics {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
    fixed_qsr: Option<Qsr>,
}

impl AgentDynamics {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Self {
        Self {
            a,
            b,
            c,
            d,
            fixed_qsr: None,
        }
    }

    pub fn with_fixed_qsr(mut self, qsr: Qsr) -> Self {
        self.fixed_qsr = Some(qsr);
        self
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }

    pub fn fixed_qsr(&self) -> Option<&Qsr> {
        self.fixed_qsr.as_ref()
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    fn violations(&self, agent: usize, sym_tol: f64, out: &mut Vec<Violation>) {
        let loc = Location::Agent(agent);
        let mut push = |rule: Rule, detail: String| {
            out.push(Violation {
                location: loc,
                rule,
                detail,
            })
        };
        let (n, m, l) = (self.n(), self.m(), self.l());
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            if !all_finite(mat) {
                push(Rule::NonFinite, format!("{name} has non-finite entries"));
            }
        }
        if !self.a.is_square() {
            push(
                Rule::DimensionMismatch,
                format!("A is {}x{}, not square", n, self.a.ncols()),
            );
        }
        if self.b.nrows() != n {
            push(
                Rule::DimensionMismatch,
                format!("B has {} rows, A has {n}", self.b.nrows()),
            );
        }
        if self.c.ncols() != self.a.ncols() {
            push(
                Rule::DimensionMismatch,
                format!("C has {} columns, A has {}", self.c.ncols(), self.a.ncols()),
            );
        }
        if (self.d.nrows(), self.d.ncols()) != (l, m) {
            push(
                Rule::DimensionMismatch,
                format!("D is {}x{}, expected {l}x{m}", self.d.nrows(), self.d.ncols()),
            );
        }
        if let Some(qsr) = &self.fixed_qsr {
            if (qsr.q.nrows(), qsr.q.ncols()) != (l, l)
                || (qsr.s.nrows(), qsr.s.ncols()) != (l, m)
                || (qsr.r.nrows(), qsr.r.ncols()) != (m, m)
            {
                push(
                    Rule::FixedQsrShape,
                    format!("declared (Q,S,R) does not match l={l}, m={m}"),
                );
            } else {
                if asymmetry(&qsr.q) > sym_tol {
                    push(Rule::NotSymmetric, "declared Q is not symmetric".into());
                }
                if asymmetry(&qsr.r) > sym_tol {
                    push(Rule::NotSymmetric, "declared R is not symmetric".into());
                }
            }
        }
    }
}

/// Kinds of per-agent dissipativity parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    P,
    Q,
    S,
    R,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [ParamKind::P, ParamKind::Q, ParamKind::S, ParamKind::R];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A matrix-valued unknown of the stability problem: one of an agent's
/// (P, Q, S, R) blocks or an auxiliary overlap slot `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Param { agent: usize, kind: ParamKind },
    Y { slot: usize },
}

impl Symbol {
    pub fn p(agent: usize) -> Self {
        Symbol::Param {
            agent,
            kind: ParamKind::P,
        }
    }
    pub fn q(agent: usize) -> Self {
        Symbol::Param {
            agent,
            kind: ParamKind::Q,
        }
    }
    pub fn s(agent: usize) -> Self {
        Symbol::Param {
            agent,
            kind: ParamKind::S,
        }
    }
    pub fn r(agent: usize) -> Self {
        Symbol::Param {
            agent,
            kind: ParamKind::R,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Param { agent, kind } => write!(f, "{kind:?}{}", agent + 1),
            Symbol::Y { slot } => write!(f, "Y#{slot}"),
        }
    }
}

/// `X_i = diag(P_i, Q_i, S_i, R_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipativityCertificate {
    pub p: Mat,
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
}

impl DissipativityCertificate {
    pub fn new(p: Mat, q: Mat, s: Mat, r: Mat) -> Self {
        Self { p, q, s, r }
    }

    pub fn zeros(n: usize, l: usize, m: usize) -> Self {
        Self::new(Mat::zeros(n, n), Mat::zeros(l, l), Mat::zeros(l, m), Mat::zeros(m, m))
    }

    pub fn zeros_for(agent: &AgentDynamics) -> Self {
        Self::zeros(agent.n(), agent.l(), agent.m())
    }

    pub fn from_qsr(p: Mat, qsr: &Qsr) -> Self {
        Self::new(p, qsr.q.clone(), qsr.s.clone(), qsr.r.clone())
    }

    pub fn block(&self, kind: ParamKind) -> &Mat {
        match kind {
            ParamKind::P => &self.p,
            ParamKind::Q => &self.q,
            ParamKind::S => &self.s,
            ParamKind::R => &self.r,
        }
    }

    pub fn block_mut(&mut self, kind: ParamKind) -> &mut Mat {
        match kind {
            ParamKind::P => &mut self.p,
            ParamKind::Q => &mut self.q,
            ParamKind::S => &mut self.s,
            ParamKind::R => &mut self.r,
        }
    }

    pub fn symmetrized(&self) -> Self {
        use crate::linalg::symmetrize;
        Self::new(
            symmetrize(&self.p),
            symmetrize(&self.q),
            self.s.clone(),
            symmetrize(&self.r),
        )
    }

    /// Checks shapes against an agent and symmetry of P, Q, R.
    pub fn check(&self, agent: &AgentDynamics, sym_tol: f64) -> Result<()> {
        let (n, m, l) = (agent.n(), agent.m(), agent.l());
        let expect = [(n, n), (l, l), (l, m), (m, m)];
        for (kind, dims) in ParamKind::ALL.iter().zip(expect) {
            let b = self.block(*kind);
            if (b.nrows(), b.ncols()) != dims {
                return Err(Error::Dimension(format!(
                    "{kind:?} is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    dims.0,
                    dims.1
                )));
            }
        }
        for kind in [ParamKind::P, ParamKind::Q, ParamKind::R] {
            if asymmetry(self.block(kind)) > sym_tol {
                return Err(Error::InvalidParameter(format!("{kind:?} is not symmetric")));
            }
        }
        Ok(())
    }

    /// Elementwise `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        Self::new(
            &self.p + &other.p * alpha,
            &self.q + &other.q * alpha,
            &self.s + &other.s * alpha,
            &self.r + &other.r * alpha,
        )
    }

    pub fn squared_norm(&self) -> f64 {
        ParamKind::ALL.iter().map(|k| self.block(*k).norm_squared()).sum()
    }

    pub fn num_values(&self) -> usize {
        ParamKind::ALL.iter().map(|k| self.block(*k).len()).sum()
    }
}

/// Sparse block interconnection `e = u + H y`; block `(i, j)` is `m_i x l_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), Mat>,
}

impl Interconnection {
    pub fn new(input_dims: Vec<usize>, output_dims: Vec<usize>) -> Self {
        Self {
            input_dims,
            output_dims,
            blocks: BTreeMap::new(),
        }
    }

    /// An interconnection sized for `agents`, with no blocks.
    pub fn empty_for(agents: &[AgentDynamics]) -> Self {
        Self::new(
            agents.iter().map(|a| a.m()).collect(),
            agents.iter().map(|a| a.l()).collect(),
        )
    }

    /// Stores block `(i, j)` as given; `validate_network` reports bad blocks.
    pub fn insert(&mut self, i: usize, j: usize, block: Mat) -> &mut Self {
        self.blocks.insert((i, j), block);
        self
    }

    pub fn with_block(mut self, i: usize, j: usize, block: Mat) -> Self {
        self.insert(i, j, block);
        self
    }

    pub fn n_agents(&self) -> usize {
        self.input_dims.len()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Mat> {
        self.blocks.get(&(i, j))
    }

    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &Mat)> {
        self.blocks.iter().map(|(k, v)| (*k, v))
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Agents `k` that receive from `j`, i.e. block `(k, j)` present.
    pub fn receivers_of(&self, j: usize) -> Vec<usize> {
        self.blocks.keys().filter(|&&(_, c)| c == j).map(|&(r, _)| r).collect()
    }

    /// Agents `j` that `i` receives from, i.e. block `(i, j)` present.
    pub fn sources_of(&self, i: usize) -> Vec<usize> {
        self.blocks.range((i, 0)..(i + 1, 0)).map(|(&(_, c), _)| c).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.values().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    /// Dense `(sum m_i) x (sum l_j)` matrix.
    pub fn dense(&self) -> Mat {
        let ro = offsets(&self.input_dims);
        let co = offsets(&self.output_dims);
        let mut h = Mat::zeros(ro[ro.len() - 1], co[co.len() - 1]);
        for (&(i, j), b) in &self.blocks {
            h.view_mut((ro[i], co[j]), (b.nrows(), b.ncols())).copy_from(b);
        }
        h
    }
}

/// Prefix sums `[0, d0, d0+d1, ...]`.
pub fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Network {
    pub agents: Vec<AgentDynamics>,
    pub h: Interconnection,
}

impl Network {
    pub fn new(agents: Vec<AgentDynamics>, h: Interconnection) -> Self {
        Self { agents, h }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Shape of a parameter block of agent `agent`.
    pub fn param_shape(&self, agent: usize, kind: ParamKind) -> BlockShape {
        let a = &self.agents[agent];
        match kind {
            ParamKind::P => BlockShape::Symmetric(a.n()),
            ParamKind::Q => BlockShape::Symmetric(a.l()),
            ParamKind::S => BlockShape::General(a.l(), a.m()),
            ParamKind::R => BlockShape::Symmetric(a.m()),
        }
    }

    pub fn is_fixed(&self, agent: usize) -> bool {
        self.agents[agent].fixed_qsr.is_some()
    }

    /// Declared value of a fixed agent's Q, S or R block.
    pub fn fixed_value(&self, agent: usize, kind: ParamKind) -> Option<&Mat> {
        let qsr = self.agents[agent].fixed_qsr.as_ref()?;
        match kind {
            ParamKind::P => None,
            ParamKind::Q => Some(&qsr.q),
            ParamKind::S => Some(&qsr.s),
            ParamKind::R => Some(&qsr.r),
        }
    }

    pub fn validate(&self, sym_tol: f64) -> ValidationReport {
        validate_network(self, sym_tol)
    }

    pub fn ensure_valid(&self, sym_tol: f64) -> Result<()> {
        let report = self.validate(sym_tol);
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidNetwork(report.to_string()))
        }
    }

    pub fn check_certificates(&self, certs: &[DissipativityCertificate], sym_tol: f64) -> Result<()> {
        if certs.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} certificates for {} agents",
                certs.len(),
                self.len()
            )));
        }
        for (i, (c, a)) in certs.iter().zip(&self.agents).enumerate() {
            c.check(a, sym_tol)
                .map_err(|e| Error::Dimension(format!("agent {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Network,
    Agent(usize),
    Block(usize, usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Network => write!(f, "network"),
            Location::Agent(i) => write!(f, "agent {}", i + 1),
            Location::Block(i, j) => write!(f, "H({},{})", i + 1, j + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    DimensionMismatch,
    NonFinite,
    NotSymmetric,
    FixedQsrShape,
    DiagonalBlock,
    ZeroBlock,
    AgentOutOfRange,
    AgentCount,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::DimensionMismatch => "dimension mismatch",
            Rule::NonFinite => "non-finite entries",
            Rule::NotSymmetric => "not symmetric",
            Rule::FixedQsrShape => "declared supply rate has wrong shape",
            Rule::DiagonalBlock => "diagonal block forbidden",
            Rule::ZeroBlock => "stored block is zero",
            Rule::AgentOutOfRange => "agent index out of range",
            Rule::AgentCount => "agent count mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: Location,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.location, self.rule.describe(), self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Checks every data-model invariant and reports all violations found.
pub fn validate_network(net: &Network, sym_tol: f64) -> ValidationReport {
    let mut violations = Vec::new();
    for (i, agent) in net.agents.iter().enumerate() {
        agent.violations(i, sym_tol, &mut violations);
    }
    let h = &net.h;
    let n = net.agents.len();
    if h.n_agents() != n || h.output_dims.len() != n {
        violations.push(Violation {
            location: Location::Network,
            rule: Rule::AgentCount,
            detail: format!("{n} agents, interconnection sized for {}", h.n_agents()),
        });
    } else {
        for (i, agent) in net.agents.iter().enumerate() {
            if h.input_dims[i] != agent.m() || h.output_dims[i] != agent.l() {
                violations.push(Violation {
                    location: Location::Agent(i),
                    rule: Rule::DimensionMismatch,
                    detail: format!(
                        "interconnection expects m={}, l={}; agent has m={}, l={}",
                        h.input_dims[i],
                        h.output_dims[i],
                        agent.m(),
                        agent.l()
                    ),
                });
            }
        }
    }
    for (&(i, j), block) in &h.blocks {
        let location = Location::Block(i, j);
        if i >= h.n_agents() || j >= h.n_agents() {
            violations.push(Violation {
                location,
                rule: Rule::AgentOutOfRange,
                detail: format!("network has {} agents", h.n_agents()),
            });
            continue;
        }
        if i == j {
            violations.push(Violation {
                location,
                rule: Rule::DiagonalBlock,
                detail: "(H)_ii must be zero".into(),
            });
        }
        let expect = (h.input_dims[i], h.output_dims[j]);
        if (block.nrows(), block.ncols()) != expect {
            violations.push(Violation {
                location,
                rule: Rule::DimensionMismatch,
                detail: format!(
                    "block is {}x{}, expected {}x{}",
                    block.nrows(),
                    block.ncols(),
                    expect.0,
                    expect.1
                ),
            });
        }
        if !all_finite(block) {
            violations.push(Violation {
                location,
                rule: Rule::NonFinite,
                detail: "block has non-finite entries".into(),
            });
        } else if block.iter().all(|v| *v == 0.0) {
            violations.push(Violation {
                location,
                rule: Rule::ZeroBlock,
                detail: "zero blocks must be omitted".into(),
            });
        }
    }
    ValidationReport { violations }
}

/// Global block-diagonal `(Q, S, R)` in agent order.
pub fn stack_certificates(certs: &[DissipativityCertificate]) -> Result<(Mat, Mat, Mat)> {
    if certs.is_empty() {
        return Err(Error::Dimension("no certificates to stack".into()));
    }
    for (i, c) in certs.iter().enumerate() {
        let (l, m) = (c.s.nrows(), c.s.ncols());
        if !c.q.is_square() || c.q.nrows() != l || !c.r.is_square() || c.r.nrows() != m {
            return Err(Error::Dimension(format!(
                "certificate {}: Q, S, R shapes disagree",
                i + 1
            )));
        }
    }
    let q = block_diag(certs.iter().map(|c| &c.q));
    let s = block_diag(certs.iter().map(|c| &c.s));
    let r = block_diag(certs.iter().map(|c| &c.r));
    Ok((q, s, r))
}

pub fn block_diag<'a>(blocks: impl Iterator<Item = &'a Mat> + Clone) -> Mat {
    let rows: usize = blocks.clone().map(|b| b.nrows()).sum();
    let cols: usize = blocks.clone().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Extracts diagonal block `k` of a block-diagonal matrix.
pub fn diag_block(m: &Mat, row_dims: &[usize], col_dims: &[usize], k: usize) -> Mat {
    let ro = offsets(row_dims);
    let co = offsets(col_dims);
    m.view((ro[k], co[k]), (row_dims[k], col_dims[k])).into_owned()
}

fn default_rho() -> f64 {
    1.0
}
fn default_relaxation() -> f64 {
    1.0
}
fn default_delta_pd() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    20_000
}
fn default_primal_tol() -> f64 {
    1e-6
}
fn default_dual_tol() -> f64 {
    1e-6
}
fn default_proj_tol() -> f64 {
    1e-8
}
fn default_proj_max_iter() -> usize {
    5_000
}
fn default_sym_tol() -> f64 {
    1e-10
}
fn default_workers() -> usize {
    1
}
fn default_check_every() -> usize {
    10
}
fn default_true() -> bool {
    true
}

/// Solver parameters. Every field has a default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// ADMM penalty. The scaled-dual updates used here do not depend on it.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Over-relaxation factor in `(0, 2)`; 1 is plain ADMM.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    /// Strictness shift; `None` means `1e-4 * (1 + |H|_F)`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Floor used to test `P > 0` as `P >= delta_pd I`.
    #[serde(default = "default_delta_pd")]
    pub delta_pd: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_primal_tol")]
    pub primal_tol: f64,
    #[serde(default = "default_dual_tol")]
    pub dual_tol: f64,
    #[serde(default = "default_proj_tol")]
    pub proj_tol: f64,
    #[serde(default = "default_proj_max_iter")]
    pub proj_max_iter: usize,
    #[serde(default = "default_sym_tol")]
    pub sym_tol: f64,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    /// Iterations between global stopping checks.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    /// Record the inter-boundary message log.
    #[serde(default = "default_true")]
    pub audit: bool,
    /// Rescale each agent's input channel to balance the interconnection
    /// before iterating; certificates are reported in the original scaling.
    #[serde(default = "default_true")]
    pub input_scaling: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            relaxation: default_relaxation(),
            epsilon: None,
            delta_pd: default_delta_pd(),
            max_iter: default_max_iter(),
            primal_tol: default_primal_tol(),
            dual_tol: default_dual_tol(),
            proj_tol: default_proj_tol(),
            proj_max_iter: default_proj_max_iter(),
            sym_tol: default_sym_tol(),
            worker_count: default_workers(),
            check_every: default_check_every(),
            audit: true,
            input_scaling: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("delta_pd", self.delta_pd),
            ("primal_tol", self.primal_tol),
            ("dual_tol", self.dual_tol),
            ("proj_tol", self.proj_tol),
            ("sym_tol", self.sym_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
            }
        }
        for (name, v) in [
            ("max_iter", self.max_iter),
            ("proj_max_iter", self.proj_max_iter),
            ("worker_count", self.worker_count),
            ("check_every", self.check_every),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.proj_tol >= self.primal_tol {
            return Err(Error::InvalidParameter(format!(
                "proj_tol ({}) must be below primal_tol ({})",
                self.proj_tol, self.primal_tol
            )));
        }
        Ok(())
    }

    pub fn effective_epsilon(&self, h: &Interconnection) -> f64 {
        self.epsilon.unwrap_or_else(|| 1e-4 * (1.0 + h.frobenius_norm()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn lag() -> AgentDynamics {
        AgentDynamics::new(scalar(-1.0), scalar(1.0), scalar(1.0), scalar(0.0))
    }

    #[test]
    fn skew_pair_is_valid() {
        let agents = vec![lag(), lag()];
        let h = Interconnection::empty_for(&agents)
            .with_block(0, 1, scalar(-1.0))
            .with_block(1, 0, scalar(1.0));
        let net = Network::new(agents, h);
        let report = validate_network(&net, 1e-10);
        assert!(report.is_ok(), "{report}");
        // pure: repeated calls agree
        assert_eq!(report, validate_network(&net, 1e-10));
    }

    #[test]
    fn diagonal_block_is_reported() {
        let agents = vec![lag(), lag()];
        let h = Interconnection::empty_for(&agents).with_block(0, 0, scalar(1.0));
        let report = validate_network(&Network::new(agents, h), 1e-10);
        assert!(report.has(Rule::DiagonalBlock));
        assert!(report.to_string().contains("diagonal block forbidden"));
        assert!(report.to_string().contains("H(1,1)"));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let bad = AgentDynamics::new(Mat::zeros(2, 2), Mat::zeros(3, 1), Mat::zeros(1, 2), Mat::zeros(1, 1));
        let agents = vec![bad];
        let h = Interconnection::empty_for(&agents);
        let report = validate_network(&Network::new(agents, h), 1e-10);
        assert!(report.has(Rule::DimensionMismatch));
        assert!(report.to_string().contains("agent 1"));
    }

    #[test]
    fn zero_and_misshaped_blocks() {
        let agents = vec![lag(), lag()];
        let h = Interconnection::empty_for(&agents)
            .with_block(0, 1, scalar(0.0))
            .with_block(1, 0, Mat::zeros(2, 1))
            .with_block(0, 5, scalar(1.0));
        let report = validate_network(&Network::new(agents, h), 1e-10);
        assert!(report.has(Rule::ZeroBlock));
        assert!(report.has(Rule::DimensionMismatch));
        assert!(report.has(Rule::AgentOutOfRange));
    }

    #[test]
    fn fixed_qsr_shape_and_symmetry() {
        let a = lag().with_fixed_qsr(Qsr {
            q: Mat::zeros(2, 2),
            s: scalar(0.5),
            r: scalar(0.0),
        });
        let agents = vec![a];
        let h = Interconnection::empty_for(&agents);
        assert!(validate_network(&Network::new(agents, h), 1e-10).has(Rule::FixedQsrShape));

        let two = AgentDynamics::new(
            -Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::zeros(2, 2),
        )
        .with_fixed_qsr(Qsr {
            q: Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            s: Mat::zeros(2, 2),
            r: Mat::zeros(2, 2),
        });
        let agents = vec![two];
        let h = Interconnection::empty_for(&agents);
        assert!(validate_network(&Network::new(agents, h), 1e-10).has(Rule::NotSymmetric));
    }

    #[test]
    fn stacking_single_and_pair() {
        let c = DissipativityCertificate::new(scalar(1.0), scalar(-1.0), scalar(0.5), scalar(0.0));
        let (q, s, r) = stack_certificates(std::slice::from_ref(&c)).unwrap();
        assert_eq!((q, s, r), (scalar(-1.0), scalar(0.5), scalar(0.0)));

        let delta = 0.25;
        let c2 = DissipativityCertificate::new(scalar(1.0), scalar(-delta), scalar(0.0), scalar(0.0));
        let (q, _, _) = stack_certificates(&[c2.clone(), c2]).unwrap();
        assert_eq!(q, Mat::from_row_slice(2, 2, &[-delta, 0.0, 0.0, -delta]));

        assert!(stack_certificates(&[]).is_err());
    }

    #[test]
    fn stack_then_slice_is_exact() {
        let certs: Vec<_> = (0..3)
            .map(|k| {
                let l = k + 1;
                let m = 3 - k;
                DissipativityCertificate::new(
                    Mat::identity(1, 1),
                    Mat::from_fn(l, l, |i, j| 0.1 * (i + j + k) as f64 + 1.0 / 3.0),
                    Mat::from_fn(l, m, |i, j| (i as f64 - j as f64) / 7.0),
                    Mat::from_fn(m, m, |i, j| ((i * j) as f64).sqrt() + 0.3),
                )
            })
            .collect();
        let (q, s, r) = stack_certificates(&certs).unwrap();
        let ls: Vec<_> = certs.iter().map(|c| c.q.nrows()).collect();
        let ms: Vec<_> = certs.iter().map(|c| c.r.nrows()).collect();
        for (k, c) in certs.iter().enumerate() {
            assert_eq!(diag_block(&q, &ls, &ls, k), c.q);
            assert_eq!(diag_block(&s, &ls, &ms, k), c.s);
            assert_eq!(diag_block(&r, &ms, &ms, k), c.r);
        }
    }

    #[test]
    fn config_defaults_and_checks() {
        let cfg: SolverConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, SolverConfig::default());
        cfg.validate().unwrap();
        let bad = SolverConfig {
            proj_tol: 1e-3,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let h = Interconnection::new(vec![1, 1], vec![1, 1])
            .with_block(0, 1, scalar(3.0))
            .with_block(1, 0, scalar(4.0));
        assert!((cfg.effective_epsilon(&h) - 6e-4).abs() < 1e-15);
    }

    #[test]
    fn interconnection_neighbourhoods() {
        let h = Interconnection::new(vec![1; 4], vec![1; 4])
            .with_block(1, 0, scalar(1.0))
            .with_block(2, 0, scalar(1.0))
            .with_block(2, 3, scalar(1.0));
        assert_eq!(h.receivers_of(0), vec![1, 2]);
        assert_eq!(h.sources_of(2), vec![0, 3]);
        assert!(h.sources_of(0).is_empty());
        let d = h.dense();
        assert_eq!(d[(2, 3)], 1.0);
        assert_eq!(d[(0, 1)], 0.0);
    }
}
