//! The global stability matrix `Qbar = Q + SH + H'S' + H'RH`, its blockwise
//! form, the certification margin, and the centralized projection used by
//! the single-projection solver.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, BlockLayout, Mat};
use crate::model::{stack_certificates, DissipativityCertificate, Interconnection, Network, ParamKind, Symbol};
use crate::projections::{AffineConeProblem, BlockExpr, BlockLmi, ProblemBuilder, ProjectionOptions, Term, WarmStart};

/// Dense `Qbar` with its block layout (agent output dimensions).
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityMatrix {
    pub matrix: Mat,
    pub dims: Vec<usize>,
}

impl StabilityMatrix {
    pub fn block(&self, i: usize, j: usize) -> Mat {
        let o = crate::model::offsets(&self.dims);
        self.matrix
            .view((o[i], o[j]), (self.dims[i], self.dims[j]))
            .into_owned()
    }
}

/// Dense evaluation from the stacked block-diagonal parameters.
pub fn assemble_qbar(certs: &[DissipativityCertificate], h: &Interconnection) -> Result<StabilityMatrix> {
    let (q, s, r) = stack_certificates(certs)?;
    let hd = h.dense();
    if s.ncols() != hd.nrows() || q.nrows() != hd.ncols() {
        return Err(Error::Dimension(format!(
            "stacked S is {}x{}, H is {}x{}",
            s.nrows(),
            s.ncols(),
            hd.nrows(),
            hd.ncols()
        )));
    }
    let sh = &s * &hd;
    let m = &q + &sh + sh.transpose() + hd.transpose() * &r * &hd;
    Ok(StabilityMatrix {
        matrix: crate::linalg::symmetrize(&m),
        dims: certs.iter().map(|c| c.q.nrows()).collect(),
    })
}

/// Block `(i, j)` of `Qbar` from the per-block formulas; the sums run over the
/// agents `k` whose interconnection blocks `(k, i)` (and `(k, j)`) exist.
pub fn qbar_block(i: usize, j: usize, certs: &[DissipativityCertificate], h: &Interconnection) -> Result<Mat> {
    let n = certs.len();
    if i >= n || j >= n {
        return Err(Error::OutOfRange {
            index: i.max(j),
            len: n,
        });
    }
    if h.n_agents() != n {
        return Err(Error::Dimension(format!(
            "{n} certificates, {} agents in H",
            h.n_agents()
        )));
    }
    let (li, lj) = (certs[i].q.nrows(), certs[j].q.nrows());
    let mut out = if i == j { certs[i].q.clone() } else { Mat::zeros(li, lj) };
    if i != j {
        if let Some(hij) = h.block(i, j) {
            out += &certs[i].s * hij;
        }
        if let Some(hji) = h.block(j, i) {
            out += hji.transpose() * certs[j].s.transpose();
        }
    }
    for k in h.receivers_of(i) {
        if let (Some(hki), Some(hkj)) = (h.block(k, i), h.block(k, j)) {
            out += hki.transpose() * &certs[k].r * hkj;
        }
    }
    if (out.nrows(), out.ncols()) != (li, lj) {
        return Err(Error::Dimension(format!("block ({i},{j}) has wrong shape")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub lambda_max: f64,
    pub certified: bool,
}

/// Certified iff `lambda_max(qbar) <= -epsilon + tol`.
pub fn stability_margin(qbar: &Mat, epsilon: f64, tol: f64) -> Result<Margin> {
    let lambda_max = max_eigenvalue(qbar)?;
    Ok(Margin {
        lambda_max,
        certified: lambda_max <= -epsilon + tol,
    })
}

/// How a parameter symbol enters an expression being assembled.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Var(usize),
    Const(&'a Mat),
}

fn add_operand(e: &mut BlockExpr, op: Operand<'_>, left: Option<&Mat>, right: Option<&Mat>, transpose: bool) {
    match op {
        Operand::Var(v) => {
            let mut t = Term::var(v);
            if transpose {
                t = t.transposed();
            }
            if let Some(l) = left {
                t = t.left(l.clone());
            }
            if let Some(r) = right {
                t = t.right(r.clone());
            }
            e.push(t);
        }
        Operand::Const(m) => {
            let mut v = if transpose { m.transpose() } else { m.clone() };
            if let Some(l) = left {
                v = l * v;
            }
            if let Some(r) = right {
                v *= r;
            }
            e.add_constant(&v);
        }
    }
}

/// Symbols that appear in block `(i, j)` of `Qbar`, in the order the block
/// formula uses them.
pub fn qbar_block_symbols(i: usize, j: usize, h: &Interconnection) -> Vec<Symbol> {
    let mut out = Vec::new();
    if i == j {
        out.push(Symbol::q(i));
    } else {
        if h.block(i, j).is_some() {
            out.push(Symbol::s(i));
        }
        if h.block(j, i).is_some() {
            out.push(Symbol::s(j));
        }
    }
    for k in h.receivers_of(i) {
        if h.block(k, j).is_some() {
            out.push(Symbol::r(k));
        }
    }
    out
}

/// Block `(i, j)` of `Qbar` as an affine expression in the resolved symbols.
/// Returns `None` when the block is structurally zero.
pub fn qbar_block_expr<'a>(
    i: usize,
    j: usize,
    net: &Network,
    resolve: &dyn Fn(Symbol) -> Operand<'a>,
) -> Option<BlockExpr> {
    let h = &net.h;
    let (li, lj) = (net.agents[i].l(), net.agents[j].l());
    let mut e = BlockExpr::new(li, lj);
    let mut any = false;
    if i == j {
        add_operand(&mut e, resolve(Symbol::q(i)), None, None, false);
        any = true;
    } else {
        if let Some(hij) = h.block(i, j) {
            add_operand(&mut e, resolve(Symbol::s(i)), None, Some(hij), false);
            any = true;
        }
        if let Some(hji) = h.block(j, i) {
            add_operand(&mut e, resolve(Symbol::s(j)), Some(&hji.transpose()), None, true);
            any = true;
        }
    }
    for k in h.receivers_of(i) {
        if let (Some(hki), Some(hkj)) = (h.block(k, i), h.block(k, j)) {
            add_operand(&mut e, resolve(Symbol::r(k)), Some(&hki.transpose()), Some(hkj), false);
            any = true;
        }
    }
    any.then_some(e)
}

/// Ordered registry of decision symbols with their packed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    symbols: Vec<Symbol>,
    index: BTreeMap<Symbol, usize>,
    layout: BlockLayout,
}

impl SymbolTable {
    pub fn new(symbols: Vec<Symbol>, shape: impl Fn(Symbol) -> crate::linalg::BlockShape) -> Self {
        let index = symbols.iter().enumerate().map(|(k, s)| (*s, k)).collect();
        let layout = BlockLayout::new(symbols.iter().map(|s| shape(*s)).collect());
        Self { symbols, index, layout }
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn get(&self, s: Symbol) -> Option<usize> {
        self.index.get(&s).copied()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Resolves a parameter symbol against a table, falling back to the declared
/// value of a fixed agent.
pub fn resolver<'a>(net: &'a Network, table: &'a SymbolTable) -> impl Fn(Symbol) -> Operand<'a> + 'a {
    move |s| {
        if let Some(v) = table.get(s) {
            return Operand::Var(v);
        }
        match s {
            Symbol::Param { agent, kind } => Operand::Const(
                net.fixed_value(agent, kind)
                    .unwrap_or_else(|| panic!("symbol {s} is neither a variable nor declared")),
            ),
            Symbol::Y { .. } => panic!("unregistered overlap slot {s}"),
        }
    }
}

pub fn param_shape(net: &Network) -> impl Fn(Symbol) -> crate::linalg::BlockShape + '_ {
    move |s| match s {
        Symbol::Param { agent, kind } => net.param_shape(agent, kind),
        Symbol::Y { .. } => panic!("parameter table cannot hold overlap slots"),
    }
}

/// Projection onto `{(Q, S, R) : Qbar + eps I <= 0}` over all free agents.
/// `P` is not constrained and passes through; declared agents contribute
/// constants.
#[derive(Debug, Clone)]
pub struct GlobalStabilityProblem {
    table: SymbolTable,
    problem: AffineConeProblem,
    epsilon: f64,
}

impl GlobalStabilityProblem {
    pub fn new(net: &Network, epsilon: f64) -> Result<Self> {
        let mut symbols = Vec::new();
        for i in 0..net.len() {
            if !net.is_fixed(i) {
                symbols.extend([Symbol::q(i), Symbol::s(i), Symbol::r(i)]);
            }
        }
        let table = SymbolTable::new(symbols, param_shape(net));
        let dims: Vec<usize> = net.agents.iter().map(|a| a.l()).collect();
        let mut lmi = BlockLmi::new(dims.clone());
        {
            let resolve = resolver(net, &table);
            for i in 0..net.len() {
                for j in i..net.len() {
                    if let Some(e) = qbar_block_expr(i, j, net, &resolve) {
                        *lmi.block_mut(i, j) = e;
                    }
                }
                lmi.block_mut(i, i)
                    .add_constant(&(Mat::identity(dims[i], dims[i]) * epsilon));
            }
        }
        let mut b = ProblemBuilder::new(table.layout().clone());
        b.nsd(lmi);
        Ok(Self {
            problem: b.build()?,
            table,
            epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Scalar dimension of the projection.
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn lmi_side(&self) -> usize {
        self.problem.lmi_sides().first().copied().unwrap_or(0)
    }

    pub fn project(
        &self,
        net: &Network,
        seed: &[DissipativityCertificate],
        opts: &ProjectionOptions,
        warm: Option<&mut WarmStart>,
    ) -> Result<Vec<DissipativityCertificate>> {
        if seed.len() != net.len() {
            return Err(Error::Dimension(format!(
                "{} certificates for {} agents",
                seed.len(),
                net.len()
            )));
        }
        let blocks: Vec<Mat> = self
            .table
            .symbols()
            .iter()
            .map(|s| match *s {
                Symbol::Param { agent, kind } => seed[agent].block(kind).clone(),
                Symbol::Y { .. } => unreachable!(),
            })
            .collect();
        let projected = self.problem.project_blocks(&blocks, opts, warm)?;
        let mut out = seed.to_vec();
        for (s, v) in self.table.symbols().iter().zip(projected) {
            if let Symbol::Param { agent, kind } = *s {
                *out[agent].block_mut(kind) = v;
            }
        }
        for (i, c) in out.iter_mut().enumerate() {
            for kind in [ParamKind::Q, ParamKind::S, ParamKind::R] {
                if let Some(v) = net.fixed_value(i, kind) {
                    *c.block_mut(kind) = v.clone();
                }
            }
        }
        Ok(out)
    }
}

/// Projects the `(Q, S, R)` components of `seed` onto the stability set.
pub fn project_global_stability(
    seed: &[DissipativityCertificate],
    net: &Network,
    cfg: &crate::model::SolverConfig,
) -> Result<Vec<DissipativityCertificate>> {
    let eps = cfg.effective_epsilon(&net.h);
    GlobalStabilityProblem::new(net, eps)?.project(net, seed, &ProjectionOptions::from_config(cfg), None)
}
