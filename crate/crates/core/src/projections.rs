//! Convex projection kernels.
//!
//! [`project_nsd`] and [`project_psd_floor`] are the spectral kernels.
//! [`AffineConeProblem`] computes the Euclidean projection of a seed onto the
//! preimage `{x : G(x) + g in K}` of a product of matrix cones under an affine
//! map, where each factor of `K` is either the negative semidefinite cone or a
//! floored set `{Z : Z >= delta I}`.
//!
//! The projection splits `x` from its image `z = G(x) + g` and runs ADMM on
//! the lifted pair: the `x`-step is a linear solve with the cached factor of
//! `I + sigma G^T G`, the `z`-step is a per-factor spectral projection. The
//! final iterate is the exact projection up to the requested residual, which
//! is what the outer consensus iterations need (a merely feasible point is
//! not enough).

use std::collections::BTreeMap;

use std::sync::Arc;

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{
    all_finite, asymmetry, max_eigenvalue, min_eigenvalue, smat, svec_index, svec_into, svec_len, sym_eigen,
    BlockLayout, BlockShape, Mat, SQRT2,
};

/// Nearest negative semidefinite matrix in Frobenius norm.
pub fn project_nsd(m: &Mat) -> Result<Mat> {
    spectral_map(m, |l| l.min(0.0))
}

/// Nearest matrix with spectrum `>= delta`.
pub fn project_psd_floor(m: &Mat, delta: f64) -> Result<Mat> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "floor must be non-negative, got {delta}"
        )));
    }
    spectral_map(m, |l| l.max(delta))
}

fn spectral_map(m: &Mat, f: impl Fn(f64) -> f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = sym_eigen(m)?;
    let mut lambda = eig.eigenvalues.clone();
    let mut unchanged = true;
    for l in lambda.iter_mut() {
        let v = f(*l);
        unchanged &= v == *l;
        *l = v;
    }
    if unchanged {
        return Ok(crate::linalg::symmetrize(m));
    }
    let v = &eig.eigenvectors;
    let out = v * Mat::from_diagonal(&lambda) * v.transpose();
    Ok(crate::linalg::symmetrize(&out))
}

/// One linear term `scale * L * op(V) * R` of a block expression, where `V`
/// is a block of the decision variable and `op` is identity or transpose.
#[derive(Debug, Clone)]
pub struct Term {
    pub var: usize,
    pub left: Option<Mat>,
    pub right: Option<Mat>,
    pub transpose: bool,
    pub scale: f64,
}

impl Term {
    pub fn var(var: usize) -> Self {
        Self {
            var,
            left: None,
            right: None,
            transpose: false,
            scale: 1.0,
        }
    }

    pub fn left(mut self, l: Mat) -> Self {
        self.left = Some(l);
        self
    }

    pub fn right(mut self, r: Mat) -> Self {
        self.right = Some(r);
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transpose = !self.transpose;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale *= s;
        self
    }

    fn eval(&self, v: &Mat) -> Mat {
        let mut out = if self.transpose { v.transpose() } else { v.clone() };
        if let Some(l) = &self.left {
            out = l * out;
        }
        if let Some(r) = &self.right {
            out *= r;
        }
        if self.scale != 1.0 {
            out *= self.scale;
        }
        out
    }

    fn out_dims(&self, shape: (usize, usize)) -> (usize, usize) {
        let (mut r, mut c) = if self.transpose { (shape.1, shape.0) } else { shape };
        if let Some(l) = &self.left {
            r = l.nrows();
        }
        if let Some(rt) = &self.right {
            c = rt.ncols();
        }
        (r, c)
    }
}

/// Affine matrix expression `sum_t term_t + constant`.
#[derive(Debug, Clone)]
pub struct BlockExpr {
    rows: usize,
    cols: usize,
    terms: Vec<Term>,
    constant: Option<Mat>,
}

impl BlockExpr {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            terms: Vec::new(),
            constant: None,
        }
    }

    pub fn push(&mut self, term: Term) -> &mut Self {
        self.terms.push(term);
        self
    }

    pub fn add_constant(&mut self, m: &Mat) -> &mut Self {
        match &mut self.constant {
            Some(c) => *c += m,
            None => self.constant = Some(m.clone()),
        }
        self
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn eval(&self, vars: &[Mat]) -> Mat {
        let mut out = self
            .constant
            .clone()
            .unwrap_or_else(|| Mat::zeros(self.rows, self.cols));
        for t in &self.terms {
            out += t.eval(&vars[t.var]);
        }
        out
    }
}

/// Symmetric block matrix whose upper-triangular blocks `(r, c)`, `r <= c`,
/// are affine expressions. Diagonal blocks are symmetrized; block `(c, r)` is
/// the transpose of block `(r, c)`. Absent blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    blocks: BTreeMap<(usize, usize), BlockExpr>,
}

impl BlockLmi {
    pub fn new(dims: Vec<usize>) -> Self {
        let offsets = crate::model::offsets(&dims);
        Self {
            dims,
            offsets,
            blocks: BTreeMap::new(),
        }
    }

    pub fn side(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Block `(r, c)`, created empty on first use. Requesting `r > c` returns
    /// the transposed storage slot, so callers must supply terms for the
    /// upper-triangular orientation.
    pub fn block_mut(&mut self, r: usize, c: usize) -> &mut BlockExpr {
        assert!(r <= c, "blocks are stored for r <= c");
        let (rows, cols) = (self.dims[r], self.dims[c]);
        self.blocks.entry((r, c)).or_insert_with(|| BlockExpr::new(rows, cols))
    }

    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &BlockExpr)> {
        self.blocks.iter().map(|(k, v)| (*k, v))
    }

    /// Dense value at the given variable values.
    pub fn eval(&self, vars: &[Mat]) -> Mat {
        let n = self.side();
        let mut m = Mat::zeros(n, n);
        for (&(r, c), e) in &self.blocks {
            let v = e.eval(vars);
            self.place(&mut m, r, c, &v);
        }
        m
    }

    fn place(&self, m: &mut Mat, r: usize, c: usize, v: &Mat) {
        let (ro, co) = (self.offsets[r], self.offsets[c]);
        if r == c {
            let s = crate::linalg::symmetrize(v);
            let mut view = m.view_mut((ro, co), (v.nrows(), v.ncols()));
            view += &s;
        } else {
            {
                let mut view = m.view_mut((ro, co), (v.nrows(), v.ncols()));
                view += v;
            }
            let mut view = m.view_mut((co, ro), (v.ncols(), v.nrows()));
            view += v.transpose();
        }
    }

    fn check(&self, layout: &BlockLayout) -> Result<()> {
        for (&(r, c), e) in &self.blocks {
            if e.dims() != (self.dims[r], self.dims[c]) {
                return Err(Error::Dimension(format!("LMI block ({r},{c}) has wrong shape")));
            }
            if let Some(k) = &e.constant {
                if (k.nrows(), k.ncols()) != e.dims() {
                    return Err(Error::Dimension(format!(
                        "LMI block ({r},{c}) constant has wrong shape"
                    )));
                }
            }
            for t in &e.terms {
                let shape = layout.shapes().get(t.var).ok_or(Error::OutOfRange {
                    index: t.var,
                    len: layout.num_blocks(),
                })?;
                if let Some(l) = &t.left {
                    let inner = if t.transpose { shape.dims().1 } else { shape.dims().0 };
                    if l.ncols() != inner {
                        return Err(Error::Dimension(format!("LMI block ({r},{c}): left factor mismatch")));
                    }
                }
                if let Some(rt) = &t.right {
                    let inner = if t.transpose { shape.dims().0 } else { shape.dims().1 };
                    if rt.nrows() != inner {
                        return Err(Error::Dimension(format!("LMI block ({r},{c}): right factor mismatch")));
                    }
                }
                if t.out_dims(shape.dims()) != e.dims() {
                    return Err(Error::Dimension(format!(
                        "LMI block ({r},{c}): term output has wrong shape"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sparse linear part (columns over the packed variable) and constant, both
    /// in svec coordinates of the full matrix.
    fn linearize(&self, layout: &BlockLayout) -> (CscMatrix, Vec<f64>) {
        let n = self.side();
        let constant = {
            let mut m = Mat::zeros(n, n);
            for (&(r, c), e) in &self.blocks {
                if let Some(k) = &e.constant {
                    self.place(&mut m, r, c, k);
                }
            }
            let mut v = vec![0.0; svec_len(n)];
            svec_into(&m, &mut v);
            v
        };

        // terms grouped by variable block
        let mut by_var: Vec<Vec<((usize, usize), &Term)>> = vec![Vec::new(); layout.num_blocks()];
        for (&(r, c), e) in &self.blocks {
            for t in &e.terms {
                by_var[t.var].push(((r, c), t));
            }
        }

        let mut cols = CscBuilder::new(svec_len(n));
        for (b, shape) in layout.shapes().iter().enumerate() {
            for k in 0..shape.len() {
                let unit = shape.unit(k);
                let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
                let mut contrib: BTreeMap<(usize, usize), Mat> = BTreeMap::new();
                for &((r, c), t) in &by_var[b] {
                    let v = t.eval(&unit);
                    match contrib.get_mut(&(r, c)) {
                        Some(acc) => *acc += v,
                        None => {
                            contrib.insert((r, c), v);
                        }
                    }
                }
                for ((r, c), v) in contrib {
                    let (ro, co) = (self.offsets[r], self.offsets[c]);
                    if r == c {
                        for j in 0..v.ncols() {
                            for i in j..v.nrows() {
                                let val = if i == j {
                                    v[(i, i)]
                                } else {
                                    SQRT2 * 0.5 * (v[(i, j)] + v[(j, i)])
                                };
                                if val != 0.0 {
                                    *entries.entry(svec_index(n, ro + i, co + j)).or_insert(0.0) += val;
                                }
                            }
                        }
                    } else {
                        // lower-triangle copy lives at (co + j, ro + i)
                        for i in 0..v.nrows() {
                            for j in 0..v.ncols() {
                                let val = v[(i, j)];
                                if val != 0.0 {
                                    *entries.entry(svec_index(n, co + j, ro + i)).or_insert(0.0) += SQRT2 * val;
                                }
                            }
                        }
                    }
                }
                cols.push_column(entries.into_iter().filter(|(_, v)| *v != 0.0));
            }
        }
        (cols.finish(), constant)
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, Default)]
struct CscMatrix {
    nrows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CscMatrix {
    fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out += self * x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                out[self.row_idx[p]] += self.vals[p] * xk;
            }
        }
    }

    /// `out = self^T * y`
    fn tr_mul(&self, y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                acc += self.vals[p] * y[self.row_idx[p]];
            }
            *o = acc;
        }
    }

    fn select_columns(&self, cols: &[usize]) -> CscMatrix {
        let mut b = CscBuilder::new(self.nrows);
        for &k in cols {
            let r = self.col_ptr[k]..self.col_ptr[k + 1];
            b.push_column(
                self.row_idx[r.clone()]
                    .iter()
                    .copied()
                    .zip(self.vals[r].iter().copied()),
            );
        }
        b.finish()
    }
}

struct CscBuilder {
    m: CscMatrix,
}

impl CscBuilder {
    fn new(nrows: usize) -> Self {
        Self {
            m: CscMatrix {
                nrows,
                col_ptr: vec![0],
                row_idx: Vec::new(),
                vals: Vec::new(),
            },
        }
    }

    fn push_column(&mut self, entries: impl Iterator<Item = (usize, f64)>) {
        for (r, v) in entries {
            self.m.row_idx.push(r);
            self.m.vals.push(v);
        }
        self.m.col_ptr.push(self.m.vals.len());
    }

    fn finish(self) -> CscMatrix {
        self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConeKind {
    Nsd,
    Floor(f64),
}

impl ConeKind {
    /// Spectral function whose matrix extension maps `w` to
    /// `w - sigma proj_K(w / sigma)`.
    fn excess(self, l: f64, sigma: f64) -> f64 {
        match self {
            ConeKind::Nsd => l.max(0.0),
            ConeKind::Floor(d) => (l - sigma * d).min(0.0),
        }
    }

    fn outside(self, l: f64, sigma: f64) -> bool {
        match self {
            ConeKind::Nsd => l > 0.0,
            ConeKind::Floor(d) => l < sigma * d,
        }
    }
}

/// One factor of the product cone, occupying rows `offset..offset+svec_len(side)`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    offset: usize,
    side: usize,
    kind: ConeKind,
}

/// Spectral data of one segment at the current point.
struct SegmentEig {
    q: Mat,
    lambda: Vec<f64>,
    outside: Vec<usize>,
}

impl Segment {
    fn len(&self) -> usize {
        svec_len(self.side)
    }

    /// Signed violation: positive means outside the set.
    fn violation(&self, v: &[f64]) -> Result<f64> {
        if self.side == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let m = smat(v, self.side);
        match self.kind {
            ConeKind::Nsd => max_eigenvalue(&m),
            ConeKind::Floor(d) => Ok(d - min_eigenvalue(&m)?),
        }
    }

    /// Writes `w - sigma proj_K(w / sigma)` and returns the eigendata it came from.
    fn excess(&self, w: &[f64], sigma: f64, out: &mut [f64]) -> Result<SegmentEig> {
        let n = self.side;
        if n == 0 {
            return Ok(SegmentEig {
                q: Mat::zeros(0, 0),
                lambda: Vec::new(),
                outside: Vec::new(),
            });
        }
        let eig = sym_eigen(&smat(w, n))?;
        let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let outside: Vec<usize> = (0..n).filter(|&i| self.kind.outside(lambda[i], sigma)).collect();
        if outside.is_empty() {
            out.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let q = &eig.eigenvectors;
            let mut qa = Mat::zeros(n, outside.len());
            let mut qf = Mat::zeros(n, outside.len());
            for (a, &i) in outside.iter().enumerate() {
                let f = self.kind.excess(lambda[i], sigma);
                for r in 0..n {
                    qa[(r, a)] = q[(r, i)];
                    qf[(r, a)] = q[(r, i)] * f;
                }
            }
            svec_into(&(qf * qa.transpose()), out);
        }
        Ok(SegmentEig {
            q: eig.eigenvectors,
            lambda,
            outside,
        })
    }
}

/// Iteration limits for one projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl ProjectionOptions {
    pub fn from_config(cfg: &crate::model::SolverConfig) -> Self {
        Self {
            tol: cfg.proj_tol,
            max_iter: cfg.proj_max_iter,
        }
    }
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

/// Multiplier and penalty carried between successive projections of nearby
/// seeds. Owned by the caller, so one problem instance can serve concurrent
/// projections.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    y: Vec<f64>,
    x: Vec<f64>,
    sigma: f64,
    /// Factored Newton matrix at `sigma`, reused as a preconditioner.
    factor: Option<Arc<Factor>>,
    /// Newton steps spent by the most recent projection.
    pub last_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Collects the LMIs and floors of one projection problem.
#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    layout: BlockLayout,
    lmis: Vec<BlockLmi>,
    floors: Vec<(usize, f64)>,
}

impl ProblemBuilder {
    pub fn new(layout: BlockLayout) -> Self {
        Self {
            layout,
            lmis: Vec::new(),
            floors: Vec::new(),
        }
    }

    /// Adds the constraint `lmi(x) <= 0`.
    pub fn nsd(&mut self, lmi: BlockLmi) -> &mut Self {
        self.lmis.push(lmi);
        self
    }

    /// Adds the constraint `x[block] >= delta I` on a symmetric block.
    pub fn floor(&mut self, block: usize, delta: f64) -> &mut Self {
        self.floors.push((block, delta));
        self
    }

    pub fn build(&self) -> Result<AffineConeProblem> {
        AffineConeProblem::new(self.layout.clone(), &self.lmis, &self.floors)
    }
}

/// Penalty growth per multiplier update and its ceiling relative to the
/// reference penalty.
const SIGMA_GROWTH: f64 = 10.0;
const SIGMA_SPAN: f64 = 1e7;
const ARMIJO: f64 = 1e-4;
/// Problems with at least this many active coordinates solve the Newton
/// system by conjugate gradients, preconditioned with a stale factorization.
const CG_MIN_DIM: usize = 96;
/// Relative residual of the inexact Newton solve.
const CG_TOL: f64 = 1e-3;
/// Conjugate-gradient steps before the preconditioner is refactored.
const CG_MAX_ITER: usize = 40;

#[derive(Debug)]
struct Factor {
    sigma: f64,
    chol: Cholesky<f64, Dyn>,
}

/// Nonzero of one decision column inside one cone factor, as a matrix entry
/// `(i, j)`, `i >= j`; off-diagonal entries stand for both triangles.
#[derive(Debug, Clone, Copy)]
struct ColEntry {
    seg: u32,
    i: u32,
    j: u32,
    v: f64,
}

/// Euclidean projection onto `{x : lmi_k(x) <= 0 for all k, x_b >= delta_b I}`
/// in packed coordinates (svec for symmetric blocks, so the norm is the
/// Frobenius norm of the matrix blocks).
///
/// Solved by the augmented Lagrangian method on the constraint image, each
/// subproblem by semismooth Newton with an exact dense Newton matrix.
/// Coordinates that no constraint touches pass through unchanged.
#[derive(Debug, Clone)]
pub struct AffineConeProblem {
    layout: BlockLayout,
    g: CscMatrix,
    offset: Vec<f64>,
    segments: Vec<Segment>,
    lmis: Vec<BlockLmi>,
    active: Vec<usize>,
    g_active: CscMatrix,
    entries: Vec<Vec<ColEntry>>,
    sigma_ref: f64,
}

impl AffineConeProblem {
    pub fn new(layout: BlockLayout, lmis: &[BlockLmi], floors: &[(usize, f64)]) -> Result<Self> {
        let mut rows = 0;
        let mut segments = Vec::new();
        let mut parts = Vec::new();
        for lmi in lmis {
            lmi.check(&layout)?;
            let (a, c) = lmi.linearize(&layout);
            segments.push(Segment {
                offset: rows,
                side: lmi.side(),
                kind: ConeKind::Nsd,
            });
            rows += c.len();
            parts.push((a, c));
        }
        for &(block, delta) in floors {
            let shape = *layout.shapes().get(block).ok_or(Error::OutOfRange {
                index: block,
                len: layout.num_blocks(),
            })?;
            let BlockShape::Symmetric(n) = shape else {
                return Err(Error::InvalidParameter(format!("floor on non-symmetric block {block}")));
            };
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "floor must be non-negative, got {delta}"
                )));
            }
            let o = layout.offset(block);
            let mut b = CscBuilder::new(svec_len(n));
            for k in 0..layout.dim() {
                if k >= o && k < o + svec_len(n) {
                    b.push_column(std::iter::once((k - o, 1.0)));
                } else {
                    b.push_column(std::iter::empty());
                }
            }
            segments.push(Segment {
                offset: rows,
                side: n,
                kind: ConeKind::Floor(delta),
            });
            rows += svec_len(n);
            parts.push((b.finish(), vec![0.0; svec_len(n)]));
        }
        let g = stack_rows(layout.dim(), rows, &parts);
        let offset: Vec<f64> = parts.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        if offset.iter().any(|v| !v.is_finite()) || g.vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection problem data".into()));
        }

        // row -> (segment, i, j)
        let mut row_map = Vec::with_capacity(rows);
        for (si, s) in segments.iter().enumerate() {
            for j in 0..s.side {
                for i in j..s.side {
                    row_map.push((si as u32, i as u32, j as u32));
                }
            }
        }
        let active: Vec<usize> = (0..layout.dim()).filter(|&k| g.col_ptr[k + 1] > g.col_ptr[k]).collect();
        let g_active = g.select_columns(&active);
        let entries = (0..active.len())
            .map(|k| {
                (g_active.col_ptr[k]..g_active.col_ptr[k + 1])
                    .map(|p| {
                        let (seg, i, j) = row_map[g_active.row_idx[p]];
                        let v = if i == j {
                            g_active.vals[p]
                        } else {
                            g_active.vals[p] / SQRT2
                        };
                        ColEntry { seg, i, j, v }
                    })
                    .collect()
            })
            .collect();
        let na = active.len();
        let mean_sq = if na == 0 {
            1.0
        } else {
            (0..na)
                .map(|k| {
                    (g_active.col_ptr[k]..g_active.col_ptr[k + 1])
                        .map(|p| g_active.vals[p] * g_active.vals[p])
                        .sum::<f64>()
                })
                .sum::<f64>()
                / na as f64
        };
        Ok(Self {
            layout,
            g,
            offset,
            segments,
            lmis: lmis.to_vec(),
            active,
            g_active,
            entries,
            sigma_ref: 1.0 / mean_sq,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Number of scalar decision coordinates.
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Number of coordinates some constraint depends on.
    pub fn active_dim(&self) -> usize {
        self.active.len()
    }

    /// Sides of the NSD constraints.
    pub fn lmi_sides(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.kind == ConeKind::Nsd)
            .map(|s| s.side)
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.g.nnz()
    }

    /// Value of each LMI at the given blocks.
    pub fn lmi_values(&self, vars: &[Mat]) -> Vec<Mat> {
        self.lmis.iter().map(|l| l.eval(vars)).collect()
    }

    fn image(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.offset.clone();
        self.g.mul_add(x, &mut y);
        y
    }

    /// Largest signed constraint violation at `x` (non-positive iff feasible).
    pub fn violation(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "seed has {} coordinates, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let y = self.image(x);
        let mut worst = f64::NEG_INFINITY;
        for s in &self.segments {
            worst = worst.max(s.violation(&y[s.offset..s.offset + s.len()])?);
        }
        Ok(worst)
    }

    pub fn project_blocks(
        &self,
        seed: &[Mat],
        opts: &ProjectionOptions,
        warm: Option<&mut WarmStart>,
    ) -> Result<Vec<Mat>> {
        let s = self.layout.pack(seed)?;
        let p = self.project(&s, opts, warm)?;
        Ok(self.layout.unpack(&p.x))
    }

    /// `G x_active + g`
    fn active_image(&self, x: &[f64]) -> Vec<f64> {
        let mut m = self.offset.clone();
        self.g_active.mul_add(x, &mut m);
        m
    }

    fn excess_all(&self, w: &[f64], sigma: f64, out: &mut [f64]) -> Result<Vec<SegmentEig>> {
        self.segments
            .iter()
            .map(|s| {
                let r = s.offset..s.offset + s.len();
                s.excess(&w[r.clone()], sigma, &mut out[r])
            })
            .collect()
    }

    /// `<y, m - c>`, `c` the apex of the product set.
    fn complementarity(&self, y: &[f64], m: &[f64]) -> f64 {
        let mut total: f64 = y.iter().zip(m).map(|(a, b)| a * b).sum();
        for s in &self.segments {
            if let ConeKind::Floor(d) = s.kind {
                for j in 0..s.side {
                    total -= d * y[s.offset + svec_index(s.side, j, j)];
                }
            }
        }
        total
    }

    /// Subproblem value, gradient and spectral data at `x` for multiplier `y`.
    fn subproblem(&self, x: &[f64], seed: &[f64], y: &[f64], sigma: f64) -> Result<Subproblem> {
        let m = self.active_image(x);
        let w: Vec<f64> = y.iter().zip(&m).map(|(yi, mi)| yi + sigma * mi).collect();
        let mut fw = vec![0.0; w.len()];
        let eigs = self.excess_all(&w, sigma, &mut fw)?;
        let mut grad = vec![0.0; x.len()];
        self.g_active.tr_mul(&fw, &mut grad);
        let mut obj = 0.0;
        for k in 0..x.len() {
            let d = x[k] - seed[k];
            obj += 0.5 * d * d;
            grad[k] += d;
        }
        obj += 0.5 / sigma * fw.iter().map(|v| v * v).sum::<f64>();
        Ok(Subproblem { obj, grad, fw, eigs })
    }

    /// `I + sigma G^T J G`, `J` the generalized Jacobian of the excess map.
    fn newton_matrix(&self, eigs: &[SegmentEig], sigma: f64) -> Mat {
        let na = self.active.len();
        let mut nm = Mat::identity(na, na);
        for (si, (seg, e)) in self.segments.iter().zip(eigs).enumerate() {
            let r = e.outside.len();
            if r == 0 {
                continue;
            }
            let n = seg.side;
            let mut pos = vec![usize::MAX; n];
            for (a, &i) in e.outside.iter().enumerate() {
                pos[i] = a;
            }
            // pair rows (a, j) with their weights
            let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
            for (a, &i) in e.outside.iter().enumerate() {
                let fi = seg.kind.excess(e.lambda[i], sigma);
                for j in 0..n {
                    if pos[j] == usize::MAX {
                        let omega = fi / (e.lambda[i] - e.lambda[j]);
                        if omega != 0.0 {
                            pairs.push((a, j, (2.0 * omega).sqrt()));
                        }
                    } else if pos[j] == a {
                        pairs.push((a, j, 1.0));
                    } else if pos[j] > a {
                        pairs.push((a, j, SQRT2));
                    }
                }
            }
            let qa = Mat::from_fn(n, r, |row, a| e.q[(row, e.outside[a])]);
            let mut c = Mat::zeros(pairs.len(), na);
            let mut ghat = Mat::zeros(r, n);
            for k in 0..na {
                let mut touched = false;
                ghat.fill(0.0);
                for ent in self.entries[k].iter().filter(|ent| ent.seg as usize == si) {
                    touched = true;
                    let (i, j) = (ent.i as usize, ent.j as usize);
                    // ghat += v * qa[i,:]^T q[j,:] (+ the mirrored entry)
                    for a in 0..r {
                        let ai = ent.v * qa[(i, a)];
                        let aj = ent.v * qa[(j, a)];
                        for b in 0..n {
                            let mut add = ai * e.q[(j, b)];
                            if i != j {
                                add += aj * e.q[(i, b)];
                            }
                            ghat[(a, b)] += add;
                        }
                    }
                }
                if touched {
                    for (p, &(a, b, wgt)) in pairs.iter().enumerate() {
                        c[(p, k)] = wgt * ghat[(a, b)];
                    }
                }
            }
            syrk_add(&mut nm, sigma, &c);
        }
        nm
    }

    fn factor(&self, eigs: &[SegmentEig], sigma: f64) -> Result<Arc<Factor>> {
        let chol = Cholesky::new(self.newton_matrix(eigs, sigma))
            .ok_or_else(|| Error::NonFinite("projection Newton matrix".into()))?;
        Ok(Arc::new(Factor { sigma, chol }))
    }

    /// Solves `(I + sigma G^T J G) d = -grad`: directly for small problems,
    /// otherwise by conjugate gradients preconditioned with the last
    /// factorization at the same penalty, refactoring when that stalls.
    fn newton_direction(&self, sp: &Subproblem, sigma: f64, cache: &mut Option<Arc<Factor>>) -> Result<DVector<f64>> {
        let na = self.active.len();
        let rhs = DVector::from_iterator(na, sp.grad.iter().map(|g| -g));
        if na < CG_MIN_DIM {
            let f = self.factor(&sp.eigs, sigma)?;
            return Ok(f.chol.solve(&rhs));
        }
        if let Some(f) = cache.as_ref().filter(|f| f.sigma == sigma) {
            let op = NewtonOperator::new(self, &sp.eigs, sigma);
            if let Some(d) = pcg(|v| op.apply(v), |r| f.chol.solve(r), &rhs, CG_TOL, CG_MAX_ITER) {
                return Ok(d);
            }
        }
        let f = self.factor(&sp.eigs, sigma)?;
        let d = f.chol.solve(&rhs);
        *cache = Some(f);
        Ok(d)
    }

    /// Projects `seed`. A seed that is already feasible is returned as is.
    pub fn project(&self, seed: &[f64], opts: &ProjectionOptions, warm: Option<&mut WarmStart>) -> Result<Projection> {
        let d = self.dim();
        if seed.len() != d {
            return Err(Error::Dimension(format!(
                "seed has {} coordinates, expected {d}",
                seed.len()
            )));
        }
        if seed.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection seed".into()));
        }
        let mut local = WarmStart::default();
        let state = warm.unwrap_or(&mut local);
        state.last_iterations = 0;
        if self.active.is_empty() || self.violation(seed)? <= 0.0 {
            return Ok(Projection {
                x: seed.to_vec(),
                iterations: 0,
                residual: 0.0,
            });
        }
        let rows = self.offset.len();
        let na = self.active.len();
        let sa: Vec<f64> = self.active.iter().map(|&k| seed[k]).collect();
        if state.y.len() != rows || state.x.len() != na || !(state.sigma > 0.0) {
            state.y = vec![0.0; rows];
            state.x = sa.clone();
            state.sigma = self.sigma_ref;
        }
        let sigma_max = self.sigma_ref * SIGMA_SPAN;
        let mut sigma = state.sigma;
        // the previous solution: its subproblem gradient is just the seed shift
        let mut x = state.x.clone();
        // stationarity and complementarity are measured relative to the seed;
        // feasibility stays absolute
        let scale = 1.0 + norm(&sa);
        let inner_tol = 0.5 * opts.tol * scale;
        let mut steps = 0;
        let mut residual = f64::INFINITY;
        let mut last_primal = f64::INFINITY;
        loop {
            let mut sp = self.subproblem(&x, &sa, &state.y, sigma)?;
            loop {
                let gnorm = norm(&sp.grad);
                if gnorm <= inner_tol {
                    break;
                }
                if steps >= opts.max_iter {
                    state.sigma = sigma;
                    state.last_iterations = steps;
                    return Err(Error::ProjectionNotConverged {
                        iterations: steps,
                        residual: gnorm.max(if residual.is_finite() { residual } else { 0.0 }),
                    });
                }
                steps += 1;
                let dir = self.newton_direction(&sp, sigma, &mut state.factor)?;
                let slope: f64 = dir.iter().zip(&sp.grad).map(|(a, b)| a * b).sum();
                let mut t = 1.0;
                loop {
                    let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + t * di).collect();
                    let st = self.subproblem(&xt, &sa, &state.y, sigma)?;
                    // below roundoff in the objective, fall back to the gradient norm
                    let flat = (st.obj - sp.obj).abs() <= 1e-14 * sp.obj.abs().max(1.0);
                    if st.obj <= sp.obj + ARMIJO * t * slope || (flat && norm(&st.grad) < gnorm) || t < 1e-12 {
                        x = xt;
                        sp = st;
                        break;
                    }
                    t *= 0.5;
                }
            }
            // multiplier update and optimality check
            let m = self.active_image(&x);
            let mut em = vec![0.0; rows];
            self.excess_all(&m, 1.0, &mut em)?;
            let primal = norm(&em);
            let comp = self.complementarity(&sp.fw, &m).abs();
            let stationarity = norm(&sp.grad);
            residual = primal.max(comp / scale).max(stationarity / scale);
            state.y = sp.fw;
            state.x.clone_from(&x);
            if residual <= opts.tol {
                state.sigma = sigma;
                state.last_iterations = steps;
                let mut out = seed.to_vec();
                for (k, &col) in self.active.iter().enumerate() {
                    out[col] = x[k];
                }
                return Ok(Projection {
                    x: out,
                    iterations: steps,
                    residual,
                });
            }
            steps += 1;
            if steps >= opts.max_iter {
                state.sigma = sigma;
                state.last_iterations = steps;
                return Err(Error::ProjectionNotConverged {
                    iterations: steps,
                    residual,
                });
            }
            if primal > 0.25 * last_primal {
                sigma = (sigma * SIGMA_GROWTH).min(sigma_max);
            }
            last_primal = primal;
        }
    }
}

/// Matrix-free `v -> v + sigma G^T J G v`. On a segment with eigenvectors
/// `Q` and outside set `a`, `J[U] = Q (W o Q^T U Q) Q^T` with `W` one on
/// `a x a`, `f_i / (l_i - l_j)` between `a` and its complement, and zero
/// elsewhere.
struct NewtonOperator<'a> {
    prob: &'a AffineConeProblem,
    sigma: f64,
    /// Per segment: `Q_a`, `Q_a^T`, the `a` rows of `W` (halved on `a x a`),
    /// `Q` and `Q^T`.
    parts: Vec<Option<[Mat; 5]>>,
}

impl<'a> NewtonOperator<'a> {
    fn new(prob: &'a AffineConeProblem, eigs: &[SegmentEig], sigma: f64) -> Self {
        let parts = prob
            .segments
            .iter()
            .zip(eigs)
            .map(|(seg, e)| {
                if e.outside.is_empty() {
                    return None;
                }
                let n = seg.side;
                let inside: Vec<bool> = {
                    let mut v = vec![true; n];
                    e.outside.iter().for_each(|&i| v[i] = false);
                    v
                };
                let w = Mat::from_fn(e.outside.len(), n, |a, j| {
                    let i = e.outside[a];
                    if inside[j] {
                        seg.kind.excess(e.lambda[i], sigma) / (e.lambda[i] - e.lambda[j])
                    } else {
                        0.5
                    }
                });
                let qat = Mat::from_fn(e.outside.len(), n, |a, r| e.q[(r, e.outside[a])]);
                Some([qat.transpose(), qat, w, e.q.clone(), e.q.transpose()])
            })
            .collect();
        Self { prob, sigma, parts }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.prob;
        let mut u = vec![0.0; p.offset.len()];
        p.g_active.mul_add(v.as_slice(), &mut u);
        let mut ju = vec![0.0; u.len()];
        for (seg, part) in p.segments.iter().zip(&self.parts) {
            let Some([qa, qat, w, q, qt]) = part else { continue };
            let r = seg.offset..seg.offset + seg.len();
            // rows a of Q^T U Q, weighted, mapped back as Q_a M Q^T + transpose
            let m = (qat * smat(&u[r.clone()], seg.side) * q).component_mul(w);
            svec_into(&(qa * m * qt), &mut ju[r.clone()]);
            ju[r].iter_mut().for_each(|x| *x *= 2.0);
        }
        let mut out = vec![0.0; v.len()];
        p.g_active.tr_mul(&ju, &mut out);
        DVector::from_iterator(v.len(), v.iter().zip(&out).map(|(a, b)| a + self.sigma * b))
    }
}

/// `m += alpha c^T c`, computing the lower block triangle only.
fn syrk_add(m: &mut Mat, alpha: f64, c: &Mat) {
    const BLOCK: usize = 64;
    let n = c.ncols();
    for j0 in (0..n).step_by(BLOCK) {
        let wj = BLOCK.min(n - j0);
        for i0 in (j0..n).step_by(BLOCK) {
            let wi = BLOCK.min(n - i0);
            m.view_mut((i0, j0), (wi, wj))
                .gemm(alpha, &c.columns(i0, wi).transpose(), &c.columns(j0, wj), 1.0);
        }
    }
    for j in 0..n {
        for i in (j + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Preconditioned conjugate gradients for `A x = b` to `||r|| <= tol ||b||`;
/// `None` if that takes more than `max_iter` steps.
fn pcg(
    a: impl Fn(&DVector<f64>) -> DVector<f64>,
    m_inv: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let target = tol * b.norm();
    let mut x = m_inv(b);
    let mut r = b - a(&x);
    let mut z = m_inv(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..=max_iter {
        if r.norm() <= target {
            return Some(x);
        }
        let ap = a(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = m_inv(&r);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    None
}

struct Subproblem {
    obj: f64,
    grad: Vec<f64>,
    fw: Vec<f64>,
    eigs: Vec<SegmentEig>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn stack_rows(ncols: usize, nrows: usize, parts: &[(CscMatrix, Vec<f64>)]) -> CscMatrix {
    let mut b = CscBuilder::new(nrows);
    for k in 0..ncols {
        let mut col = Vec::new();
        let mut base = 0;
        for (m, c) in parts {
            for p in m.col_ptr[k]..m.col_ptr[k + 1] {
                col.push((base + m.row_idx[p], m.vals[p]));
            }
            base += c.len();
        }
        b.push_column(col.into_iter());
    }
    b.finish()
}

/// Convenience wrapper: the Euclidean projection of `seed` onto `prob`'s set.
pub fn project_affine_preimage(prob: &AffineConeProblem, seed: &[f64], opts: &ProjectionOptions) -> Result<Vec<f64>> {
    Ok(prob.project(seed, opts, None)?.x)
}

/// Checks that `m` is square, finite and symmetric within `tol`.
pub fn check_symmetric(m: &Mat, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if asymmetry(m) > tol {
        return Err(Error::InvalidParameter(format!("{what} is not symmetric")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn nsd_examples() {
        assert_eq!(project_nsd(&diag(&[2.0, -3.0])).unwrap(), diag(&[0.0, -3.0]));
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let expect = Mat::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert!(close(&project_nsd(&m).unwrap(), &expect, 1e-12));
        let neg = Mat::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        assert!(close(&project_nsd(&neg).unwrap(), &neg, 1e-12));
        assert!(project_nsd(&Mat::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn floor_examples() {
        assert_eq!(project_psd_floor(&diag(&[5.0, -1.0]), 0.0).unwrap(), diag(&[5.0, 0.0]));
        assert_eq!(
            project_psd_floor(&Mat::identity(3, 3), 1.0).unwrap(),
            Mat::identity(3, 3)
        );
        assert!(close(
            &project_psd_floor(&diag(&[0.5, -2.0]), 1.0).unwrap(),
            &Mat::identity(2, 2),
            1e-15
        ));
        assert!(project_psd_floor(&Mat::identity(2, 2), -1.0).is_err());
    }

    fn scalar_problem(a: f64, c: f64) -> AffineConeProblem {
        let layout = BlockLayout::new(vec![BlockShape::Symmetric(1)]);
        let mut lmi = BlockLmi::new(vec![1]);
        lmi.block_mut(0, 0)
            .push(Term::var(0).scaled(a))
            .add_constant(&Mat::from_element(1, 1, c));
        let mut b = ProblemBuilder::new(layout);
        b.nsd(lmi);
        b.build().unwrap()
    }

    #[test]
    fn halfline_examples() {
        let opts = ProjectionOptions {
            tol: 1e-12,
            max_iter: 10_000,
        };
        let p = scalar_problem(1.0, 0.0);
        assert!(project_affine_preimage(&p, &[1.0], &opts).unwrap()[0].abs() < 1e-10);
        let p = scalar_problem(2.0, 1.0);
        assert!((project_affine_preimage(&p, &[0.0], &opts).unwrap()[0] + 0.5).abs() < 1e-10);
        assert_eq!(project_affine_preimage(&p, &[-3.0], &opts).unwrap(), vec![-3.0]);
    }

    #[test]
    fn empty_variable() {
        let b = ProblemBuilder::new(BlockLayout::new(vec![]));
        let p = b.build().unwrap();
        assert!(p
            .project(&[], &ProjectionOptions::default(), None)
            .unwrap()
            .x
            .is_empty());
    }

    #[test]
    fn lmi_linearization_matches_evaluation() {
        // vars: symmetric 2x2 block and a general 2x1 block
        let layout = BlockLayout::new(vec![BlockShape::Symmetric(2), BlockShape::General(2, 1)]);
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let mut lmi = BlockLmi::new(vec![2, 1]);
        lmi.block_mut(0, 0)
            .push(Term::var(0).left(a.transpose()))
            .push(Term::var(0).right(a.clone()))
            .add_constant(&Mat::identity(2, 2));
        lmi.block_mut(0, 1).push(Term::var(1).scaled(2.0));
        lmi.block_mut(1, 1)
            .push(Term::var(1).transposed().right(Mat::from_row_slice(2, 1, &[1.0, 1.0])));
        let (g, c) = lmi.linearize(&layout);
        let vars = vec![
            Mat::from_row_slice(2, 2, &[1.5, -0.2, -0.2, 0.7]),
            Mat::from_row_slice(2, 1, &[0.3, -1.1]),
        ];
        let x = layout.pack(&vars).unwrap();
        let mut y = c.clone();
        g.mul_add(&x, &mut y);
        assert!(close(&smat(&y, 3), &lmi.eval(&vars), 1e-12));
    }

    #[test]
    fn large_problem_matches_closed_form() {
        // {X : X + C <= 0} with a 14x14 block runs through the CG path
        let n = 14;
        let c = Mat::from_fn(n, n, |i, j| ((i + 2 * j) as f64).sin() + ((2 * i + j) as f64).sin());
        let layout = BlockLayout::new(vec![BlockShape::Symmetric(n)]);
        let mut lmi = BlockLmi::new(vec![n]);
        lmi.block_mut(0, 0).push(Term::var(0)).add_constant(&c);
        let mut b = ProblemBuilder::new(layout.clone());
        b.nsd(lmi);
        let prob = b.build().unwrap();
        assert!(prob.active.len() >= CG_MIN_DIM);
        let opts = ProjectionOptions {
            tol: 1e-10,
            max_iter: 10_000,
        };
        let mut warm = WarmStart::default();
        for shift in [0.0, 0.05, 0.1] {
            let seed_m = Mat::from_fn(n, n, |i, j| ((i * j) as f64).cos() + shift * (i + j) as f64 / n as f64);
            let got = layout.unpack(
                &prob
                    .project(&layout.pack(&[seed_m.clone()]).unwrap(), &opts, Some(&mut warm))
                    .unwrap()
                    .x,
            );
            let expect = project_nsd(&(&seed_m + &c)).unwrap() - &c;
            assert!(close(&got[0], &expect, 1e-7), "shift {shift}");
        }
    }

    #[test]
    fn newton_operator_matches_dense_matrix() {
        let n = 6;
        let layout = BlockLayout::new(vec![BlockShape::Symmetric(n), BlockShape::General(n, 2)]);
        let mut lmi = BlockLmi::new(vec![n]);
        let a = Mat::from_fn(n, n, |i, j| ((i + 3 * j) as f64).cos());
        let bm = Mat::from_fn(2, n, |i, j| ((i + j) as f64 * 0.7).sin());
        lmi.block_mut(0, 0)
            .push(Term::var(0).right(a))
            .push(Term::var(1).right(bm))
            .add_constant(&Mat::identity(n, n));
        let mut b = ProblemBuilder::new(layout);
        b.nsd(lmi);
        let prob = b.build().unwrap();
        let na = prob.active.len();
        let x: Vec<f64> = (0..na).map(|k| (k as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..prob.offset.len()).map(|k| (k as f64 * 0.11).cos()).collect();
        let sigma = 2.5;
        let sp = prob.subproblem(&x, &x, &y, sigma).unwrap();
        assert!(sp.eigs[0].outside.len() > 0 && sp.eigs[0].outside.len() < n);
        let dense = prob.newton_matrix(&sp.eigs, sigma);
        let op = NewtonOperator::new(&prob, &sp.eigs, sigma);
        let v = DVector::from_fn(na, |k, _| (k as f64 * 1.3).cos());
        assert!((op.apply(&v) - &dense * &v).amax() < 1e-10);
    }
}
