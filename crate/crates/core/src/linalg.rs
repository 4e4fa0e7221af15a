//! Small dense linear-algebra helpers shared by every module.
//!
//! Symmetric matrices are vectorized with the scaled lower-triangle `svec`
//! (off-diagonal entries multiplied by sqrt(2)), which makes the Euclidean
//! norm of the vector equal to the Frobenius norm of the matrix. Every
//! projection in the crate is computed in these coordinates.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(m: &Mat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    asymmetry(m) <= tol
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &Mat) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !all_finite(m) {
        return Err(Error::NonFinite("symmetric eigendecomposition input".into()));
    }
    Ok(SymmetricEigen::new(symmetrize(m)))
}

/// Largest eigenvalue of a symmetric matrix; `-inf` for the empty matrix.
pub fn max_eigenvalue(m: &Mat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let eig = sym_eigen(m)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for the empty matrix.
pub fn min_eigenvalue(m: &Mat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = sym_eigen(m)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Rectangular identity (ones on the main diagonal).
pub fn eye(rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn frobenius_distance(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm()
}

pub const fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of lower-triangle entry `(i, j)`, `i >= j`, in the svec ordering
/// (column-major over the lower triangle).
#[inline]
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < n);
    j * (2 * n - j + 1) / 2 + (i - j)
}

pub fn svec_into(m: &Mat, out: &mut [f64]) {
    let n = m.nrows();
    debug_assert_eq!(out.len(), svec_len(n));
    let mut k = 0;
    for j in 0..n {
        out[k] = m[(j, j)];
        k += 1;
        for i in (j + 1)..n {
            out[k] = SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

pub fn smat(v: &[f64], n: usize) -> Mat {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in (j + 1)..n {
            let x = v[k] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Shape of one matrix block of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockShape {
    Symmetric(usize),
    General(usize, usize),
}

impl BlockShape {
    pub fn len(&self) -> usize {
        match *self {
            BlockShape::Symmetric(n) => svec_len(n),
            BlockShape::General(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            BlockShape::Symmetric(n) => (n, n),
            BlockShape::General(r, c) => (r, c),
        }
    }

    pub fn zeros(&self) -> Mat {
        let (r, c) = self.dims();
        Mat::zeros(r, c)
    }

    fn pack(&self, m: &Mat, out: &mut [f64]) {
        match *self {
            BlockShape::Symmetric(_) => svec_into(m, out),
            BlockShape::General(r, c) => {
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = m[(i, j)];
                    }
                }
            }
        }
    }

    fn unpack(&self, v: &[f64]) -> Mat {
        match *self {
            BlockShape::Symmetric(n) => smat(v, n),
            BlockShape::General(r, c) => Mat::from_fn(r, c, |i, j| v[i * c + j]),
        }
    }

    /// Matrix whose packed coordinates are the `k`-th unit vector.
    pub(crate) fn unit(&self, k: usize) -> Mat {
        let mut v = vec![0.0; self.len()];
        v[k] = 1.0;
        self.unpack(&v)
    }
}

/// Ordered list of blocks making up one decision variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockLayout {
    shapes: Vec<BlockShape>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockLayout {
    pub fn new(shapes: Vec<BlockShape>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.len();
        }
        Self { shapes, offsets, total }
    }

    pub fn shapes(&self) -> &[BlockShape] {
        &self.shapes
    }

    pub fn num_blocks(&self) -> usize {
        self.shapes.len()
    }

    /// Number of scalar coordinates.
    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn check(&self, blocks: &[Mat]) -> Result<()> {
        if blocks.len() != self.shapes.len() {
            return Err(Error::Dimension(format!(
                "expected {} blocks, got {}",
                self.shapes.len(),
                blocks.len()
            )));
        }
        for (k, (b, s)) in blocks.iter().zip(&self.shapes).enumerate() {
            if (b.nrows(), b.ncols()) != s.dims() {
                return Err(Error::Dimension(format!(
                    "block {k}: expected {:?}, got {}x{}",
                    s.dims(),
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(())
    }

    pub fn pack(&self, blocks: &[Mat]) -> Result<Vec<f64>> {
        self.check(blocks)?;
        let mut out = vec![0.0; self.total];
        for (k, b) in blocks.iter().enumerate() {
            let o = self.offsets[k];
            self.shapes[k].pack(b, &mut out[o..o + self.shapes[k].len()]);
        }
        Ok(out)
    }

    pub fn unpack(&self, v: &[f64]) -> Vec<Mat> {
        debug_assert_eq!(v.len(), self.total);
        self.shapes
            .iter()
            .zip(&self.offsets)
            .map(|(s, &o)| s.unpack(&v[o..o + s.len()]))
            .collect()
    }

    pub fn zeros(&self) -> Vec<Mat> {
        self.shapes.iter().map(BlockShape::zeros).collect()
    }
}
