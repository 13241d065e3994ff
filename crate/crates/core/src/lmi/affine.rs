//! Matrices that are affine in the decision scalars:
//! `F(x) = F0 + sum_s x_s F_s`.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("block ({row}, {col}) is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    Size {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineMatrix {
            constant: DMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        AffineMatrix {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn add_term(&mut self, scalar: usize, coef: DMatrix<f64>) {
        debug_assert_eq!(coef.shape(), self.shape());
        match self.terms.get_mut(&scalar) {
            Some(c) => *c += coef,
            None => {
                self.terms.insert(scalar, coef);
            }
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        AffineMatrix {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, v)| (*k, f(v))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// `c * self`
    pub fn lmul(&self, c: &DMatrix<f64>) -> Self {
        self.map(|m| c * m)
    }

    /// `self * c`
    pub fn rmul(&self, c: &DMatrix<f64>) -> Self {
        self.map(|m| m * c)
    }

    pub fn view(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        self.map(|m| m.view((r0, c0), (nr, nc)).into_owned())
    }

    /// `s * m` for a 1x1 expression `s`.
    pub fn scalar_times(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.shape(), (1, 1), "scalar_times needs a 1x1 expression");
        self.map(|s| m * s[(0, 0)])
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (s, c) in &self.terms {
            if x[*s] != 0.0 {
                out += c * x[*s];
            }
        }
        out
    }

    /// The non-constant part only.
    pub fn linear_part(&self, x: &[f64]) -> DMatrix<f64> {
        self.eval(x) - &self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|c| c.iter().all(|v| *v == 0.0))
    }

    pub fn hstack(parts: &[AffineMatrix]) -> Self {
        let rows = parts.first().map_or(0, |p| p.nrows());
        let cols: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = AffineMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.nrows(), rows, "hstack row mismatch");
            out.place(p, 0, c0);
            c0 += p.ncols();
        }
        out
    }

    pub fn vstack(parts: &[AffineMatrix]) -> Self {
        let cols = parts.first().map_or(0, |p| p.ncols());
        let rows: usize = parts.iter().map(|p| p.nrows()).sum();
        let mut out = AffineMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            assert_eq!(p.ncols(), cols, "vstack column mismatch");
            out.place(p, r0, 0);
            r0 += p.nrows();
        }
        out
    }

    /// Adds `block` into the sub-matrix starting at `(r0, c0)`.
    pub fn place(&mut self, block: &AffineMatrix, r0: usize, c0: usize) {
        let (nr, nc) = block.shape();
        if nr == 0 || nc == 0 {
            return;
        }
        let (rows, cols) = self.shape();
        let mut v = self.constant.view_mut((r0, c0), (nr, nc));
        v += &block.constant;
        for (s, c) in &block.terms {
            let t = self
                .terms
                .entry(*s)
                .or_insert_with(|| DMatrix::zeros(rows, cols));
            let mut v = t.view_mut((r0, c0), (nr, nc));
            v += c;
        }
    }
}

impl Add for AffineMatrix {
    type Output = AffineMatrix;
    fn add(mut self, rhs: AffineMatrix) -> AffineMatrix {
        assert_eq!(self.shape(), rhs.shape(), "affine add shape mismatch");
        self.constant += rhs.constant;
        for (s, c) in rhs.terms {
            self.add_term(s, c);
        }
        self
    }
}

impl Sub for AffineMatrix {
    type Output = AffineMatrix;
    fn sub(self, rhs: AffineMatrix) -> AffineMatrix {
        self + (-rhs)
    }
}

impl Neg for AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self * -1.0
    }
}

impl Mul<f64> for AffineMatrix {
    type Output = AffineMatrix;
    fn mul(mut self, k: f64) -> AffineMatrix {
        self.constant *= k;
        for c in self.terms.values_mut() {
            *c *= k;
        }
        self
    }
}

/// Symmetric block matrix built from its lower-triangular blocks.
#[derive(Debug, Clone)]
pub struct SymmetricBlocks {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    matrix: AffineMatrix,
}

impl SymmetricBlocks {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in sizes {
            offsets.push(acc);
            acc += s;
        }
        SymmetricBlocks {
            sizes: sizes.to_vec(),
            offsets,
            matrix: AffineMatrix::zeros(acc, acc),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Sets block `(row, col)` with `row >= col`; the mirror block is filled
    /// with the transpose. Diagonal blocks are symmetrized.
    pub fn set(&mut self, row: usize, col: usize, block: AffineMatrix) -> Result<(), BlockError> {
        assert!(row >= col, "only lower-triangular blocks are set");
        let (rows, cols) = (self.sizes[row], self.sizes[col]);
        if block.shape() != (rows, cols) {
            return Err(BlockError::Size {
                row,
                col,
                rows,
                cols,
                got_rows: block.nrows(),
                got_cols: block.ncols(),
            });
        }
        let (r0, c0) = (self.offsets[row], self.offsets[col]);
        if row == col {
            let sym = (block.clone() + block.transpose()) * 0.5;
            self.matrix.place(&sym, r0, c0);
        } else {
            self.matrix.place(&block, r0, c0);
            self.matrix.place(&block.transpose(), c0, r0);
        }
        Ok(())
    }

    pub fn finish(self) -> AffineMatrix {
        self.matrix
    }
}
