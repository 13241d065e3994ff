//! Decision-variable table.
//!
//! Every matrix variable is flattened into scalar decision entries. A
//! symmetric `n x n` variable owns `n(n+1)/2` scalars in upper-triangle,
//! column-major order; a general `r x c` variable owns `r c` scalars in
//! column-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::affine::AffineMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum VarKind {
    Scalar,
    Symmetric { n: usize },
    Matrix { rows: usize, cols: usize },
}

impl VarKind {
    pub fn scalar_count(self) -> usize {
        match self {
            VarKind::Scalar => 1,
            VarKind::Symmetric { n } => n * (n + 1) / 2,
            VarKind::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn shape(self) -> (usize, usize) {
        match self {
            VarKind::Scalar => (1, 1),
            VarKind::Symmetric { n } => (n, n),
            VarKind::Matrix { rows, cols } => (rows, cols),
        }
    }
}

/// Sign requirement attached to a variable. `Positive` and `PositiveDefinite`
/// become strict constraints of the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Free,
    Positive,
    PositiveDefinite,
    PositiveSemidefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub sign: Sign,
    /// Index of the first scalar entry.
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarTable {
    vars: Vec<VarInfo>,
    scalars: usize,
}

impl VarTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: VarKind, sign: Sign) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo {
            name: name.into(),
            kind,
            sign,
            offset: self.scalars,
        });
        self.scalars += kind.scalar_count();
        id
    }

    pub fn scalar_count(&self) -> usize {
        self.scalars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn info(&self, id: VarId) -> &VarInfo {
        &self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &VarInfo)> {
        self.vars.iter().enumerate().map(|(i, v)| (VarId(i), v))
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    /// `(scalar index, row, col)` for every scalar of a variable; symmetric
    /// entries report their upper-triangle position.
    pub fn entries(&self, id: VarId) -> Vec<(usize, usize, usize)> {
        let info = self.info(id);
        let mut out = Vec::with_capacity(info.kind.scalar_count());
        let mut s = info.offset;
        match info.kind {
            VarKind::Scalar => out.push((s, 0, 0)),
            VarKind::Symmetric { n } => {
                for c in 0..n {
                    for r in 0..=c {
                        out.push((s, r, c));
                        s += 1;
                    }
                }
            }
            VarKind::Matrix { rows, cols } => {
                for c in 0..cols {
                    for r in 0..rows {
                        out.push((s, r, c));
                        s += 1;
                    }
                }
            }
        }
        out
    }

    /// The variable as an affine matrix in the decision scalars.
    pub fn expr(&self, id: VarId) -> AffineMatrix {
        let info = self.info(id);
        let (rows, cols) = info.kind.shape();
        let symmetric = matches!(info.kind, VarKind::Symmetric { .. });
        let mut a = AffineMatrix::zeros(rows, cols);
        for (s, r, c) in self.entries(id) {
            let mut coef = DMatrix::zeros(rows, cols);
            coef[(r, c)] = 1.0;
            if symmetric {
                coef[(c, r)] = 1.0;
            }
            a.add_term(s, coef);
        }
        a
    }

    /// Numeric value of a variable at the decision vector `x`.
    pub fn value(&self, id: VarId, x: &[f64]) -> DMatrix<f64> {
        let info = self.info(id);
        let (rows, cols) = info.kind.shape();
        let mut m = DMatrix::zeros(rows, cols);
        for (s, r, c) in self.entries(id) {
            m[(r, c)] = x[s];
            if matches!(info.kind, VarKind::Symmetric { .. }) {
                m[(c, r)] = x[s];
            }
        }
        m
    }

    pub fn scalar_value(&self, id: VarId, x: &[f64]) -> f64 {
        x[self.info(id).offset]
    }

    /// Writes a numeric value back into the decision vector.
    pub fn set_value(&self, id: VarId, value: &DMatrix<f64>, x: &mut [f64]) {
        for (s, r, c) in self.entries(id) {
            x[s] = value[(r, c)];
        }
    }

    /// Name of the variable owning scalar `s` and the entry position.
    pub fn locate(&self, s: usize) -> Option<(&VarInfo, usize, usize)> {
        let idx = self
            .vars
            .iter()
            .rposition(|v| v.offset <= s && s < v.offset + v.kind.scalar_count())?;
        let (_, r, c) = self.entries(VarId(idx))[s - self.vars[idx].offset];
        Some((&self.vars[idx], r, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_counts() {
        let mut t = VarTable::new();
        let p = t.add("P", VarKind::Symmetric { n: 3 }, Sign::PositiveDefinite);
        let g = t.add("g", VarKind::Scalar, Sign::Positive);
        let e = t.add("eta", VarKind::Matrix { rows: 1, cols: 2 }, Sign::Free);
        assert_eq!(t.scalar_count(), 6 + 1 + 2);
        assert_eq!(t.info(g).offset, 6);
        assert_eq!(t.info(e).offset, 7);
        assert_eq!(t.find("eta"), Some(e));
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let pv = t.value(p, &x);
        assert_eq!(pv, pv.transpose());
        assert_eq!(pv[(0, 2)], 3.0);
        assert_eq!(t.value(e, &x), DMatrix::from_row_slice(1, 2, &[7.0, 8.0]));
        let mut y = vec![0.0; 9];
        t.set_value(p, &pv, &mut y);
        assert_eq!(&y[..6], &x[..6]);
        assert_eq!(t.locate(7).unwrap().0.name, "eta");
        assert_eq!(t.expr(p).eval(&x), pv);
    }
}
