//! Sparse symmetric matrix inequalities and the program container.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::affine::AffineMatrix;
use super::vars::{Sign, VarId, VarKind, VarTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `F(x) < 0`
    NegDef,
    /// `F(x) <= 0`
    NegSemiDef,
    /// `F(x) > 0`
    PosDef,
    /// `F(x) >= 0`
    PosSemiDef,
}

impl Sense {
    pub fn is_strict(self) -> bool {
        matches!(self, Sense::NegDef | Sense::PosDef)
    }

    fn symbol(self) -> &'static str {
        match self {
            Sense::NegDef => "< 0",
            Sense::NegSemiDef => "<= 0",
            Sense::PosDef => "> 0",
            Sense::PosSemiDef => ">= 0",
        }
    }
}

/// Upper-triangle entries `(row, col, value)` with `row <= col`.
pub type Triplets = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixInequality {
    pub name: String,
    pub dim: usize,
    pub sense: Sense,
    pub constant: Triplets,
    pub terms: BTreeMap<usize, Triplets>,
}

fn upper_triplets(m: &DMatrix<f64>) -> Triplets {
    let n = m.nrows();
    let mut out = Vec::new();
    for c in 0..n {
        for r in 0..=c {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            if v != 0.0 {
                out.push((r, c, v));
            }
        }
    }
    out
}

fn fill(m: &mut DMatrix<f64>, t: &Triplets, k: f64) {
    for &(r, c, v) in t {
        m[(r, c)] += k * v;
        if r != c {
            m[(c, r)] += k * v;
        }
    }
}

impl MatrixInequality {
    /// Uses the symmetric part of `f`.
    pub fn from_affine(name: impl Into<String>, f: &AffineMatrix, sense: Sense) -> Self {
        assert_eq!(f.nrows(), f.ncols(), "inequality needs a square matrix");
        let mut terms = BTreeMap::new();
        for (s, c) in &f.terms {
            let t = upper_triplets(c);
            if !t.is_empty() {
                terms.insert(*s, t);
            }
        }
        MatrixInequality {
            name: name.into(),
            dim: f.nrows(),
            sense,
            constant: upper_triplets(&f.constant),
            terms,
        }
    }

    pub fn constant_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        fill(&mut m, &self.constant, 1.0);
        m
    }

    pub fn coefficient(&self, scalar: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        if let Some(t) = self.terms.get(&scalar) {
            fill(&mut m, t, 1.0);
        }
        m
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant_matrix();
        for (s, t) in &self.terms {
            fill(&mut m, t, x[*s]);
        }
        m
    }

    /// Signed margin: the largest eigenvalue of the matrix that must be
    /// negative. Negative means satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let m = self.eval(x);
        match self.sense {
            Sense::NegDef | Sense::NegSemiDef => crate::linalg::max_eigenvalue(&m),
            Sense::PosDef | Sense::PosSemiDef => -crate::linalg::min_eigenvalue(&m),
        }
    }

    /// The same constraint written as `G(x) <= 0` or `G(x) < 0`.
    pub fn as_negative(&self) -> MatrixInequality {
        match self.sense {
            Sense::NegDef | Sense::NegSemiDef => self.clone(),
            Sense::PosDef | Sense::PosSemiDef => MatrixInequality {
                name: self.name.clone(),
                dim: self.dim,
                sense: if self.sense.is_strict() {
                    Sense::NegDef
                } else {
                    Sense::NegSemiDef
                },
                constant: self.constant.iter().map(|&(r, c, v)| (r, c, -v)).collect(),
                terms: self
                    .terms
                    .iter()
                    .map(|(s, t)| (*s, t.iter().map(|&(r, c, v)| (r, c, -v)).collect()))
                    .collect(),
            },
        }
    }

    pub fn nnz(&self) -> usize {
        self.constant.len() + self.terms.values().map(Vec::len).sum::<usize>()
    }

    /// Scalar rows in triangle-packed form.
    pub fn packed_rows(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ProgramStats {
    pub variables: usize,
    pub scalars: usize,
    pub constraints: usize,
    pub packed_rows: usize,
    pub nonzeros: usize,
    pub largest_block: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProgram {
    pub vars: VarTable,
    pub constraints: Vec<MatrixInequality>,
    /// Sparse linear objective `sum c_s x_s` to minimize.
    pub objective: Vec<(usize, f64)>,
}

impl LmiProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a variable; sign requirements become constraints.
    pub fn add_var(&mut self, name: &str, kind: VarKind, sign: Sign) -> VarId {
        let id = self.vars.add(name, kind, sign);
        let sense = match sign {
            Sign::Free => None,
            Sign::Positive | Sign::PositiveDefinite => Some(Sense::PosDef),
            Sign::PositiveSemidefinite => Some(Sense::PosSemiDef),
        };
        if let Some(sense) = sense {
            let e = self.vars.expr(id);
            self.constraints
                .push(MatrixInequality::from_affine(format!("{name} sign"), &e, sense));
        }
        id
    }

    pub fn expr(&self, id: VarId) -> AffineMatrix {
        self.vars.expr(id)
    }

    pub fn add(&mut self, name: impl Into<String>, f: &AffineMatrix, sense: Sense) {
        self.constraints
            .push(MatrixInequality::from_affine(name, f, sense));
    }

    pub fn push(&mut self, c: MatrixInequality) {
        self.constraints.push(c);
    }

    pub fn minimize(&mut self, id: VarId) {
        self.objective = vec![(self.vars.info(id).offset, 1.0)];
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(s, c)| c * x[*s]).sum()
    }

    pub fn stats(&self) -> ProgramStats {
        ProgramStats {
            variables: self.vars.len(),
            scalars: self.vars.scalar_count(),
            constraints: self.constraints.len(),
            packed_rows: self.constraints.iter().map(|c| c.packed_rows()).sum(),
            nonzeros: self.constraints.iter().map(|c| c.nnz()).sum(),
            largest_block: self.constraints.iter().map(|c| c.dim).max().unwrap_or(0),
        }
    }

    /// Largest violation over all constraints at `x` (negative when every
    /// constraint holds strictly).
    pub fn worst_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text dump: variable table, objective and sparse triplets.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let st = self.stats();
        let _ = writeln!(
            s,
            "program variables={} scalars={} constraints={} rows={}",
            st.variables, st.scalars, st.constraints, st.packed_rows
        );
        for (_, v) in self.vars.iter() {
            let (r, c) = v.kind.shape();
            let kind = match v.kind {
                VarKind::Scalar => "scalar",
                VarKind::Symmetric { .. } => "symmetric",
                VarKind::Matrix { .. } => "matrix",
            };
            let _ = writeln!(
                s,
                "var {} {} {}x{} sign={:?} offset={}",
                v.name, kind, r, c, v.sign, v.offset
            );
        }
        for (i, c) in &self.objective {
            let _ = writeln!(s, "minimize {i} {c:e}");
        }
        for c in &self.constraints {
            let _ = writeln!(s, "constraint \"{}\" dim={} {}", c.name, c.dim, c.sense.symbol());
            for (r, col, v) in &c.constant {
                let _ = writeln!(s, "  c {r} {col} {v:e}");
            }
            for (k, t) in &c.terms {
                for (r, col, v) in t {
                    let _ = writeln!(s, "  x{k} {r} {col} {v:e}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_constraints_and_eval() {
        let mut p = LmiProgram::new();
        let a = p.add_var("a", VarKind::Symmetric { n: 2 }, Sign::PositiveDefinite);
        let g = p.add_var("g", VarKind::Scalar, Sign::Positive);
        p.minimize(g);
        assert_eq!(p.constraints.len(), 2);
        let f = p.expr(a) - AffineMatrix::identity(2) * 3.0;
        p.add("a < 3I", &f, Sense::NegDef);
        let x = [1.0, 0.5, 2.0, 0.1];
        assert!(p.worst_violation(&x) < 0.0);
        assert_eq!(p.objective_value(&x), 0.1);
        let neg = p.constraints[0].as_negative();
        assert_eq!(neg.eval(&x), -p.constraints[0].eval(&x));
        assert!(p.dump().contains("constraint \"a < 3I\" dim=2 < 0"));
        assert_eq!(p.stats().packed_rows, 3 + 1 + 3);
    }
}
