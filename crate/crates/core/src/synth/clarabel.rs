//! Interior-point backend on the Clarabel conic solver.
//!
//! Each constraint `G(x) < 0` of dimension `n` becomes the slack
//! `s = svec(-G0 - eps I) - sum_k x_k svec(G_k)` in the positive
//! semidefinite triangle cone; `svec` packs the upper triangle column by
//! column with off-diagonal entries scaled by `sqrt 2`. One-dimensional
//! constraints use the nonnegative cone.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{SdpBackend, SolveOutcome, SolveStatus, SolverSettings};
use crate::lmi::{LmiProgram, Sense};

#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        ClarabelBackend { settings }
    }
}

pub fn svec_index(r: usize, c: usize) -> usize {
    debug_assert!(r <= c);
    c * (c + 1) / 2 + r
}

/// Standard conic data `(A, b, cones)` for `s = b - A x`.
pub struct ConicData {
    pub rows: usize,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<SupportedConeT<f64>>,
    /// First row of each constraint.
    pub offsets: Vec<usize>,
}

pub fn conic_form(program: &LmiProgram, margin: f64) -> ConicData {
    let mut data = ConicData {
        rows: 0,
        a_rows: Vec::new(),
        a_cols: Vec::new(),
        a_vals: Vec::new(),
        b: Vec::new(),
        cones: Vec::new(),
        offsets: Vec::new(),
    };
    let sqrt2 = std::f64::consts::SQRT_2;
    for c in &program.constraints {
        let g = c.as_negative();
        let n = g.dim;
        let packed = n * (n + 1) / 2;
        let base = data.rows;
        data.offsets.push(base);
        let mut b = vec![0.0; packed];
        if g.sense == Sense::NegDef {
            for d in 0..n {
                b[svec_index(d, d)] -= margin;
            }
        }
        for &(r, col, v) in &g.constant {
            let w = if r == col { 1.0 } else { sqrt2 };
            b[svec_index(r, col)] -= w * v;
        }
        for (s, t) in &g.terms {
            for &(r, col, v) in t {
                let w = if r == col { 1.0 } else { sqrt2 };
                data.a_rows.push(base + svec_index(r, col));
                data.a_cols.push(*s);
                data.a_vals.push(w * v);
            }
        }
        data.b.extend(b);
        data.rows += packed;
        data.cones.push(if n == 1 {
            SupportedConeT::NonnegativeConeT(1)
        } else {
            SupportedConeT::PSDTriangleConeT(n)
        });
    }
    data
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &LmiProgram) -> SolveOutcome {
        let start = Instant::now();
        let n = program.vars.scalar_count();
        let data = conic_form(program, self.settings.margin);
        let a = CscMatrix::new_from_triplets(data.rows, n, data.a_rows, data.a_cols, data.a_vals);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for (s, c) in &program.objective {
            q[*s] += c;
        }
        let tol = &self.settings;
        let settings = DefaultSettings {
            verbose: tol.verbose,
            max_iter: tol.max_iter,
            tol_gap_abs: tol.tol_gap,
            tol_gap_rel: tol.tol_gap,
            tol_feas: tol.tol_feas,
            tol_infeas_abs: tol.tol_feas,
            tol_infeas_rel: tol.tol_feas,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &data.b, &data.cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return SolveOutcome::failure(format!("solver setup failed: {e}"), start.elapsed());
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            _ => SolveStatus::NumericalFailure,
        };
        let binding = if status == SolveStatus::Infeasible {
            let scale = sol.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut count = 0;
            for (ci, &off) in data.offsets.iter().enumerate() {
                let dim = program.constraints[ci].dim;
                let len = dim * (dim + 1) / 2;
                if sol.z[off..off + len].iter().any(|v| v.abs() > 1e-6 * scale) {
                    count += 1;
                }
            }
            Some(count)
        } else {
            None
        };
        SolveOutcome {
            status,
            objective: program.objective_value(&sol.x),
            x: sol.x.clone(),
            iterations: sol.iterations,
            detail: format!("{:?}", sol.status),
            binding_constraints: binding,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{AffineMatrix, Sign, VarKind};
    use nalgebra::DMatrix;

    #[test]
    fn svec_layout() {
        assert_eq!(svec_index(0, 0), 0);
        assert_eq!(svec_index(0, 1), 1);
        assert_eq!(svec_index(1, 1), 2);
        assert_eq!(svec_index(2, 2), 5);
    }

    #[test]
    fn small_sdp() {
        // min t  s.t. [[t, 1], [1, t]] >= 0  ->  t = 1
        let mut p = LmiProgram::new();
        let t = p.add_var("t", VarKind::Scalar, Sign::Free);
        p.minimize(t);
        let f = p.expr(t).scalar_times(&DMatrix::identity(2, 2))
            + AffineMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.add("psd", &f, Sense::PosSemiDef);
        let out = ClarabelBackend::default().solve(&p);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.0).abs() < 1e-7, "{}", out.objective);
    }
}
