//! Dense log-barrier path-following backend.
//!
//! Intended for small programs and for cross-checking the primary backend.
//! A phase-I problem `min t  s.t. S_i(x) + t I >= 0` finds a strictly
//! feasible point, after which `tau c'x - sum_i log det S_i(x)` is minimized
//! by damped Newton steps for an increasing sequence of `tau`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{SdpBackend, SolveOutcome, SolveStatus, SolverSettings};
use crate::lmi::{LmiProgram, Sense};

#[derive(Debug, Clone, Default)]
pub struct BarrierBackend {
    pub settings: SolverSettings,
}

impl BarrierBackend {
    pub fn new(settings: SolverSettings) -> Self {
        BarrierBackend { settings }
    }
}

/// `S(z) = B - sum_s z_s A_s >= 0`
struct Block {
    b: DMatrix<f64>,
    support: Vec<usize>,
    a: Vec<DMatrix<f64>>,
}

impl Block {
    fn slack(&self, z: &[f64]) -> DMatrix<f64> {
        let mut s = self.b.clone();
        for (k, a) in self.support.iter().zip(&self.a) {
            if z[*k] != 0.0 {
                s -= a * z[*k];
            }
        }
        s
    }
}

fn build_blocks(program: &LmiProgram, margin: f64) -> Vec<Block> {
    program
        .constraints
        .iter()
        .map(|c| {
            let g = c.as_negative();
            let mut b = -g.constant_matrix();
            if g.sense == Sense::NegDef {
                for d in 0..g.dim {
                    b[(d, d)] -= margin;
                }
            }
            let support: Vec<usize> = g.terms.keys().copied().collect();
            let a = support.iter().map(|s| g.coefficient(*s)).collect();
            Block { b, support, a }
        })
        .collect()
}

const PHASE1_BOX: f64 = 1e6;

enum Path {
    Converged(Vec<f64>),
    /// Phase I reached a strictly feasible point early.
    Stopped(Vec<f64>),
    Stalled(Vec<f64>, String),
}

struct Barrier<'a> {
    blocks: &'a [Block],
    c: Vec<f64>,
    n: usize,
    degree: f64,
}

impl<'a> Barrier<'a> {
    /// Barrier value, or `None` outside the cone interior.
    fn value(&self, z: &[f64], tau: f64) -> Option<f64> {
        let mut v = tau * self.c.iter().zip(z).map(|(c, z)| c * z).sum::<f64>();
        for b in self.blocks {
            let chol = b.slack(z).cholesky()?;
            v -= 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    fn newton(&self, z: &[f64], tau: f64) -> Option<(DVector<f64>, f64)> {
        let mut g = DVector::from_iterator(self.n, self.c.iter().map(|c| tau * c));
        let mut h = DMatrix::<f64>::zeros(self.n, self.n);
        for b in self.blocks {
            let chol = b.slack(z).cholesky()?;
            let l = chol.l();
            let scaled: Vec<DMatrix<f64>> = b
                .a
                .iter()
                .map(|a| {
                    let y = l.solve_lower_triangular(a).expect("triangular");
                    l.solve_lower_triangular(&y.transpose())
                        .expect("triangular")
                        .transpose()
                })
                .collect();
            for (p, (sp, ap)) in b.support.iter().zip(&scaled).enumerate() {
                g[*sp] += ap.trace();
                for (sq, aq) in b.support.iter().zip(&scaled).skip(p) {
                    let v = ap.dot(aq);
                    h[(*sp, *sq)] += v;
                    if sp != sq {
                        h[(*sq, *sp)] += v;
                    }
                }
            }
        }
        let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut reg = 1e-14 * scale;
        let dz = loop {
            let mut hr = h.clone();
            for d in 0..self.n {
                hr[(d, d)] += reg;
            }
            if let Some(ch) = hr.cholesky() {
                break ch.solve(&(-&g));
            }
            reg *= 100.0;
            if reg > scale {
                return None;
            }
        };
        let dec = -g.dot(&dz);
        Some((dz, dec))
    }

    /// Follows the central path from a strictly feasible `z0`.
    fn run(
        &self,
        z0: Vec<f64>,
        tol_gap: f64,
        max_newton: u32,
        iterations: &mut u32,
        stop: impl Fn(&[f64]) -> bool,
    ) -> Path {
        let mut z = z0;
        let obj = |z: &[f64]| self.c.iter().zip(z).map(|(c, z)| c * z).sum::<f64>();
        let mut tau = 1.0 / obj(&z).abs().max(1.0);
        loop {
            // centering
            let mut inner = 0;
            loop {
                if *iterations >= max_newton {
                    return Path::Stalled(z, "iteration cap".into());
                }
                *iterations += 1;
                inner += 1;
                let Some((dz, dec)) = self.newton(&z, tau) else {
                    return Path::Stalled(z, "singular Newton system".into());
                };
                if dec / 2.0 < 1e-10 || inner > 100 {
                    break;
                }
                let f0 = self.value(&z, tau).expect("interior point");
                let mut step = 1.0;
                let mut moved = false;
                while step > 1e-12 {
                    let cand: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, d)| a + step * d).collect();
                    if let Some(f) = self.value(&cand, tau) {
                        if f <= f0 - 0.01 * step * dec {
                            z = cand;
                            moved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if stop(&z) {
                    return Path::Stopped(z);
                }
                if !moved {
                    break;
                }
            }
            let gap = self.degree / tau;
            if gap <= tol_gap * obj(&z).abs().max(1.0) {
                return Path::Converged(z);
            }
            tau *= 10.0;
        }
    }
}

impl SdpBackend for BarrierBackend {
    fn name(&self) -> &'static str {
        "barrier"
    }

    fn solve(&self, program: &LmiProgram) -> SolveOutcome {
        let start = Instant::now();
        let st = &self.settings;
        let n = program.vars.scalar_count();
        let blocks = build_blocks(program, st.margin);
        let degree: f64 = blocks.iter().map(|b| b.b.nrows() as f64).sum();
        let cap = st.max_iter.saturating_mul(20);
        let mut iterations = 0;

        // Phase I over (x, t): S_i(x) + t I >= 0.
        let zero = vec![0.0; n];
        let worst = blocks
            .iter()
            .map(|b| crate::linalg::min_eigenvalue(&b.slack(&zero)))
            .fold(f64::INFINITY, f64::min);
        let x0 = if worst > 0.0 {
            zero
        } else {
            let mut phase1: Vec<Block> = blocks
                .iter()
                .map(|b| {
                    let mut support = b.support.clone();
                    let mut a = b.a.clone();
                    support.push(n);
                    a.push(-DMatrix::identity(b.b.nrows(), b.b.nrows()));
                    Block {
                        b: b.b.clone(),
                        support,
                        a,
                    }
                })
                .collect();
            // The auxiliary problem is unbounded along directions that shift
            // every slack by a multiple of I; a box on x keeps it bounded.
            for k in 0..n {
                for sign in [1.0, -1.0] {
                    phase1.push(Block {
                        b: DMatrix::from_element(1, 1, PHASE1_BOX),
                        support: vec![k],
                        a: vec![DMatrix::from_element(1, 1, sign)],
                    });
                }
            }
            let mut c = vec![0.0; n + 1];
            c[n] = 1.0;
            let bar = Barrier {
                blocks: &phase1,
                c,
                n: n + 1,
                degree: degree + 2.0 * n as f64,
            };
            let mut z0 = vec![0.0; n + 1];
            z0[n] = -worst + 1.0;
            match bar.run(z0, 1e-12, cap, &mut iterations, |z| z[n] < 0.0) {
                Path::Stopped(z) => z[..n].to_vec(),
                Path::Converged(z) | Path::Stalled(z, _) => {
                    let t = z[n];
                    let status = if t >= 0.0 {
                        SolveStatus::Infeasible
                    } else {
                        SolveStatus::NumericalFailure
                    };
                    return SolveOutcome {
                        status,
                        objective: f64::NAN,
                        x: z[..n].to_vec(),
                        iterations,
                        detail: format!("phase I ended with t = {t:e}"),
                        binding_constraints: None,
                        seconds: start.elapsed().as_secs_f64(),
                    };
                }
            }
        };

        let mut c = vec![0.0; n];
        for (s, v) in &program.objective {
            c[*s] += v;
        }
        let bar = Barrier {
            blocks: &blocks,
            c,
            n,
            degree,
        };
        let (status, x, detail) = match bar.run(x0, st.tol_gap, cap, &mut iterations, |_| false) {
            Path::Converged(x) => (SolveStatus::Optimal, x, "converged".to_string()),
            Path::Stopped(x) => (SolveStatus::Optimal, x, "converged".to_string()),
            Path::Stalled(x, why) => (SolveStatus::NumericalFailure, x, why),
        };
        SolveOutcome {
            status,
            objective: program.objective_value(&x),
            x,
            iterations,
            detail,
            binding_constraints: None,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{AffineMatrix, Sign, VarKind};

    #[test]
    fn small_sdp() {
        let mut p = LmiProgram::new();
        let t = p.add_var("t", VarKind::Scalar, Sign::Free);
        p.minimize(t);
        let f = p.expr(t).scalar_times(&DMatrix::identity(2, 2))
            + AffineMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.add("psd", &f, Sense::PosSemiDef);
        let out = BarrierBackend::default().solve(&p);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.0).abs() < 1e-7, "{} {:?} {} {:?}", out.objective, out.status, out.detail, out.x);
    }

    #[test]
    fn detects_infeasibility() {
        // x > 1 and x < 0
        let mut p = LmiProgram::new();
        let x = p.add_var("x", VarKind::Scalar, Sign::Free);
        p.minimize(x);
        p.add("x > 1", &(p.expr(x) - AffineMatrix::identity(1)), Sense::PosDef);
        p.add("x < 0", &p.expr(x), Sense::NegDef);
        let out = BarrierBackend::default().solve(&p);
        assert_eq!(out.status, SolveStatus::Infeasible);
    }
}
