//! Numerical post-check of a solved design.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::program::LmiProgram;
use super::theorem1::{assemble_all_psi, DesignVars, LmiError, OmegaMode, SynthesisGivens};
use crate::linalg;
use crate::model::{IT2Plant, MembershipSpec};

/// Solved values of the shared decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    #[serde(with = "linalg::rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub omega_bar: DMatrix<f64>,
    /// Trigger matrix recovered as `Omega_bar nu / (1 + nu delta)`.
    #[serde(with = "linalg::rows")]
    pub omega: DMatrix<f64>,
    pub delta: f64,
    pub gamma_bar: f64,
    #[serde(with = "linalg::rows_vec")]
    pub zeta: Vec<DMatrix<f64>>,
    /// Shared gain numerators `eta_j`.
    #[serde(with = "linalg::rows_vec")]
    pub eta_hat: Vec<DMatrix<f64>>,
    /// Per-slot numerators `eta[j][h - 1] = varrho_h eta_j`.
    #[serde(with = "linalg::rows_nested")]
    pub eta: Vec<Vec<DMatrix<f64>>>,
}

impl Certificates {
    pub fn extract(program: &LmiProgram, vars: &DesignVars, givens: &SynthesisGivens, x: &[f64]) -> Self {
        let t = &program.vars;
        let delta = t.scalar_value(vars.delta, x);
        let omega_bar = match (&givens.omega, vars.omega_bar) {
            (OmegaMode::Free, Some(id)) => t.value(id, x),
            (OmegaMode::Fixed(om), _) => om * (1.0 / givens.nu + delta),
            (OmegaMode::Free, None) => unreachable!("free Omega without a variable"),
        };
        let omega = &omega_bar * (givens.nu / (1.0 + givens.nu * delta));
        Certificates {
            p: t.value(vars.p, x),
            omega,
            omega_bar,
            delta,
            gamma_bar: t.scalar_value(vars.gamma_bar, x),
            zeta: vars.zeta.iter().map(|id| t.value(*id, x)).collect(),
            eta_hat: Vec::new(),
            eta: Vec::new(),
        }
        .with_eta_hat(vars.eta.iter().map(|id| t.value(*id, x)).collect(), givens)
    }

    fn with_eta_hat(mut self, eta_hat: Vec<DMatrix<f64>>, givens: &SynthesisGivens) -> Self {
        self.eta = eta_hat
            .iter()
            .map(|e| givens.weights.iter().map(|w| e * *w).collect())
            .collect();
        self.eta_hat = eta_hat;
        self
    }

    /// Writes the certificate into a fresh variable layout.
    fn load(&self, program: &LmiProgram, vars: &DesignVars) -> Vec<f64> {
        let t = &program.vars;
        let mut x = vec![0.0; t.scalar_count()];
        t.set_value(vars.p, &self.p, &mut x);
        if let Some(id) = vars.omega_bar {
            t.set_value(id, &self.omega_bar, &mut x);
        }
        x[t.info(vars.delta).offset] = self.delta;
        x[t.info(vars.gamma_bar).offset] = self.gamma_bar;
        for (id, z) in vars.zeta.iter().zip(&self.zeta) {
            t.set_value(*id, z, &mut x);
        }
        for (id, e) in vars.eta.iter().zip(&self.eta_hat) {
            t.set_value(*id, e, &mut x);
        }
        x
    }

    /// Numeric `Psi_ijk` at this certificate, indexed `[i][j][k]`.
    pub fn psi_values(
        &self,
        plant: &IT2Plant,
        givens: &SynthesisGivens,
    ) -> Result<Vec<Vec<Vec<DMatrix<f64>>>>, LmiError> {
        let mut program = LmiProgram::new();
        let vars = DesignVars::register(&mut program, plant, self.zeta.len(), givens);
        let x = self.load(&program, &vars);
        let psi = assemble_all_psi(givens, plant, &program, &vars)?;
        Ok(psi
            .iter()
            .map(|a| a.iter().map(|b| b.iter().map(|m| m.eval(&x)).collect()).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub samples: usize,
    /// Largest eigenvalue of the membership-weighted sum over all samples.
    pub max_weighted_eigenvalue: f64,
    pub weighted_violations: usize,
    /// Largest eigenvalue over the individual vertex matrices.
    pub max_vertex_eigenvalue: f64,
    pub p_min_eigenvalue: f64,
    /// `max_j,h ||zeta_j K_j^(h) - eta_j^(h)|| / max(1, ||eta_j^(h)||)`
    pub gain_residual: f64,
    pub passed: bool,
    pub messages: Vec<String>,
}

pub const GAIN_TOLERANCE: f64 = 1e-8;

/// Samples premise points uniformly over the declared boxes, forms
/// `sum m_i n_j m_k Psi_ijk` and checks negativity; also checks `P > 0` and
/// `zeta_j K_j^(h) = eta_j^(h)`.
pub fn verify_design(
    cert: &Certificates,
    gains: &[Vec<DMatrix<f64>>],
    plant: &IT2Plant,
    controller: &MembershipSpec,
    givens: &SynthesisGivens,
    n_samples: usize,
    seed: u64,
) -> Result<VerificationReport, LmiError> {
    let psi = cert.psi_values(plant, givens)?;
    let mut messages = Vec::new();
    let pr = plant.rule_count();
    let qr = cert.zeta.len();

    let max_vertex_eigenvalue = psi
        .iter()
        .flatten()
        .flatten()
        .map(linalg::max_eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max);

    let p_min_eigenvalue = linalg::min_eigenvalue(&cert.p);
    if !(p_min_eigenvalue > 0.0) {
        messages.push(format!("P is not positive definite (min eigenvalue {p_min_eigenvalue:e})"));
    }

    let mut gain_residual: f64 = 0.0;
    for (j, (z, row)) in cert.zeta.iter().zip(&cert.eta).enumerate() {
        for (h, eta) in row.iter().enumerate() {
            match gains.get(j).and_then(|g| g.get(h)) {
                Some(k) => {
                    let r = (z * k - eta).norm() / eta.norm().max(1.0);
                    gain_residual = gain_residual.max(r);
                }
                None => {
                    gain_residual = f64::INFINITY;
                    messages.push(format!("missing gain K[{}]^({})", j + 1, h + 1));
                }
            }
        }
    }
    if !(gain_residual <= GAIN_TOLERANCE) {
        messages.push(format!("gain recovery residual {gain_residual:e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_weighted = f64::NEG_INFINITY;
    let mut violations = 0;
    let n = psi[0][0][0].nrows();
    for _ in 0..n_samples {
        let xs: Vec<f64> = plant
            .memberships
            .premises
            .iter()
            .map(|p| rng.gen_range(p.lo..=p.hi))
            .collect();
        let ys: Vec<f64> = controller
            .premises
            .iter()
            .map(|p| rng.gen_range(p.lo..=p.hi))
            .collect();
        let m = plant
            .memberships
            .normalized(&xs)
            .map_err(|e| LmiError::Membership(e.to_string()))?
            .weights;
        let nj = controller
            .normalized(&ys)
            .map_err(|e| LmiError::Membership(e.to_string()))?
            .weights;
        let mut sum = DMatrix::zeros(n, n);
        for i in 0..pr {
            for j in 0..qr {
                for k in 0..pr {
                    let w = m[i] * nj[j] * m[k];
                    if w != 0.0 {
                        sum += &psi[i][j][k] * w;
                    }
                }
            }
        }
        let e = linalg::max_eigenvalue(&sum);
        if !(e < 0.0) {
            violations += 1;
        }
        max_weighted = max_weighted.max(e);
    }
    if violations > 0 {
        messages.push(format!(
            "{violations} of {n_samples} sampled weighted sums are not negative definite (max eigenvalue {max_weighted:e})"
        ));
    }
    let passed = violations == 0 && p_min_eigenvalue > 0.0 && gain_residual <= GAIN_TOLERANCE;
    Ok(VerificationReport {
        samples: n_samples,
        max_weighted_eigenvalue: max_weighted,
        weighted_violations: violations,
        max_vertex_eigenvalue,
        p_min_eigenvalue,
        gain_residual,
        passed,
        messages,
    })
}
