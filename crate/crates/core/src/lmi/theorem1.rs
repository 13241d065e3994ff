//! Membership-function-independent synthesis conditions.
//!
//! Block layout of `Psi_ijk` (rows and columns):
//!
//! | block | size      | signal                         |
//! |-------|-----------|--------------------------------|
//! | 0     | kappa nx  | stacked states `x~`            |
//! | 1     | ny        | weighted trigger error `e^`    |
//! | 2     | nd        | disturbance                    |
//! | 3     | 1         | trigger auxiliary `varpi`      |
//! | 4     | kappa nx  | mean-fade Schur block          |
//! | 5     | kappa nx  | fade-variance Schur block      |
//! | 6     | nu        | slack block for `zeta_j`       |
//!
//! Stacks run from the oldest sample (`h = kappa`) to the newest (`h = 1`).
//!
//! The memory gains are tied to the trigger weights, `eta_j^(h) =
//! varrho_h eta_j`. With untied gains the error block `-varrho~' Omega_bar
//! varrho~` has rank `ny` but size `kappa ny`, and any coupling into its null
//! space rules out a strictly negative `Psi` for `kappa > 1`. Once tied, the
//! loop sees the stacked errors only through `e^ = varrho~ e~`, so the error
//! block shrinks to `-Omega_bar` on `e^`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::affine::{AffineMatrix, BlockError, SymmetricBlocks};
use super::program::{LmiProgram, Sense};
use super::vars::{Sign, VarId, VarKind};
use crate::linalg::{self, ShapeError};
use crate::model::IT2Plant;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("invalid synthesis parameter: {0}")]
    Invalid(String),
    #[error("Psi[{i},{j},{k}]: {source}")]
    Block {
        i: usize,
        j: usize,
        k: usize,
        source: BlockError,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("program would have {rows} packed constraint rows, above the cap of {cap}")]
    TooLarge { rows: usize, cap: usize },
    #[error("membership evaluation failed: {0}")]
    Membership(String),
}

/// How the trigger matrix enters the program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// `Omega_bar = (1/nu + delta) Omega` is a free positive definite variable.
    #[default]
    Free,
    /// `Omega` is fixed; `delta` remains a scalar variable.
    Fixed(#[serde(with = "linalg::rows")] DMatrix<f64>),
}

/// Scalars and structure matrices fixed before solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisGivens {
    pub rho: f64,
    pub nu: f64,
    pub mu: f64,
    /// Trigger weights `varrho_1 .. varrho_kappa`, newest first.
    pub weights: Vec<f64>,
    pub xi_bar: f64,
    /// Fade variance.
    pub xi_star: f64,
    pub alpha_f: f64,
    pub hslash: f64,
    pub theta: f64,
    /// `(kappa - 1) nx x nx`
    #[serde(with = "linalg::rows")]
    pub e: DMatrix<f64>,
    /// `nx x nx`
    #[serde(with = "linalg::rows")]
    pub f: DMatrix<f64>,
    #[serde(default)]
    pub omega: OmegaMode,
}

impl SynthesisGivens {
    pub fn kappa(&self) -> usize {
        self.weights.len()
    }

    /// `E` as stacked multiples of `I_nx`, `F = f I_nx`.
    pub fn scalar_structure(e: &[f64], f: f64, nx: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut em = DMatrix::zeros(e.len() * nx, nx);
        for (b, v) in e.iter().enumerate() {
            for d in 0..nx {
                em[(b * nx + d, d)] = *v;
            }
        }
        (em, DMatrix::identity(nx, nx) * f)
    }

    pub fn check(&self, nx: usize) -> Result<(), LmiError> {
        let bad = |m: String| Err(LmiError::Invalid(m));
        let kappa = self.kappa();
        if kappa == 0 {
            return bad("kappa must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} not in (0, 1)", self.rho));
        }
        if !(self.nu > 0.0) {
            return bad(format!("nu = {} must be positive", self.nu));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu = {} not in (0, 1)", self.mu));
        }
        if !(self.hslash > 0.0 && self.hslash < 1.0) {
            return bad(format!("hslash = {} not in (0, 1)", self.hslash));
        }
        if !(self.theta > 0.0) {
            return bad(format!("theta = {} must be positive", self.theta));
        }
        if !(0.0..=1.0).contains(&self.alpha_f) {
            return bad(format!("alpha_f = {} not in [0, 1]", self.alpha_f));
        }
        if !(self.xi_star >= 0.0) {
            return bad(format!("xi_star = {} must be nonnegative", self.xi_star));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return bad("trigger weights must be nonnegative".into());
        }
        linalg::expect_shape("structure matrix E", &self.e, (kappa - 1) * nx, nx)?;
        linalg::expect_shape("structure matrix F", &self.f, nx, nx)?;
        if let OmegaMode::Fixed(om) = &self.omega {
            if om.nrows() != om.ncols() || !(linalg::min_eigenvalue(om) > 0.0) {
                return bad("fixed Omega must be symmetric positive definite".into());
            }
        }
        if self.mu >= 1.0 - self.hslash {
            log::warn!(
                "mu = {} >= 1 - hslash = {}: the trigger block cannot be negative",
                self.mu,
                1.0 - self.hslash
            );
        }
        Ok(())
    }
}

/// Handles of the decision variables shared by both theorems.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVars {
    pub p: VarId,
    /// `Omega_bar` in free mode.
    pub omega_bar: Option<VarId>,
    pub delta: VarId,
    pub gamma_bar: VarId,
    pub zeta: Vec<VarId>,
    /// Shared memory gain numerator `eta_j`; slot `h` uses `varrho_h eta_j`.
    pub eta: Vec<VarId>,
}

impl DesignVars {
    pub fn register(
        program: &mut LmiProgram,
        plant: &IT2Plant,
        controller_rules: usize,
        givens: &SynthesisGivens,
    ) -> Self {
        let d = plant.dims;
        let kappa = givens.kappa();
        let p = program.add_var(
            "P",
            VarKind::Symmetric { n: kappa * d.nx },
            Sign::PositiveDefinite,
        );
        let omega_bar = match givens.omega {
            OmegaMode::Free => Some(program.add_var(
                "Omega_bar",
                VarKind::Symmetric { n: d.ny },
                Sign::PositiveDefinite,
            )),
            OmegaMode::Fixed(_) => None,
        };
        let delta = program.add_var("delta", VarKind::Scalar, Sign::Positive);
        let gamma_bar = program.add_var("gamma_bar", VarKind::Scalar, Sign::Positive);
        let zeta = (0..controller_rules)
            .map(|j| program.add_var(&format!("zeta[{}]", j + 1), VarKind::Symmetric { n: d.nu }, Sign::Free))
            .collect();
        let eta = (0..controller_rules)
            .map(|j| {
                program.add_var(
                    &format!("eta[{}]", j + 1),
                    VarKind::Matrix {
                        rows: d.nu,
                        cols: d.ny,
                    },
                    Sign::Free,
                )
            })
            .collect();
        program.minimize(gamma_bar);
        DesignVars {
            p,
            omega_bar,
            delta,
            gamma_bar,
            zeta,
            eta,
        }
    }

    /// `eta_j^(h) = varrho_h eta_j` for `h = 1 .. kappa`.
    pub fn eta_slots(&self, program: &LmiProgram, givens: &SynthesisGivens, j: usize) -> Vec<AffineMatrix> {
        let e = program.expr(self.eta[j]);
        givens.weights.iter().map(|w| e.clone() * *w).collect()
    }

    /// `Omega_bar` as an affine expression.
    pub fn omega_bar_expr(&self, program: &LmiProgram, givens: &SynthesisGivens) -> AffineMatrix {
        match (&givens.omega, self.omega_bar) {
            (OmegaMode::Free, Some(id)) => program.expr(id),
            (OmegaMode::Fixed(om), _) => {
                program.expr(self.delta).scalar_times(om) + AffineMatrix::constant(om * (1.0 / givens.nu))
            }
            (OmegaMode::Free, None) => unreachable!("free Omega without a variable"),
        }
    }
}

/// Sizes of the seven block rows.
pub fn psi_block_sizes(plant: &IT2Plant, kappa: usize) -> [usize; 7] {
    let d = plant.dims;
    [
        kappa * d.nx,
        d.ny,
        d.nd,
        1,
        kappa * d.nx,
        kappa * d.nx,
        d.nu,
    ]
}

pub fn psi_dim(plant: &IT2Plant, kappa: usize) -> usize {
    psi_block_sizes(plant, kappa).iter().sum()
}

/// Assembles `Psi_ijk` (0-based rule indices) as an affine matrix.
pub fn assemble_psi(
    i: usize,
    j: usize,
    k: usize,
    givens: &SynthesisGivens,
    plant: &IT2Plant,
    program: &LmiProgram,
    vars: &DesignVars,
) -> Result<AffineMatrix, LmiError> {
    let dims = plant.dims;
    let nx = dims.nx;
    let kappa = givens.kappa();
    let ri = &plant.rules[i];
    let rk = &plant.rules[k];
    let wrap = |source| LmiError::Block { i, j, k, source };

    let p = program.expr(vars.p);
    let p_right = p.view(0, (kappa - 1) * nx, kappa * nx, nx);
    let p_left = p.view(0, 0, kappa * nx, (kappa - 1) * nx);
    let omega_bar = vars.omega_bar_expr(program, givens);
    let delta = program.expr(vars.delta);
    let gamma_bar = program.expr(vars.gamma_bar);
    let zeta = program.expr(vars.zeta[j]);
    let eta_hat = program.expr(vars.eta[j]);
    let eta = vars.eta_slots(program, givens, j);

    // H = [0 I] selects the newest state.
    let mut h_sel = DMatrix::zeros(nx, kappa * nx);
    h_sel
        .view_mut((0, (kappa - 1) * nx), (nx, nx))
        .copy_from(&DMatrix::identity(nx, nx));
    let cy_h = &rk.cy * &h_sel;
    let mut cz_t = DMatrix::zeros(dims.nz, kappa * nx);
    cz_t.view_mut((0, (kappa - 1) * nx), (dims.nz, nx))
        .copy_from(&ri.cz);
    let mut bd_t = DMatrix::zeros(kappa * nx, dims.nd);
    bd_t.view_mut(((kappa - 1) * nx, 0), (nx, dims.nd))
        .copy_from(&ri.bd);
    // [E; F]
    let mut ef = DMatrix::zeros(kappa * nx, nx);
    if kappa > 1 {
        ef.view_mut((0, 0), ((kappa - 1) * nx, nx)).copy_from(&givens.e);
    }
    ef.view_mut(((kappa - 1) * nx, 0), (nx, nx)).copy_from(&givens.f);
    let ef_bu = &ef * &ri.bu * givens.alpha_f;

    let sqrt_xs = givens.xi_star.sqrt();
    let hs = givens.hslash;

    // Upsilon^(h) = alpha_f [E;F] Bu_i eta^(h) Cy_k and its e^ counterpart.
    let ups_x: Vec<AffineMatrix> = eta.iter().map(|e| e.lmul(&ef_bu).rmul(&rk.cy)).collect();
    let ups_e = eta_hat.lmul(&ef_bu);
    let oldest_first = |v: &[AffineMatrix]| -> Vec<AffineMatrix> { v.iter().rev().cloned().collect() };

    let phi1 = p.clone() * -(1.0 - hs)
        + omega_bar.lmul(&cy_h.transpose()).rmul(&cy_h) * givens.rho
        + AffineMatrix::constant(cz_t.transpose() * &cz_t);
    let phi2 = -omega_bar.clone();
    let d_block = -gamma_bar.scalar_times(&DMatrix::identity(dims.nd, dims.nd));
    let varpi_block = (delta + AffineMatrix::constant(DMatrix::from_element(1, 1, givens.mu - (1.0 - hs))))
        * (1.0 / givens.nu);

    let mut shift = DMatrix::zeros((kappa - 1) * nx, kappa * nx);
    if kappa > 1 {
        shift
            .view_mut((0, nx), ((kappa - 1) * nx, (kappa - 1) * nx))
            .copy_from(&DMatrix::identity((kappa - 1) * nx, (kappa - 1) * nx));
    }
    let mut sig_bar1 = AffineMatrix::hstack(&oldest_first(&ups_x)) * givens.xi_bar;
    sig_bar1.place(&p_right.rmul(&ri.a), 0, (kappa - 1) * nx);
    let sig_bar1 = sig_bar1 + p_left.rmul(&shift);
    let sig_bar2 = -(ups_e.clone() * givens.xi_bar);
    let sig_star1 = AffineMatrix::hstack(&oldest_first(&ups_x)) * sqrt_xs;
    let sig_star2 = -(ups_e * sqrt_xs);

    let xi_cols: Vec<AffineMatrix> = oldest_first(&eta).iter().map(|e| e.rmul(&rk.cy)).collect();
    let xi_x = AffineMatrix::hstack(&xi_cols) * givens.theta;
    let xi_e = -(eta_hat * givens.theta);
    let slack = p_right.rmul(&(&ri.bu * givens.alpha_f)) - zeta.lmul(&ef_bu);
    let xi_bar_t = slack.transpose() * givens.xi_bar;
    let xi_star_t = slack.transpose() * sqrt_xs;

    let mut b = SymmetricBlocks::new(&psi_block_sizes(plant, kappa));
    b.set(0, 0, phi1).map_err(wrap)?;
    b.set(1, 1, phi2).map_err(wrap)?;
    b.set(2, 2, d_block).map_err(wrap)?;
    b.set(3, 3, varpi_block).map_err(wrap)?;
    b.set(4, 0, sig_bar1).map_err(wrap)?;
    b.set(4, 1, sig_bar2).map_err(wrap)?;
    b.set(4, 2, p.rmul(&bd_t)).map_err(wrap)?;
    b.set(4, 4, -p.clone()).map_err(wrap)?;
    b.set(5, 0, sig_star1).map_err(wrap)?;
    b.set(5, 1, sig_star2).map_err(wrap)?;
    b.set(5, 5, -p).map_err(wrap)?;
    b.set(6, 0, xi_x).map_err(wrap)?;
    b.set(6, 1, xi_e).map_err(wrap)?;
    b.set(6, 4, xi_bar_t).map_err(wrap)?;
    b.set(6, 5, xi_star_t).map_err(wrap)?;
    b.set(6, 6, (zeta.clone() + zeta.transpose()) * -givens.theta)
        .map_err(wrap)?;
    Ok(b.finish())
}

/// All `Psi_ijk`, indexed `[i][j][k]`.
pub fn assemble_all_psi(
    givens: &SynthesisGivens,
    plant: &IT2Plant,
    program: &LmiProgram,
    vars: &DesignVars,
) -> Result<Vec<Vec<Vec<AffineMatrix>>>, LmiError> {
    use rayon::prelude::*;
    let pr = plant.rule_count();
    let qr = vars.zeta.len();
    (0..pr)
        .into_par_iter()
        .map(|i| {
            (0..qr)
                .map(|j| {
                    (0..pr)
                        .map(|k| assemble_psi(i, j, k, givens, plant, program, vars))
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn psi_name(i: usize, j: usize, k: usize) -> String {
    format!("Psi[{},{},{}]", i + 1, j + 1, k + 1)
}

/// Positive definiteness of `P`, `Psi_ijk < 0` for every rule triple, and
/// the objective `min gamma_bar`.
pub fn assemble_theorem1(
    plant: &IT2Plant,
    controller_rules: usize,
    givens: &SynthesisGivens,
) -> Result<(LmiProgram, DesignVars), LmiError> {
    givens.check(plant.dims.nx)?;
    if controller_rules == 0 {
        return Err(LmiError::Invalid("controller needs at least one rule".into()));
    }
    let mut program = LmiProgram::new();
    let vars = DesignVars::register(&mut program, plant, controller_rules, givens);
    let psi = assemble_all_psi(givens, plant, &program, &vars)?;
    for (i, pi) in psi.iter().enumerate() {
        for (j, pj) in pi.iter().enumerate() {
            for (k, m) in pj.iter().enumerate() {
                program.add(psi_name(i, j, k), m, Sense::NegDef);
            }
        }
    }
    Ok((program, vars))
}
