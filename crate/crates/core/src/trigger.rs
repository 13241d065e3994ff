//! Memory dynamic event-triggering mechanism (MDETM) and its memoryless
//! special case (DETM).
//!
//! At every sample the trigger compares the `kappa` most recent outputs with
//! the outputs of the last released packet, aggregates the per-slot errors
//! with the weights `varrho_h`, and releases a new packet when
//!
//! ```text
//! varpi / nu + rho * y' Omega y - e' Omega e <= 0,    e = sum_h varrho_h (y(t-h+1) - y(t_k-h+1))
//! ```
//!
//! A loop resting at the origin with `varpi = 0` sits on the equality case
//! and releases at every sample; any `varpi(0) > 0` keeps it silent.
//!
//! The auxiliary variable evolves as
//! `varpi(t+1) = mu * varpi(t) + rho * y' Omega y - e' Omega e`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriggerError {
    #[error("invalid trigger parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Which error enters the `varpi` update at a release instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarpiUpdate {
    /// At a release the held packet equals the fresh history, so the error
    /// entering the update is zero.
    #[default]
    PostRelease,
    /// Reuse the pre-release error that decided the trigger.
    PreRelease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub rho: f64,
    pub nu: f64,
    pub mu: f64,
    /// `varrho_1 .. varrho_kappa`, newest sample first.
    pub weights: Vec<f64>,
    #[serde(with = "linalg::rows")]
    pub omega: DMatrix<f64>,
    #[serde(default)]
    pub varpi0: f64,
    #[serde(default)]
    pub varpi_update: VarpiUpdate,
}

/// Outcome of the `nu * mu >= 1` test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub nu_mu: f64,
    /// When set, `varpi(t) >= 0` is guaranteed for every trajectory.
    pub nonnegativity_guaranteed: bool,
}

impl TriggerConfig {
    pub fn new(
        rho: f64,
        nu: f64,
        mu: f64,
        weights: Vec<f64>,
        omega: DMatrix<f64>,
        varpi0: f64,
    ) -> Result<Self, TriggerError> {
        let cfg = TriggerConfig {
            rho,
            nu,
            mu,
            weights,
            omega,
            varpi0,
            varpi_update: VarpiUpdate::PostRelease,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Memoryless trigger: `kappa = 1`, `varrho = (1)`.
    pub fn memoryless(rho: f64, nu: f64, mu: f64, omega: DMatrix<f64>) -> Result<Self, TriggerError> {
        Self::new(rho, nu, mu, vec![1.0], omega, 0.0)
    }

    pub fn kappa(&self) -> usize {
        self.weights.len()
    }

    pub fn check(&self) -> Result<(), TriggerError> {
        let bad = |m: String| Err(TriggerError::Invalid(m));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} not in (0, 1)", self.rho));
        }
        if !(self.nu > 0.0) {
            return bad(format!("nu = {} must be positive", self.nu));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu = {} not in (0, 1)", self.mu));
        }
        if !(self.varpi0 >= 0.0) {
            return bad(format!("varpi0 = {} must be nonnegative", self.varpi0));
        }
        if self.weights.is_empty() {
            return bad("memory depth kappa must be at least 1".into());
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("varrho weights sum to {sum}, expected 1"));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return bad("varrho weights must be nonnegative".into());
        }
        if self.weights.windows(2).any(|w| w[0] < w[1]) {
            return bad("varrho weights must be non-increasing (newest first)".into());
        }
        let n = self.omega.nrows();
        linalg::expect_shape("trigger Omega", &self.omega, n, n)?;
        if linalg::asymmetry(&self.omega) > 1e-12 * (1.0 + self.omega.abs().max()) {
            return bad("Omega must be symmetric".into());
        }
        if !(linalg::min_eigenvalue(&self.omega) > 0.0) {
            return bad("Omega must be positive definite".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Lemma1Report {
        let nu_mu = self.nu * self.mu;
        Lemma1Report {
            nu_mu,
            nonnegativity_guaranteed: nu_mu >= 1.0 && self.varpi0 >= 0.0,
        }
    }
}

/// Per-run trigger memory.
#[derive(Debug, Clone)]
pub struct TriggerState {
    pub varpi: f64,
    /// Last `kappa` raw outputs, newest first.
    history: VecDeque<DVector<f64>>,
    /// Raw outputs carried by the last released packet, newest first.
    released: Vec<DVector<f64>>,
    last_release: Option<usize>,
    step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecision {
    pub triggered: bool,
    /// Left-hand side of the release test.
    pub lhs: f64,
    /// Aggregated weighted error before any release.
    pub weighted_error: DVector<f64>,
    /// `mu varpi + rho y'Oy - e'Oe` with the pre-release error.
    pub varpi_pre_release: f64,
    /// Value stored for the next sample.
    pub varpi_next: f64,
    /// Released raw outputs, newest first.
    pub packet: Option<Vec<DVector<f64>>>,
}

impl TriggerState {
    /// Pre-history is filled with `y0` (`x(t) = x(0)` for `t < kappa`).
    pub fn new(config: &TriggerConfig, y0: &DVector<f64>) -> Self {
        let kappa = config.kappa();
        TriggerState {
            varpi: config.varpi0,
            history: std::iter::repeat(y0.clone()).take(kappa).collect(),
            released: vec![y0.clone(); kappa],
            last_release: None,
            step: 0,
        }
    }

    pub fn last_release(&self) -> Option<usize> {
        self.last_release
    }

    pub fn history(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.history.iter()
    }

    pub fn released(&self) -> &[DVector<f64>] {
        &self.released
    }

    fn push(&mut self, config: &TriggerConfig, y_now: &DVector<f64>) -> Result<(), TriggerError> {
        let n = config.omega.nrows();
        if y_now.len() != n {
            return Err(ShapeError::Mismatch {
                what: "output vs trigger Omega".into(),
                expected_rows: n,
                expected_cols: 1,
                rows: y_now.len(),
                cols: 1,
            }
            .into());
        }
        if self.history.len() != config.kappa() {
            return Err(TriggerError::Invalid(format!(
                "state holds {} samples but kappa = {}",
                self.history.len(),
                config.kappa()
            )));
        }
        self.history.pop_back();
        self.history.push_front(y_now.clone());
        Ok(())
    }

    fn finish(
        &mut self,
        config: &TriggerConfig,
        y_now: &DVector<f64>,
        weighted_error: DVector<f64>,
    ) -> TriggerDecision {
        let quad = |v: &DVector<f64>| (v.transpose() * &config.omega * v)[(0, 0)];
        let y_term = config.rho * quad(y_now);
        let e_term = quad(&weighted_error);
        let lhs = self.varpi / config.nu + y_term - e_term;
        let forced = self.step == 0;
        let triggered = forced || lhs <= 0.0;
        let varpi_pre_release = config.mu * self.varpi + y_term - e_term;
        let varpi_next = match (triggered, config.varpi_update) {
            (true, VarpiUpdate::PostRelease) => config.mu * self.varpi + y_term,
            _ => varpi_pre_release,
        };
        let packet = if triggered {
            self.released = self.history.iter().cloned().collect();
            self.last_release = Some(self.step);
            Some(self.released.clone())
        } else {
            None
        };
        self.varpi = varpi_next;
        self.step += 1;
        TriggerDecision {
            triggered,
            lhs,
            weighted_error,
            varpi_pre_release,
            varpi_next,
            packet,
        }
    }

    /// Memory trigger test and `varpi` update for the current sample.
    /// The first sample is always released.
    pub fn check_and_update(
        &mut self,
        config: &TriggerConfig,
        y_now: &DVector<f64>,
    ) -> Result<TriggerDecision, TriggerError> {
        self.push(config, y_now)?;
        let mut e = DVector::zeros(y_now.len());
        for ((w, y), yk) in config.weights.iter().zip(&self.history).zip(&self.released) {
            if *w != 0.0 {
                e += (y - yk) * *w;
            }
        }
        Ok(self.finish(config, y_now, e))
    }

    /// Memoryless test `e = y(t) - y(t_k)`, ignoring the weights. The
    /// released packet still carries the configured history depth.
    pub fn detm_check(
        &mut self,
        config: &TriggerConfig,
        y_now: &DVector<f64>,
    ) -> Result<TriggerDecision, TriggerError> {
        self.push(config, y_now)?;
        let e = y_now - &self.released[0];
        Ok(self.finish(config, y_now, e))
    }
}
