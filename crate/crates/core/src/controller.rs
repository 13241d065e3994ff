//! Memory output-feedback fuzzy controller and actuator failure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, ShapeError};
use crate::model::{MembershipSpec, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("controller has no rules")]
    NoRules,
    #[error("rule {rule} has {got} history gains, expected {expected}")]
    Depth {
        rule: usize,
        got: usize,
        expected: usize,
    },
    #[error("{rules} gain sets but {memberships} controller memberships")]
    RuleCount { rules: usize, memberships: usize },
    #[error("held packet has {got} entries, expected {expected}")]
    PacketLength { got: usize, expected: usize },
    #[error("failure parameter alpha_f = {0} not in [0, 1]")]
    Failure(f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Membership(#[from] ModelError),
}

/// Gains `K_j^(h)` indexed as `gains[j][h - 1]` plus the controller memberships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    #[serde(with = "linalg::rows_nested")]
    pub gains: Vec<Vec<DMatrix<f64>>>,
    pub memberships: MembershipSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    pub weights: Vec<f64>,
    pub clamped: bool,
}

impl ControllerGains {
    pub fn new(
        gains: Vec<Vec<DMatrix<f64>>>,
        memberships: MembershipSpec,
    ) -> Result<Self, ControllerError> {
        let c = ControllerGains { gains, memberships };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), ControllerError> {
        let first = self
            .gains
            .first()
            .and_then(|g| g.first())
            .ok_or(ControllerError::NoRules)?;
        let (nu, ny) = first.shape();
        let kappa = self.gains[0].len();
        if self.gains.len() != self.memberships.rule_count() {
            return Err(ControllerError::RuleCount {
                rules: self.gains.len(),
                memberships: self.memberships.rule_count(),
            });
        }
        for (j, row) in self.gains.iter().enumerate() {
            if row.len() != kappa {
                return Err(ControllerError::Depth {
                    rule: j,
                    got: row.len(),
                    expected: kappa,
                });
            }
            for (h, k) in row.iter().enumerate() {
                linalg::expect_shape(format!("gain K[{}]^({})", j + 1, h + 1), k, nu, ny)?;
            }
        }
        Ok(())
    }

    pub fn rule_count(&self) -> usize {
        self.gains.len()
    }

    pub fn kappa(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    pub fn nu(&self) -> usize {
        self.gains[0][0].nrows()
    }

    pub fn ny(&self) -> usize {
        self.gains[0][0].ncols()
    }

    /// Control law with fixed rule weights; `packet[h - 1]` is `y_xi(t - h + 1)`.
    pub fn control_with_weights(
        &self,
        weights: &[f64],
        packet: &[DVector<f64>],
    ) -> Result<DVector<f64>, ControllerError> {
        if packet.len() != self.kappa() {
            return Err(ControllerError::PacketLength {
                got: packet.len(),
                expected: self.kappa(),
            });
        }
        let mut u = DVector::zeros(self.nu());
        for (n, row) in weights.iter().zip(&self.gains) {
            if *n == 0.0 {
                continue;
            }
            for (k, y) in row.iter().zip(packet) {
                if y.len() != k.ncols() {
                    return Err(ShapeError::Mismatch {
                        what: "held output".into(),
                        expected_rows: k.ncols(),
                        expected_cols: 1,
                        rows: y.len(),
                        cols: 1,
                    }
                    .into());
                }
                u += (k * y) * *n;
            }
        }
        Ok(u)
    }

    /// Memberships are evaluated at the newest entry of the held packet.
    pub fn compute_control(&self, packet: &[DVector<f64>]) -> Result<ControlOutput, ControllerError> {
        let newest = packet.first().ok_or(ControllerError::PacketLength {
            got: 0,
            expected: self.kappa(),
        })?;
        let eval = self
            .memberships
            .normalized(&self.memberships.premise_values(newest))?;
        let u = self.control_with_weights(&eval.weights, packet)?;
        Ok(ControlOutput {
            u,
            weights: eval.weights,
            clamped: eval.clamped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureConfig {
    pub alpha_f: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        FailureConfig { alpha_f: 1.0 }
    }
}

impl FailureConfig {
    pub fn new(alpha_f: f64) -> Result<Self, ControllerError> {
        if (0.0..=1.0).contains(&alpha_f) {
            Ok(FailureConfig { alpha_f })
        } else {
            Err(ControllerError::Failure(alpha_f))
        }
    }
}

pub fn apply_failure(u: &DVector<f64>, config: &FailureConfig) -> DVector<f64> {
    u * config.alpha_f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn y(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn zero_packet_gives_zero_input() {
        let c = ControllerGains::new(
            vec![vec![scalar(1.5), scalar(-0.3)]; 3],
            fixtures::example1_controller_memberships(),
        )
        .unwrap();
        let out = c.compute_control(&[y(0.0), y(0.0)]).unwrap();
        assert_eq!(out.u, y(0.0));
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn static_output_feedback() {
        let c = ControllerGains::new(vec![vec![scalar(-0.7)]], MembershipSpec::single_rule()).unwrap();
        let out = c.compute_control(&[y(2.0)]).unwrap();
        assert!((out.u[0] + 1.4).abs() < 1e-15);
    }

    #[test]
    fn memory_double_sum() {
        let k1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let k2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = ControllerGains::new(vec![vec![k1.clone(), k2.clone()]], MembershipSpec::single_rule())
            .unwrap();
        let packet = [y(0.7), y(-1.3)];
        let out = c.compute_control(&packet).unwrap();
        let mut oracle = DVector::zeros(2);
        for (k, v) in [&k1, &k2].iter().zip(&packet) {
            for r in 0..2 {
                oracle[r] += k[(r, 0)] * v[0];
            }
        }
        assert_eq!(out.u, oracle);
        assert_eq!(out.u, DVector::from_row_slice(&[0.7, -1.3]));
    }

    #[test]
    fn validation() {
        let ms = MembershipSpec::single_rule();
        assert!(ControllerGains::new(vec![], ms.clone()).is_err());
        assert!(ControllerGains::new(vec![vec![scalar(1.0)], vec![scalar(1.0)]], ms.clone()).is_err());
        let two = fixtures::example1_controller_memberships();
        assert!(ControllerGains::new(
            vec![vec![scalar(1.0)], vec![scalar(1.0), scalar(1.0)], vec![scalar(1.0)]],
            two
        )
        .is_err());
        let c = ControllerGains::new(vec![vec![scalar(1.0)]], ms).unwrap();
        assert!(c.compute_control(&[y(1.0), y(1.0)]).is_err());
    }

    #[test]
    fn failure_scaling() {
        let u = DVector::from_element(1, 2.0);
        assert_eq!(apply_failure(&u, &FailureConfig::new(0.0).unwrap())[0], 0.0);
        assert_eq!(apply_failure(&u, &FailureConfig::new(1.0).unwrap()), u);
        assert_eq!(apply_failure(&u, &FailureConfig::new(0.5).unwrap())[0], 1.0);
        assert!(FailureConfig::new(1.5).is_err());
        assert!(FailureConfig::new(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn homogeneous_with_frozen_weights(
            lambda in -10.0f64..10.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            w in 0.0f64..1.0,
        ) {
            let c = ControllerGains::new(
                vec![vec![scalar(0.4), scalar(-1.1)], vec![scalar(2.0), scalar(0.3)]],
                MembershipSpec::new(
                    vec![],
                    vec![
                        crate::model::RuleMembership::blended(
                            crate::expr::Expr::num(0.5), crate::expr::Expr::num(0.5), crate::expr::Expr::num(0.0)),
                        crate::model::RuleMembership::Residual,
                    ],
                ).unwrap(),
            ).unwrap();
            let weights = [w, 1.0 - w];
            let base = c.control_with_weights(&weights, &[y(a), y(b)]).unwrap();
            let scaled = c.control_with_weights(&weights, &[y(lambda * a), y(lambda * b)]).unwrap();
            prop_assert!((scaled[0] - lambda * base[0]).abs() <= 1e-12 * (1.0 + scaled[0].abs()));
        }
    }
}
