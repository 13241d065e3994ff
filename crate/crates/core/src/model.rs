//! Discrete-time interval type-2 Takagi–Sugeno plant and its memberships.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::linalg::{expect_shape, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("membership expression failed: {0}")]
    Expr(#[from] ExprError),
    #[error("degenerate membership: firing strengths sum to {0}")]
    Degenerate(f64),
    #[error("invalid membership spec: {0}")]
    InvalidSpec(String),
    #[error("plant must have at least one rule")]
    NoRules,
    #[error("premise value for `{0}` is not a number")]
    NanPremise(String),
}

/// A premise variable: one coordinate of a vector signal with a box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Premise {
    pub name: String,
    /// Coordinate of the signal (state for the plant, received output for
    /// the controller) the premise reads.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Lower/upper firing strengths and the blending weights of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleMembership {
    Interval {
        lower: Expr,
        upper: Expr,
        /// Weight on the lower function.
        lower_weight: Expr,
        /// Weight on the upper function; the two weights sum to one.
        upper_weight: Expr,
    },
    /// `1 - sum of the other rules' blended strengths`.
    Residual,
}

impl RuleMembership {
    /// Interval rule with weights `(1 - w, w)` where `w` weighs the upper function.
    pub fn blended(lower: Expr, upper: Expr, upper_weight: Expr) -> Self {
        let lower_weight = Expr::Binary(
            crate::expr::BinOp::Sub,
            Box::new(Expr::Num(1.0)),
            Box::new(upper_weight.clone()),
        );
        RuleMembership::Interval {
            lower,
            upper,
            lower_weight,
            upper_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipSpec {
    pub premises: Vec<Premise>,
    pub rules: Vec<RuleMembership>,
}

/// Raw (unnormalized) grades of one rule at a premise point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grade {
    pub lower: f64,
    pub upper: f64,
    pub lower_weight: f64,
    pub upper_weight: f64,
    pub blended: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipEval {
    pub weights: Vec<f64>,
    /// Set when a premise value had to be clamped into its domain.
    pub clamped: bool,
}

impl MembershipSpec {
    pub fn new(premises: Vec<Premise>, rules: Vec<RuleMembership>) -> Result<Self, ModelError> {
        let spec = MembershipSpec { premises, rules };
        spec.check()?;
        Ok(spec)
    }

    /// A spec with a single constant rule (`m = 1`).
    pub fn single_rule() -> Self {
        MembershipSpec {
            premises: Vec::new(),
            rules: vec![RuleMembership::blended(
                Expr::Num(1.0),
                Expr::Num(1.0),
                Expr::Num(0.5),
            )],
        }
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.rules.is_empty() {
            return Err(ModelError::NoRules);
        }
        let residuals = self
            .rules
            .iter()
            .filter(|r| matches!(r, RuleMembership::Residual))
            .count();
        if residuals > 1 || (residuals == 1 && self.rules.len() == 1) {
            return Err(ModelError::InvalidSpec(
                "at most one residual rule, and not as the only rule".into(),
            ));
        }
        for p in &self.premises {
            if !(p.lo < p.hi) {
                return Err(ModelError::InvalidSpec(format!(
                    "premise `{}` has empty domain [{}, {}]",
                    p.name, p.lo, p.hi
                )));
            }
        }
        let names: Vec<&str> = self.premises.iter().map(|p| p.name.as_str()).collect();
        for (i, r) in self.rules.iter().enumerate() {
            if let RuleMembership::Interval {
                lower,
                upper,
                lower_weight,
                upper_weight,
            } = r
            {
                for e in [lower, upper, lower_weight, upper_weight] {
                    if let Some(v) = e.variables().iter().find(|v| !names.contains(&v.as_str())) {
                        return Err(ModelError::InvalidSpec(format!(
                            "rule {}: variable `{v}` is not a declared premise",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Picks the premise coordinates out of a signal vector.
    pub fn premise_values(&self, signal: &DVector<f64>) -> Vec<f64> {
        self.premises.iter().map(|p| signal[p.index]).collect()
    }

    fn clamp(&self, premise: &[f64]) -> Result<(Vec<(&str, f64)>, bool), ModelError> {
        let mut clamped = false;
        let mut env = Vec::with_capacity(self.premises.len());
        for (p, &v) in self.premises.iter().zip(premise) {
            if v.is_nan() {
                return Err(ModelError::NanPremise(p.name.clone()));
            }
            let c = v.clamp(p.lo, p.hi);
            clamped |= c != v;
            env.push((p.name.as_str(), c));
        }
        Ok((env, clamped))
    }

    /// Raw grades clamped to `[0, 1]`; the residual rule is derived from the others.
    pub fn grades(&self, premise: &[f64]) -> Result<(Vec<Grade>, bool), ModelError> {
        let (env, clamped) = self.clamp(premise)?;
        let env = env.as_slice();
        let mut out = Vec::with_capacity(self.rules.len());
        let mut residual_at = None;
        for (i, r) in self.rules.iter().enumerate() {
            match r {
                RuleMembership::Interval {
                    lower,
                    upper,
                    lower_weight,
                    upper_weight,
                } => {
                    let lo = lower.eval(env)?.clamp(0.0, 1.0);
                    let up = upper.eval(env)?.clamp(0.0, 1.0);
                    let wl = lower_weight.eval(env)?;
                    let wu = upper_weight.eval(env)?;
                    out.push(Grade {
                        lower: lo,
                        upper: up,
                        lower_weight: wl,
                        upper_weight: wu,
                        blended: wl * lo + wu * up,
                    });
                }
                RuleMembership::Residual => {
                    residual_at = Some(i);
                    out.push(Grade {
                        lower: 0.0,
                        upper: 0.0,
                        lower_weight: 0.5,
                        upper_weight: 0.5,
                        blended: 0.0,
                    });
                }
            }
        }
        if let Some(r) = residual_at {
            let (mut s_lo, mut s_up, mut s_bl) = (0.0, 0.0, 0.0);
            for (i, g) in out.iter().enumerate() {
                if i != r {
                    s_lo += g.lower;
                    s_up += g.upper;
                    s_bl += g.blended;
                }
            }
            let g = &mut out[r];
            g.lower = (1.0 - s_up).clamp(0.0, 1.0);
            g.upper = (1.0 - s_lo).clamp(0.0, 1.0);
            g.blended = (1.0 - s_bl).clamp(0.0, 1.0);
        }
        Ok((out, clamped))
    }

    /// Normalized memberships: blended grades divided by their sum.
    pub fn normalized(&self, premise: &[f64]) -> Result<MembershipEval, ModelError> {
        let (grades, clamped) = self.grades(premise)?;
        let total: f64 = grades.iter().map(|g| g.blended).sum();
        if !(total > 0.0) {
            return Err(ModelError::Degenerate(total));
        }
        Ok(MembershipEval {
            weights: grades.iter().map(|g| g.blended / total).collect(),
            clamped,
        })
    }

    /// Bounds on each normalized membership over every admissible blend:
    /// the extreme ratios `lo_i / (lo_i + sum_{k!=i} up_k)` and
    /// `up_i / (up_i + sum_{k!=i} lo_k)`.
    pub fn normalized_bounds(&self, premise: &[f64]) -> Result<Vec<(f64, f64)>, ModelError> {
        let (grades, _) = self.grades(premise)?;
        let sum_lo: f64 = grades.iter().map(|g| g.lower).sum();
        let sum_up: f64 = grades.iter().map(|g| g.upper).sum();
        Ok(grades
            .iter()
            .map(|g| {
                let den_lo = g.lower + (sum_up - g.upper);
                let den_up = g.upper + (sum_lo - g.lower);
                let lo = if den_lo > 0.0 { g.lower / den_lo } else { 0.0 };
                let up = if den_up > 0.0 { g.upper / den_up } else { 1.0 };
                (lo.clamp(0.0, 1.0), up.clamp(0.0, 1.0))
            })
            .collect())
    }
}

/// Local linear model of one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub cy: DMatrix<f64>,
    pub cz: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub nx: usize,
    pub nu: usize,
    pub nd: usize,
    pub ny: usize,
    pub nz: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IT2Plant {
    pub dims: Dimensions,
    pub rules: Vec<LocalModel>,
    pub memberships: MembershipSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub x_next: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub weights: Vec<f64>,
    pub clamped: bool,
}

impl IT2Plant {
    pub fn new(rules: Vec<LocalModel>, memberships: MembershipSpec) -> Result<Self, ModelError> {
        let first = rules.first().ok_or(ModelError::NoRules)?;
        let dims = Dimensions {
            nx: first.a.nrows(),
            nu: first.bu.ncols(),
            nd: first.bd.ncols(),
            ny: first.cy.nrows(),
            nz: first.cz.nrows(),
        };
        for (i, r) in rules.iter().enumerate() {
            let tag = |m: &str| format!("rule {} {m}", i + 1);
            expect_shape(tag("A"), &r.a, dims.nx, dims.nx)?;
            expect_shape(tag("Bu"), &r.bu, dims.nx, dims.nu)?;
            expect_shape(tag("Bd"), &r.bd, dims.nx, dims.nd)?;
            expect_shape(tag("Cy"), &r.cy, dims.ny, dims.nx)?;
            expect_shape(tag("Cz"), &r.cz, dims.nz, dims.nx)?;
        }
        if memberships.rule_count() != rules.len() {
            return Err(ModelError::InvalidSpec(format!(
                "{} local models but {} membership rules",
                rules.len(),
                memberships.rule_count()
            )));
        }
        if let Some(p) = memberships.premises.iter().find(|p| p.index >= dims.nx) {
            return Err(ModelError::InvalidSpec(format!(
                "premise `{}` reads state coordinate {} but n_x = {}",
                p.name, p.index, dims.nx
            )));
        }
        memberships.check()?;
        Ok(IT2Plant {
            dims,
            rules,
            memberships,
        })
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn memberships_at(&self, x: &DVector<f64>) -> Result<MembershipEval, ModelError> {
        self.memberships
            .normalized(&self.memberships.premise_values(x))
    }

    /// Blended output map `sum_i m_i Cy_i`.
    pub fn output_matrix(&self, weights: &[f64]) -> DMatrix<f64> {
        crate::linalg::weighted_sum(weights, self.rules.iter().map(|r| &r.cy))
    }

    /// One step of the global fuzzy model.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<PlantStep, ModelError> {
        let dims = self.dims;
        let check = |what: &str, v: &DVector<f64>, n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(ShapeError::Mismatch {
                    what: what.into(),
                    expected_rows: n,
                    expected_cols: 1,
                    rows: v.len(),
                    cols: 1,
                })
            }
        };
        check("state", x, dims.nx)?;
        check("input", u, dims.nu)?;
        check("disturbance", d, dims.nd)?;
        let eval = self.memberships_at(x)?;
        let mut x_next = DVector::zeros(dims.nx);
        let mut y = DVector::zeros(dims.ny);
        let mut z = DVector::zeros(dims.nz);
        for (m, r) in eval.weights.iter().zip(&self.rules) {
            if *m == 0.0 {
                continue;
            }
            x_next += (&r.a * x + &r.bu * u + &r.bd * d) * *m;
            y += (&r.cy * x) * *m;
            z += (&r.cz * x) * *m;
        }
        Ok(PlantStep {
            x_next,
            y,
            z,
            weights: eval.weights,
            clamped: eval.clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fixtures;

    #[test]
    fn example_memberships_at_origin() {
        let plant = fixtures::example1_plant();
        let (grades, _) = plant.memberships.grades(&[0.0]).unwrap();
        let raw: Vec<f64> = grades.iter().map(|g| g.blended).collect();
        for (a, b) in raw.iter().zip([0.3, 0.45, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = plant.memberships.normalized(&[0.0]).unwrap();
        for (a, b) in m.weights.iter().zip([0.24, 0.36, 0.40]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(!m.clamped);
    }

    #[test]
    fn single_and_symmetric_rules() {
        let one = MembershipSpec::single_rule();
        assert_eq!(one.normalized(&[]).unwrap().weights, vec![1.0]);
        let half = || {
            RuleMembership::blended(Expr::Num(0.5), Expr::Num(0.5), Expr::Num(0.3))
        };
        let two = MembershipSpec::new(vec![], vec![half(), half()]).unwrap();
        assert_eq!(two.normalized(&[]).unwrap().weights, vec![0.5, 0.5]);
    }

    #[test]
    fn out_of_domain_premise_is_clamped() {
        let plant = fixtures::example1_plant();
        let far = plant.memberships.normalized(&[9.0]).unwrap();
        let edge = plant.memberships.normalized(&[4.0]).unwrap();
        assert!(far.clamped);
        assert_eq!(far.weights, edge.weights);
    }

    #[test]
    fn degenerate_memberships_are_rejected() {
        let zero = RuleMembership::blended(Expr::Num(0.0), Expr::Num(0.0), Expr::Num(0.5));
        let spec = MembershipSpec::new(vec![], vec![zero.clone(), zero]).unwrap();
        assert!(matches!(spec.normalized(&[]), Err(ModelError::Degenerate(_))));
    }

    #[test]
    fn undeclared_premise_variable_is_rejected() {
        let rule = RuleMembership::blended(parse("x9").unwrap(), Expr::Num(1.0), Expr::Num(0.5));
        assert!(matches!(
            MembershipSpec::new(vec![], vec![rule]),
            Err(ModelError::InvalidSpec(_))
        ));
    }

    #[test]
    fn residual_rule_completes_to_one() {
        let ctrl = fixtures::example1_controller_memberships();
        for y in [-4.0, -1.3, 0.0, 2.2, 4.0] {
            let (g, _) = ctrl.grades(&[y]).unwrap();
            let s: f64 = g.iter().map(|g| g.blended).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(g[2].lower <= g[2].blended && g[2].blended <= g[2].upper);
        }
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let plant = fixtures::example1_plant();
        let s = plant
            .step(
                &DVector::zeros(2),
                &DVector::zeros(1),
                &DVector::zeros(1),
            )
            .unwrap();
        assert_eq!(s.x_next, DVector::zeros(2));
        assert_eq!(s.y, DVector::zeros(1));
        assert_eq!(s.z, DVector::zeros(1));
    }

    #[test]
    fn step_matches_dense_oracle() {
        let plant = fixtures::example1_plant();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let s = plant
            .step(&x, &DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        // Oracle: blend of A_i first columns, memberships recomputed by hand at x1 = 1.
        let s2 = (0.4f64).sin().powi(2);
        let w = [
            (1.0 - s2) * 0.4 + s2 * 0.5,
            0.45,
            s2 * 0.2 + (1.0 - s2) * 0.4,
        ];
        let total: f64 = w.iter().sum();
        let cols = [[1.1, -0.3], [0.86, -0.2], [1.1, -0.3]];
        for row in 0..2 {
            let expect: f64 = (0..3).map(|i| w[i] / total * cols[i][row]).sum();
            assert!((s.x_next[row] - expect).abs() < 1e-14);
        }
        let y_expect: f64 = (0..3).map(|i| w[i] / total).sum::<f64>();
        assert!((s.y[0] - y_expect).abs() < 1e-14);
    }

    #[test]
    fn identical_rules_ignore_memberships() {
        let mut plant = fixtures::example1_plant();
        let a1 = plant.rules[0].clone();
        for r in plant.rules.iter_mut() {
            *r = a1.clone();
        }
        let x = DVector::from_vec(vec![0.7, -0.2]);
        let u = DVector::from_vec(vec![0.3]);
        let d = DVector::from_vec(vec![-0.1]);
        let s = plant.step(&x, &u, &d).unwrap();
        let direct = &a1.a * &x + &a1.bu * &u + &a1.bd * &d;
        assert!((s.x_next - direct).norm() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let plant = fixtures::example1_plant();
        assert!(matches!(
            plant.step(&DVector::zeros(3), &DVector::zeros(1), &DVector::zeros(1)),
            Err(ModelError::Shape(_))
        ));
        let mut rules = plant.rules.clone();
        rules[1].bu = DMatrix::zeros(2, 2);
        assert!(IT2Plant::new(rules, plant.memberships.clone()).is_err());
    }
}
