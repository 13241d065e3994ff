//! TOML configuration of a full design/simulation study.
//!
//! Every validation error carries the dotted key path of the offending value.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{FadingConfig, FadingFamily, SpreadMeaning};
use crate::controller::FailureConfig;
use crate::expr::Expr;
use crate::linalg;
use crate::lmi::{OmegaMode, SynthesisGivens, DEFAULT_ROW_CAP};
use crate::model::{IT2Plant, LocalModel, MembershipSpec, RuleMembership};
use crate::synth::{DesignProblem, Method, PartitionSpec};
use crate::trigger::{TriggerConfig, VarpiUpdate};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatrices {
    #[serde(with = "linalg::rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub bu: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub bd: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub cy: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub cz: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub rules: Vec<RuleMatrices>,
    pub memberships: MembershipSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub memberships: MembershipSpec,
}

/// `"free"` or a fixed matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSpec {
    Keyword(String),
    Matrix(Vec<Vec<f64>>),
}

impl Default for OmegaSpec {
    fn default() -> Self {
        OmegaSpec::Keyword("free".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub rho: f64,
    pub nu: f64,
    pub mu: f64,
    pub kappa: usize,
    /// Newest first; defaults to `(1, 0, .., 0)`.
    #[serde(default)]
    pub varrho: Option<Vec<f64>>,
    #[serde(default)]
    pub omega: OmegaSpec,
    #[serde(default)]
    pub varpi0: f64,
    #[serde(default)]
    pub varpi_update: VarpiUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub xi_bar: f64,
    pub xi_star: f64,
    #[serde(default)]
    pub family: FadingFamily,
    #[serde(default)]
    pub xi_star_is: SpreadMeaning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default = "default_cells")]
    pub p: usize,
    #[serde(default = "default_cells")]
    pub q: usize,
    #[serde(default = "one")]
    pub wp: usize,
    #[serde(default = "default_row_cap")]
    pub row_cap: usize,
}

fn default_cells() -> usize {
    20
}
fn one() -> usize {
    1
}
fn default_row_cap() -> usize {
    DEFAULT_ROW_CAP
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            p: default_cells(),
            q: default_cells(),
            wp: 1,
            row_cap: DEFAULT_ROW_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default = "default_method")]
    pub method: Method,
    pub hslash: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// When present, `theta` is searched over this grid instead.
    #[serde(default)]
    pub theta_grid: Option<Vec<f64>>,
    /// Scalars `e_1 ..` of `E = [e_1 I; ..; e_{kappa-1} I]`. Missing entries
    /// repeat the last one; surplus entries are dropped.
    #[serde(default)]
    pub e: Vec<f64>,
    #[serde(default = "default_f")]
    pub f: f64,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default = "default_verify_samples")]
    pub verify_samples: usize,
}

fn default_method() -> Method {
    Method::Mfi
}
fn default_theta() -> f64 {
    1.0
}
fn default_f() -> f64 {
    1.0
}
fn default_verify_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Initial state of disturbance runs; zero when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Initial state of the disturbance-free decay runs.
    #[serde(default)]
    pub decay_x0: Option<Vec<f64>>,
    #[serde(default = "default_disturbance")]
    pub disturbance: Expr,
    /// Monte Carlo ensemble size.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_horizon() -> usize {
    100
}
fn default_disturbance() -> Expr {
    Expr::num(0.0)
}
fn default_seeds() -> usize {
    100
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: default_horizon(),
            x0: None,
            decay_x0: None,
            disturbance: default_disturbance(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Root of every random stream.
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    pub trigger: TriggerSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub failure: FailureConfig,
    pub design: DesignSection,
    #[serde(default)]
    pub sim: SimSection,
}

/// Grid of premise points used to sample membership invariants.
fn sample_points(spec: &MembershipSpec, per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for p in &spec.premises {
        let mut next = Vec::with_capacity(pts.len() * per_axis);
        for base in &pts {
            for s in 0..per_axis {
                let mut v = base.clone();
                v.push(p.lo + (p.hi - p.lo) * s as f64 / (per_axis - 1) as f64);
                next.push(v);
            }
        }
        pts = next;
    }
    pts
}

/// Checks interval ordering and weight normalization at sampled points.
pub fn check_membership_spec(spec: &MembershipSpec, path: &str) -> Result<(), ConfigError> {
    let validated = MembershipSpec::new(spec.premises.clone(), spec.rules.clone());
    if let Err(e) = validated {
        return invalid(path, e.to_string());
    }
    let per_axis = if spec.premises.len() <= 2 { 201 } else { 11 };
    for pt in sample_points(spec, per_axis) {
        let (grades, _) = match spec.grades(&pt) {
            Ok(g) => g,
            Err(e) => return invalid(path, format!("at {pt:?}: {e}")),
        };
        for (i, (g, r)) in grades.iter().zip(&spec.rules).enumerate() {
            if matches!(r, RuleMembership::Residual) {
                continue;
            }
            let rp = format!("{path}.rules[{i}]");
            if g.lower > g.upper + 1e-12 {
                return invalid(rp, format!("lower {} exceeds upper {} at {pt:?}", g.lower, g.upper));
            }
            if (g.lower_weight + g.upper_weight - 1.0).abs() > 1e-9
                || !(-1e-12..=1.0 + 1e-12).contains(&g.lower_weight)
                || !(-1e-12..=1.0 + 1e-12).contains(&g.upper_weight)
            {
                return invalid(
                    rp,
                    format!(
                        "blend weights ({}, {}) at {pt:?} must lie in [0, 1] and sum to 1",
                        g.lower_weight, g.upper_weight
                    ),
                );
            }
        }
        if let Err(e) = spec.normalized(&pt) {
            return invalid(path, format!("at {pt:?}: {e}"));
        }
    }
    Ok(())
}

impl ToolkitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let plant = self.plant()?;
        check_membership_spec(&self.plant.memberships, "plant.memberships")?;
        check_membership_spec(&self.controller.memberships, "controller.memberships")?;
        let ny = plant.dims.ny;
        if let Some(p) = self.controller.memberships.premises.iter().position(|p| p.index >= ny) {
            return invalid(
                format!("controller.memberships.premises[{p}].index"),
                format!("received output has {ny} coordinates"),
            );
        }

        let t = &self.trigger;
        if t.kappa == 0 {
            return invalid("trigger.kappa", "memory depth must be at least 1");
        }
        let weights = self.weights();
        if weights.len() != t.kappa {
            return invalid(
                "trigger.varrho",
                format!("{} weights given for kappa = {}", weights.len(), t.kappa),
            );
        }
        let omega = match self.omega_mode(ny) {
            Ok(OmegaMode::Fixed(m)) => m,
            Ok(OmegaMode::Free) => DMatrix::identity(ny, ny),
            Err(e) => return Err(e),
        };
        let trig = TriggerConfig {
            rho: t.rho,
            nu: t.nu,
            mu: t.mu,
            weights,
            omega,
            varpi0: t.varpi0,
            varpi_update: t.varpi_update,
        };
        if let Err(e) = trig.check() {
            return invalid("trigger", e.to_string());
        }

        if let Err(e) = self.fading().check() {
            return invalid("channel", e.to_string());
        }
        if !(0.0..=1.0).contains(&self.failure.alpha_f) {
            return invalid("failure.alpha_f", format!("{} not in [0, 1]", self.failure.alpha_f));
        }

        let d = &self.design;
        if !(d.hslash > 0.0 && d.hslash < 1.0) {
            return invalid("design.hslash", format!("{} not in (0, 1)", d.hslash));
        }
        if !(d.theta > 0.0) {
            return invalid("design.theta", format!("{} must be positive", d.theta));
        }
        if let Some(g) = &d.theta_grid {
            if g.is_empty() || g.iter().any(|v| !(*v > 0.0)) {
                return invalid("design.theta_grid", "must be a non-empty list of positive values");
            }
        }
        if d.partition.p == 0 || d.partition.q == 0 || d.partition.wp == 0 {
            return invalid("design.partition", "p, q and wp must be at least 1");
        }
        if t.kappa > 1 && d.e.is_empty() {
            return invalid("design.e", "kappa > 1 needs at least one E scalar");
        }
        if let Err(e) = self.givens().and_then(|g| {
            g.check(plant.dims.nx)
                .map_err(|e| ConfigError::Invalid {
                    path: "design".into(),
                    message: e.to_string(),
                })
        }) {
            return Err(e);
        }

        let s = &self.sim;
        if s.horizon == 0 {
            return invalid("sim.horizon", "must be at least 1");
        }
        for (key, v) in [("sim.x0", &s.x0), ("sim.decay_x0", &s.decay_x0)] {
            if let Some(v) = v {
                if v.len() != plant.dims.nx {
                    return invalid(key, format!("{} entries for n_x = {}", v.len(), plant.dims.nx));
                }
            }
        }
        if let Some(v) = s.disturbance.variables().iter().find(|v| v.as_str() != "t") {
            return invalid("sim.disturbance", format!("unknown variable `{v}` (only `t` is bound)"));
        }
        if plant.dims.nd != 1 {
            return invalid("sim.disturbance", "scalar disturbance expressions need n_d = 1");
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<IT2Plant, ConfigError> {
        let rules = self
            .plant
            .rules
            .iter()
            .map(|r| LocalModel {
                a: r.a.clone(),
                bu: r.bu.clone(),
                bd: r.bd.clone(),
                cy: r.cy.clone(),
                cz: r.cz.clone(),
            })
            .collect();
        IT2Plant::new(rules, self.plant.memberships.clone()).map_err(|e| ConfigError::Invalid {
            path: "plant".into(),
            message: e.to_string(),
        })
    }

    pub fn controller_memberships(&self) -> &MembershipSpec {
        &self.controller.memberships
    }

    pub fn kappa(&self) -> usize {
        self.trigger.kappa
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.trigger.varrho {
            Some(w) => w.clone(),
            None => detm_weights(self.trigger.kappa),
        }
    }

    pub fn omega_mode(&self, ny: usize) -> Result<OmegaMode, ConfigError> {
        match &self.trigger.omega {
            OmegaSpec::Keyword(k) if k == "free" => Ok(OmegaMode::Free),
            OmegaSpec::Keyword(k) => invalid("trigger.omega", format!("expected \"free\" or a matrix, got `{k}`")),
            OmegaSpec::Matrix(rows) => {
                let m = linalg::from_rows(rows).map_err(|e| ConfigError::Invalid {
                    path: "trigger.omega".into(),
                    message: e.to_string(),
                })?;
                if m.nrows() != ny || m.ncols() != ny {
                    return invalid("trigger.omega", format!("must be {ny}x{ny}"));
                }
                Ok(OmegaMode::Fixed(m))
            }
        }
    }

    pub fn e_scalars(&self) -> Vec<f64> {
        e_scalars(&self.design.e, self.trigger.kappa)
    }

    pub fn givens(&self) -> Result<SynthesisGivens, ConfigError> {
        let plant = self.plant()?;
        let nx = plant.dims.nx;
        let (e, f) = SynthesisGivens::scalar_structure(&self.e_scalars(), self.design.f, nx);
        Ok(SynthesisGivens {
            rho: self.trigger.rho,
            nu: self.trigger.nu,
            mu: self.trigger.mu,
            weights: self.weights(),
            xi_bar: self.channel.xi_bar,
            xi_star: self.fading().variance(),
            alpha_f: self.failure.alpha_f,
            hslash: self.design.hslash,
            theta: self.design.theta,
            e,
            f,
            omega: self.omega_mode(plant.dims.ny)?,
        })
    }

    pub fn design_problem(&self) -> Result<DesignProblem, ConfigError> {
        let p = &self.design.partition;
        Ok(DesignProblem {
            plant: self.plant()?,
            controller: self.controller.memberships.clone(),
            givens: self.givens()?,
            method: self.design.method,
            partition: PartitionSpec {
                p: p.p,
                q: p.q,
                wp: p.wp,
                row_cap: p.row_cap,
            },
            verify_samples: self.design.verify_samples,
            verify_seed: self.seed,
        })
    }

    pub fn fading(&self) -> FadingConfig {
        FadingConfig {
            xi_bar: self.channel.xi_bar,
            xi_star: self.channel.xi_star,
            family: self.channel.family,
            xi_star_is: self.channel.xi_star_is,
            seed: self.seed,
        }
    }

    /// Trigger used in simulation with the given (designed or fixed) `Omega`.
    pub fn trigger_config(&self, omega: DMatrix<f64>) -> TriggerConfig {
        TriggerConfig {
            rho: self.trigger.rho,
            nu: self.trigger.nu,
            mu: self.trigger.mu,
            weights: self.weights(),
            omega,
            varpi0: self.trigger.varpi0,
            varpi_update: self.trigger.varpi_update,
        }
    }

    /// Copy with the memory depth changed; `varrho` and `E` follow `case`.
    pub fn with_case(&self, case: Case, kappa: usize) -> Result<Self, ConfigError> {
        if kappa == 0 {
            return invalid("trigger.kappa", "memory depth must be at least 1");
        }
        let mut c = self.clone();
        let preset = case.preset(kappa);
        c.trigger.kappa = kappa;
        c.trigger.varrho = Some(preset.varrho);
        c.design.e = preset.e;
        c.design.f = preset.f;
        c.design.method = preset.method;
        c.validate()?;
        Ok(c)
    }
}

impl ToolkitConfig {
    /// Copy with only the memory depth changed. Configured weights are
    /// truncated or zero-padded and renormalized.
    pub fn with_kappa(&self, kappa: usize) -> Result<Self, ConfigError> {
        if kappa == 0 {
            return invalid("trigger.kappa", "memory depth must be at least 1");
        }
        let mut c = self.clone();
        c.trigger.kappa = kappa;
        c.trigger.varrho = self.trigger.varrho.as_ref().map(|w| truncate_weights(w, kappa));
        c.validate()?;
        Ok(c)
    }
}

/// `(1, 0, .., 0)`: the memoryless trigger on a `kappa`-deep buffer.
pub fn detm_weights(kappa: usize) -> Vec<f64> {
    let mut w = vec![0.0; kappa];
    if let Some(f) = w.first_mut() {
        *f = 1.0;
    }
    w
}

/// Resizes the configured E scalars to `kappa - 1`.
pub fn e_scalars(e: &[f64], kappa: usize) -> Vec<f64> {
    let n = kappa.saturating_sub(1);
    if e.len() > n && n > 0 {
        log::debug!("using the first {n} of {} E scalars", e.len());
    }
    (0..n)
        .map(|i| e.get(i).or(e.last()).copied().unwrap_or(0.0))
        .collect()
}

/// The four comparison scenarios of the example study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Membership-independent, memoryless trigger, memoryless controller.
    One,
    /// Membership-independent, memoryless trigger, memory controller.
    Two,
    /// Membership-independent, memory trigger, memory controller.
    Three,
    /// Membership-dependent, memory trigger, memory controller.
    Four,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CasePreset {
    pub method: Method,
    pub varrho: Vec<f64>,
    pub e: Vec<f64>,
    pub f: f64,
}

/// Memory-trigger weights, newest first, for depth 4.
pub const MDETM_WEIGHTS: [f64; 4] = [0.84, 0.08, 0.07, 0.01];
/// E scalars of the memoryless-trigger memory controller.
pub const E_DETM: [f64; 4] = [0.01, 0.01, 0.01, 0.17];
/// E scalars of the memory-trigger designs.
pub const E_MDETM: [f64; 4] = [0.01, 0.01, 0.15, 0.3];

/// Truncates (or zero-pads) newest-first weights to `kappa` and renormalizes.
pub fn truncate_weights(w: &[f64], kappa: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..kappa).map(|i| w.get(i).copied().unwrap_or(0.0)).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

impl Case {
    pub const ALL: [Case; 4] = [Case::One, Case::Two, Case::Three, Case::Four];

    pub fn number(self) -> u8 {
        match self {
            Case::One => 1,
            Case::Two => 2,
            Case::Three => 3,
            Case::Four => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Case> {
        Case::ALL.get(usize::from(n).wrapping_sub(1)).copied()
    }

    /// Case 1 ignores `kappa` (always memoryless).
    pub fn preset(self, kappa: usize) -> CasePreset {
        match self {
            Case::One => CasePreset {
                method: Method::Mfi,
                varrho: vec![1.0],
                e: Vec::new(),
                f: 1.0,
            },
            Case::Two => CasePreset {
                method: Method::Mfi,
                varrho: detm_weights(kappa),
                e: E_DETM.to_vec(),
                f: 1.0,
            },
            Case::Three | Case::Four => CasePreset {
                method: if self == Case::Three { Method::Mfi } else { Method::Mfd },
                varrho: truncate_weights(&MDETM_WEIGHTS, kappa),
                e: E_MDETM.to_vec(),
                f: 1.0,
            },
        }
    }

    pub fn effective_kappa(self, kappa: usize) -> usize {
        if self == Case::One {
            1
        } else {
            kappa
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bundled_example_parses() {
        let c = fixtures::example1_config();
        assert_eq!(c.plant.rules.len(), 3);
        assert_eq!(c.kappa(), 1);
        assert_eq!(c.sim.horizon, 100);
        let again = ToolkitConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    fn expect_path(text: &str, path: &str) {
        match ToolkitConfig::from_toml_str(text) {
            Err(ConfigError::Invalid { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected error at {path}, got {other:?}"),
        }
    }

    #[test]
    fn zero_kappa_is_rejected() {
        let text = fixtures::EXAMPLE1_TOML.replace("kappa = 1", "kappa = 0");
        expect_path(&text, "trigger.kappa");
    }

    #[test]
    fn bad_ranges_carry_paths() {
        expect_path(&fixtures::EXAMPLE1_TOML.replace("alpha_f = 1.0", "alpha_f = 1.5"), "failure.alpha_f");
        expect_path(&fixtures::EXAMPLE1_TOML.replace("hslash = 0.3", "hslash = 1.3"), "design.hslash");
        expect_path(
            &fixtures::EXAMPLE1_TOML.replace("kappa = 1", "kappa = 2\nvarrho = [0.4, 0.6]"),
            "trigger",
        );
    }

    #[test]
    fn e_resizing() {
        assert_eq!(e_scalars(&[0.01, 0.02, 0.3], 3), vec![0.01, 0.02]);
        assert_eq!(e_scalars(&[0.01, 0.3], 5), vec![0.01, 0.3, 0.3, 0.3]);
        assert!(e_scalars(&[0.2], 1).is_empty());
    }

    #[test]
    fn case_presets() {
        let p = Case::Three.preset(2);
        assert!((p.varrho[0] - 0.84 / 0.92).abs() < 1e-15);
        assert!((p.varrho.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(Case::Two.preset(3).varrho, vec![1.0, 0.0, 0.0]);
        assert_eq!(Case::from_number(4), Some(Case::Four));
        assert_eq!(Case::from_number(0), None);
        let c = fixtures::example1_config().with_case(Case::Four, 3).unwrap();
        assert_eq!(c.design.method, Method::Mfd);
        assert_eq!(c.e_scalars(), vec![0.01, 0.01]);
    }
}
