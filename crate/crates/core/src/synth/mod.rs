//! Solving the synthesis programs and recovering controller gains.

pub mod barrier;
pub mod clarabel;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::barrier::BarrierBackend;
pub use self::clarabel::ClarabelBackend;
use crate::controller::ControllerGains;
use crate::linalg;
use crate::lmi::{
    assemble_theorem1, assemble_theorem2, compute_fou_bounds, verify_design, Certificates,
    DesignVars, LmiError, LmiProgram, ProgramStats, SlackVars, SynthesisGivens,
    VerificationReport,
};
use crate::model::{IT2Plant, MembershipSpec};

pub const BACKEND_ENV: &str = "IT2MOF_BACKEND";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    /// Shift used to turn strict inequalities into closed-cone constraints.
    pub margin: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
            margin: 1e-9,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub detail: String,
    /// Constraints carrying a nonzero part of an infeasibility certificate.
    pub binding_constraints: Option<usize>,
    pub seconds: f64,
}

impl SolveOutcome {
    pub fn failure(detail: String, elapsed: Duration) -> Self {
        SolveOutcome {
            status: SolveStatus::NumericalFailure,
            x: Vec::new(),
            objective: f64::NAN,
            iterations: 0,
            detail,
            binding_constraints: None,
            seconds: elapsed.as_secs_f64(),
        }
    }
}

/// A semidefinite programming backend: minimizes the linear objective of an
/// `LmiProgram` subject to all of its matrix inequalities.
pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &LmiProgram) -> SolveOutcome;
}

/// Backend named by `IT2MOF_BACKEND` (`clarabel`, the default, or `barrier`).
pub fn backend_from_env(settings: SolverSettings) -> Result<Box<dyn SdpBackend>, SynthError> {
    match std::env::var(BACKEND_ENV) {
        Ok(name) => backend_by_name(&name, settings),
        Err(_) => backend_by_name("auto", settings),
    }
}

pub fn backend_by_name(name: &str, settings: SolverSettings) -> Result<Box<dyn SdpBackend>, SynthError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "" | "auto" => Ok(Box::new(FallbackBackend {
            primary: Box::new(ClarabelBackend::new(settings)),
            secondary: Box::new(BarrierBackend::new(settings)),
        })),
        "clarabel" => Ok(Box::new(ClarabelBackend::new(settings))),
        "barrier" => Ok(Box::new(BarrierBackend::new(settings))),
        other => Err(SynthError::UnknownBackend(other.to_string())),
    }
}

/// Runs `secondary` when `primary` stops on a numerical failure.
pub struct FallbackBackend {
    pub primary: Box<dyn SdpBackend>,
    pub secondary: Box<dyn SdpBackend>,
}

impl SdpBackend for FallbackBackend {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve(&self, program: &LmiProgram) -> SolveOutcome {
        let first = self.primary.solve(program);
        if first.status != SolveStatus::NumericalFailure {
            return first;
        }
        log::info!(
            "{} stopped with {}; retrying with {}",
            self.primary.name(),
            first.detail,
            self.secondary.name()
        );
        let mut second = self.secondary.solve(program);
        second.detail = format!(
            "{}: {}; {}: {}",
            self.primary.name(),
            first.detail,
            self.secondary.name(),
            second.detail
        );
        second.iterations += first.iterations;
        second.seconds += first.seconds;
        second
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error("zeta[{rule}] is singular (condition number {condition:e})")]
    Singular { rule: usize, condition: f64 },
    #[error("unknown SDP backend `{0}` (expected auto, clarabel or barrier)")]
    UnknownBackend(String),
    #[error("theta grid is empty or has a non-positive entry")]
    BadGrid,
    #[error("every theta grid point failed")]
    AllFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl From<SolveStatus> for DesignStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => DesignStatus::Optimal,
            SolveStatus::Infeasible => DesignStatus::Infeasible,
            SolveStatus::NumericalFailure => DesignStatus::NumericalFailure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mfi,
    Mfd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub p: usize,
    pub q: usize,
    pub wp: usize,
    pub row_cap: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            p: 20,
            q: 20,
            wp: 1,
            row_cap: crate::lmi::DEFAULT_ROW_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub p: usize,
    pub q: usize,
    pub wp: usize,
    /// Distinct corner inequalities after merging shared grid points.
    pub corner_inequalities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackValues {
    #[serde(with = "linalg::rows")]
    pub w: DMatrix<f64>,
    #[serde(with = "linalg::rows_vec")]
    pub m: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assemble_s: f64,
    pub solve_s: f64,
    pub verify_s: f64,
}

/// Outcome of one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub status: DesignStatus,
    pub method: Method,
    pub kappa: usize,
    pub gamma: Option<f64>,
    pub gamma_bar: Option<f64>,
    /// `gains[j][h - 1] = K_j^(h)`
    #[serde(with = "linalg::rows_nested")]
    pub gains: Vec<Vec<DMatrix<f64>>>,
    pub zeta_condition: Vec<f64>,
    pub certificates: Option<Certificates>,
    pub slacks: Option<SlackValues>,
    pub controller_memberships: MembershipSpec,
    pub givens: SynthesisGivens,
    pub partition: Option<PartitionSummary>,
    pub backend: String,
    pub solver_detail: String,
    pub iterations: u32,
    pub binding_constraints: Option<usize>,
    pub stats: ProgramStats,
    pub timings: Timings,
    pub verification: Option<VerificationReport>,
    #[serde(default)]
    pub messages: Vec<String>,
}

impl DesignResult {
    pub fn controller(&self) -> Option<ControllerGains> {
        if self.gains.is_empty() {
            return None;
        }
        ControllerGains::new(self.gains.clone(), self.controller_memberships.clone()).ok()
    }

    pub fn is_optimal(&self) -> bool {
        self.status == DesignStatus::Optimal
    }
}

/// `K_j^(h) = zeta_j^{-1} eta_j^(h)`; also returns the condition number of
/// each `zeta_j`.
pub fn recover_gains(
    zeta: &[DMatrix<f64>],
    eta: &[Vec<DMatrix<f64>>],
) -> Result<(Vec<Vec<DMatrix<f64>>>, Vec<f64>), SynthError> {
    let mut gains = Vec::with_capacity(zeta.len());
    let mut conds = Vec::with_capacity(zeta.len());
    for (j, (z, row)) in zeta.iter().zip(eta).enumerate() {
        let cond = linalg::condition_number(z);
        let lu = z.clone().lu();
        if !cond.is_finite() || cond > 1e14 {
            return Err(SynthError::Singular {
                rule: j,
                condition: cond,
            });
        }
        let mut ks = Vec::with_capacity(row.len());
        for e in row {
            let k = lu.solve(e).ok_or(SynthError::Singular {
                rule: j,
                condition: cond,
            })?;
            ks.push(k);
        }
        gains.push(ks);
        conds.push(cond);
    }
    Ok((gains, conds))
}

/// Inputs of one synthesis run.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub plant: IT2Plant,
    pub controller: MembershipSpec,
    pub givens: SynthesisGivens,
    pub method: Method,
    pub partition: PartitionSpec,
    pub verify_samples: usize,
    pub verify_seed: u64,
}

pub enum Assembled {
    Mfi(LmiProgram, DesignVars),
    Mfd(LmiProgram, DesignVars, SlackVars, PartitionSummary),
}

impl DesignProblem {
    pub fn assemble(&self) -> Result<Assembled, SynthError> {
        let qr = self.controller.rule_count();
        Ok(match self.method {
            Method::Mfi => {
                let (p, v) = assemble_theorem1(&self.plant, qr, &self.givens)?;
                Assembled::Mfi(p, v)
            }
            Method::Mfd => {
                let ps = self.partition;
                let part = compute_fou_bounds(&self.plant.memberships, &self.controller, ps.p, ps.q, ps.wp)?;
                let (p, v, s) = assemble_theorem2(&self.plant, qr, &self.givens, &part, ps.row_cap)?;
                let summary = PartitionSummary {
                    p: ps.p,
                    q: ps.q,
                    wp: ps.wp,
                    corner_inequalities: part.distinct_corners().len(),
                };
                Assembled::Mfd(p, v, s, summary)
            }
        })
    }

    /// Assembles and solves.
    pub fn solve(&self, backend: &dyn SdpBackend) -> Result<DesignResult, SynthError> {
        let t0 = Instant::now();
        let assembled = self.assemble()?;
        let assemble_s = t0.elapsed().as_secs_f64();
        let mut r = match &assembled {
            Assembled::Mfi(p, v) => minimize_gamma(p, v, None, self, backend),
            Assembled::Mfd(p, v, s, _) => minimize_gamma(p, v, Some(s), self, backend),
        };
        if let Assembled::Mfd(.., summary) = assembled {
            r.partition = Some(summary);
        }
        r.timings.assemble_s = assemble_s;
        Ok(r)
    }
}

/// Solves an assembled program, recovers gains and attaches the numerical
/// verification report.
pub fn minimize_gamma(
    program: &LmiProgram,
    vars: &DesignVars,
    slacks: Option<&SlackVars>,
    problem: &DesignProblem,
    backend: &dyn SdpBackend,
) -> DesignResult {
    let outcome = backend.solve(program);
    let mut result = DesignResult {
        status: outcome.status.into(),
        method: problem.method,
        kappa: problem.givens.kappa(),
        gamma: None,
        gamma_bar: None,
        gains: Vec::new(),
        zeta_condition: Vec::new(),
        certificates: None,
        slacks: None,
        controller_memberships: problem.controller.clone(),
        givens: problem.givens.clone(),
        partition: None,
        backend: backend.name().to_string(),
        solver_detail: outcome.detail.clone(),
        iterations: outcome.iterations,
        binding_constraints: outcome.binding_constraints,
        stats: program.stats(),
        timings: Timings {
            solve_s: outcome.seconds,
            ..Timings::default()
        },
        verification: None,
        messages: Vec::new(),
    };
    match outcome.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            result.messages.push(format!(
                "program infeasible; {} constraints carry the certificate",
                outcome
                    .binding_constraints
                    .map_or_else(|| "an unknown number of".to_string(), |c| c.to_string())
            ));
            return result;
        }
        SolveStatus::NumericalFailure => {
            result.messages.push(format!(
                "solver stopped without a certified optimum ({}); try a theta grid search or a smaller hslash",
                outcome.detail
            ));
            return result;
        }
    }
    let x = &outcome.x;
    let cert = Certificates::extract(program, vars, &problem.givens, x);
    result.gamma_bar = Some(cert.gamma_bar);
    result.gamma = Some(cert.gamma_bar.max(0.0).sqrt());
    if let Some(s) = slacks {
        result.slacks = Some(SlackValues {
            w: program.vars.value(s.w, x),
            m: s.m.iter().map(|id| program.vars.value(*id, x)).collect(),
        });
    }
    match recover_gains(&cert.zeta, &cert.eta) {
        Ok((g, c)) => {
            result.gains = g;
            result.zeta_condition = c;
        }
        Err(e) => {
            result.status = DesignStatus::NumericalFailure;
            result.messages.push(e.to_string());
        }
    }
    let t = Instant::now();
    if !result.gains.is_empty() && problem.verify_samples > 0 {
        match verify_design(
            &cert,
            &result.gains,
            &problem.plant,
            &problem.controller,
            &problem.givens,
            problem.verify_samples,
            problem.verify_seed,
        ) {
            Ok(rep) => {
                if !rep.passed {
                    result.messages.extend(rep.messages.iter().cloned());
                }
                result.verification = Some(rep);
            }
            Err(e) => result.messages.push(format!("verification failed: {e}")),
        }
    }
    result.timings.verify_s = t.elapsed().as_secs_f64();
    result.certificates = Some(cert);
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    Increasing,
    Flat,
}

/// Maximal run of consecutive grid points with one trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSegment {
    pub from_theta: f64,
    pub to_theta: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSearch {
    pub best: DesignResult,
    /// `(theta, gamma)` with `None` for failed points.
    pub curve: Vec<(f64, Option<f64>)>,
    pub segments: Vec<MonotoneSegment>,
}

/// Logarithmic grid `10^-2 .. 10^2` with `per_decade` points per decade.
pub fn log_grid(per_decade: usize) -> Vec<f64> {
    let n = 4 * per_decade;
    (0..=n)
        .map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / n as f64))
        .collect()
}

pub fn monotone_segments(curve: &[(f64, Option<f64>)]) -> Vec<MonotoneSegment> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|(t, g)| g.map(|g| (*t, g)))
        .collect();
    let mut out: Vec<MonotoneSegment> = Vec::new();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let rel = (b.1 - a.1) / a.1.abs().max(1e-12);
        let trend = if rel.abs() <= 1e-6 {
            Trend::Flat
        } else if rel < 0.0 {
            Trend::Decreasing
        } else {
            Trend::Increasing
        };
        match out.last_mut() {
            Some(s) if s.trend == trend => s.to_theta = b.0,
            _ => out.push(MonotoneSegment {
                from_theta: a.0,
                to_theta: b.0,
                trend,
            }),
        }
    }
    out
}

/// Solves at every grid value of `theta` and keeps the smallest `gamma`.
pub fn theta_search(
    problem: &DesignProblem,
    grid: &[f64],
    backend: &dyn SdpBackend,
) -> Result<ThetaSearch, SynthError> {
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0)) {
        return Err(SynthError::BadGrid);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let results: Vec<(f64, Result<DesignResult, SynthError>)> = sorted
        .par_iter()
        .map(|t| {
            let mut p = problem.clone();
            p.givens.theta = *t;
            (*t, p.solve(backend))
        })
        .collect();
    let curve: Vec<(f64, Option<f64>)> = results
        .iter()
        .map(|(t, r)| {
            let g = r.as_ref().ok().filter(|r| r.is_optimal()).and_then(|r| r.gamma);
            (*t, g)
        })
        .collect();
    let segments = monotone_segments(&curve);
    let best = results
        .into_iter()
        .filter_map(|(_, r)| r.ok())
        .filter(|r| r.is_optimal() && r.gamma.is_some())
        .min_by(|a, b| a.gamma.unwrap().total_cmp(&b.gamma.unwrap()))
        .ok_or(SynthError::AllFailed)?;
    Ok(ThetaSearch {
        best,
        curve,
        segments,
    })
}
