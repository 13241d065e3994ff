//! Closed-loop simulation and evaluation metrics.
//!
//! Per sample the loop reads `y(t)`, runs the trigger test, fades and
//! transmits a packet on release, computes the control from the held
//! packet, applies the actuator failure and steps the plant.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{fade_packet, ChannelError, FadingConfig};
use crate::controller::{apply_failure, ControllerError, ControllerGains, FailureConfig};
use crate::expr::{Expr, ExprError};
use crate::model::{IT2Plant, ModelError};
use crate::trigger::{TriggerConfig, TriggerError, TriggerState};

/// State norm above which a run is declared divergent.
pub const OVERFLOW_NORM: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("state norm {norm:e} at t = {t} exceeds {OVERFLOW_NORM:e}; the loop is likely unstable")]
    Overflow { t: usize, norm: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("disturbance: {0}")]
    Disturbance(#[from] ExprError),
    #[error("zero disturbance energy")]
    ZeroDisturbance,
    #[error("ensemble has {0} runs, at least 10 are needed")]
    EnsembleTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct ClosedLoopScenario {
    pub plant: IT2Plant,
    pub controller: ControllerGains,
    pub trigger: TriggerConfig,
    pub fading: FadingConfig,
    pub failure: FailureConfig,
    /// `d(t)`, a function of `t` only.
    pub disturbance: Expr,
    pub x0: DVector<f64>,
    pub horizon: usize,
    /// Selects the fading stream `fading.stream(seed)`.
    pub seed: u64,
}

impl ClosedLoopScenario {
    pub fn check(&self) -> Result<(), SimError> {
        let d = self.plant.dims;
        let bad = |m: String| Err(SimError::Invalid(m));
        self.controller.check()?;
        self.trigger.check()?;
        self.fading.check()?;
        if self.trigger.kappa() != self.controller.kappa() {
            return bad(format!(
                "trigger depth {} differs from controller depth {}",
                self.trigger.kappa(),
                self.controller.kappa()
            ));
        }
        if self.controller.nu() != d.nu || self.controller.ny() != d.ny {
            return bad(format!(
                "gains are {}x{} but the plant has nu = {}, ny = {}",
                self.controller.nu(),
                self.controller.ny(),
                d.nu,
                d.ny
            ));
        }
        if self.trigger.omega.nrows() != d.ny {
            return bad(format!("trigger Omega is {0}x{0}, expected ny = {1}", self.trigger.omega.nrows(), d.ny));
        }
        if self.x0.len() != d.nx {
            return bad(format!("x0 has {} entries, expected {}", self.x0.len(), d.nx));
        }
        if d.nd != 1 {
            return bad(format!("scalar disturbance expression needs nd = 1, plant has {}", d.nd));
        }
        if let Some(v) = self.disturbance.variables().into_iter().find(|v| v != "t") {
            return bad(format!("disturbance may only use `t`, found `{v}`"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ClosedLoopScenario { seed, ..self.clone() }
    }

    pub fn disturbance_at(&self, t: usize) -> Result<f64, SimError> {
        Ok(self.disturbance.eval(&[("t", t as f64)])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Newest entry of the held (faded) packet.
    pub y_trig: Vec<f64>,
    pub u: Vec<f64>,
    pub uf: Vec<f64>,
    pub z: Vec<f64>,
    pub d: Vec<f64>,
    /// `varpi(t)` before the update.
    pub varpi: f64,
    pub triggered: bool,
    /// Fading coefficient drawn at a release.
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// `varpi` after the last sample.
    pub varpi_final: f64,
}

impl SimTrace {
    pub fn min_varpi(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.varpi)
            .chain(std::iter::once(self.varpi_final))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_state_norm(&self) -> f64 {
        self.steps.iter().map(|s| norm(&s.x)).fold(0.0, f64::max)
    }

    pub fn triggers(&self) -> usize {
        self.steps.iter().filter(|s| s.triggered).count()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Simulates samples `t = 0 ..= horizon`.
pub fn run(scenario: &ClosedLoopScenario) -> Result<SimTrace, SimError> {
    scenario.check()?;
    let plant = &scenario.plant;
    let sampler = scenario.fading.sampler()?;
    let mut rng = scenario.fading.stream(scenario.seed);
    let mut x = scenario.x0.clone();
    let y0 = plant.output_matrix(&plant.memberships_at(&x)?.weights) * &x;
    let mut trig = TriggerState::new(&scenario.trigger, &y0);
    let mut held: Vec<DVector<f64>> = Vec::new();
    let mut steps = Vec::with_capacity(scenario.horizon + 1);

    for t in 0..=scenario.horizon {
        let weights = plant.memberships_at(&x)?.weights;
        let y = plant.output_matrix(&weights) * &x;
        let varpi = trig.varpi;
        let decision = trig.check_and_update(&scenario.trigger, &y)?;
        let xi = match &decision.packet {
            Some(packet) => {
                let xi = sampler.sample(&mut rng);
                held = fade_packet(xi, packet);
                Some(xi)
            }
            None => None,
        };
        let u = scenario.controller.compute_control(&held)?.u;
        let uf = apply_failure(&u, &scenario.failure);
        let d = DVector::from_element(1, scenario.disturbance_at(t)?);
        let step = plant.step(&x, &uf, &d)?;
        steps.push(StepRecord {
            t,
            x: to_vec(&x),
            y: to_vec(&y),
            y_trig: to_vec(&held[0]),
            u: to_vec(&u),
            uf: to_vec(&uf),
            z: to_vec(&step.z),
            d: to_vec(&d),
            varpi,
            triggered: decision.triggered,
            xi,
        });
        let n = step.x_next.norm();
        if !(n <= OVERFLOW_NORM) {
            return Err(SimError::Overflow { t: t + 1, norm: n });
        }
        x = step.x_next;
    }
    Ok(SimTrace {
        seed: scenario.seed,
        steps,
        varpi_final: trig.varpi,
    })
}

/// Runs the scenario once per seed in parallel; results keep seed order.
pub fn run_ensemble(scenario: &ClosedLoopScenario, seeds: &[u64]) -> Vec<Result<SimTrace, SimError>> {
    seeds.par_iter().map(|s| run(&scenario.with_seed(*s))).collect()
}

/// Released samples over all samples.
pub fn triggering_rate(trace: &SimTrace) -> f64 {
    if trace.steps.is_empty() {
        return 0.0;
    }
    trace.triggers() as f64 / trace.steps.len() as f64
}

/// `sqrt(sum ||z||^2 / sum ||d||^2)`
pub fn empirical_hinf(trace: &SimTrace) -> Result<f64, SimError> {
    let energy = |f: fn(&StepRecord) -> &Vec<f64>| -> f64 {
        trace.steps.iter().map(|s| f(s).iter().map(|v| v * v).sum::<f64>()).sum()
    };
    let dd = energy(|s| &s.d);
    if !(dd > 0.0) {
        return Err(SimError::ZeroDisturbance);
    }
    Ok((energy(|s| &s.z) / dd).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub runs: usize,
    /// `exp(slope)` of the least-squares line through `log E||x(t)||^2`.
    pub fitted_factor: f64,
    pub intercept: f64,
    /// Samples used by the fit.
    pub fitted_samples: usize,
    /// Declared per-step factor `1 - hslash`.
    pub envelope_factor: f64,
    /// Smallest `c` with `E||x(t)||^2 <= c (1 - hslash)^t` on the horizon.
    pub envelope_constant: f64,
    pub within_envelope: bool,
}

/// Mean squared state norm per sample across runs.
pub fn mean_square_norm(traces: &[SimTrace]) -> Vec<f64> {
    let len = traces.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            traces
                .iter()
                .map(|tr| tr.steps[k].x.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / traces.len() as f64
        })
        .collect()
}

/// Below this mean-square value samples are left out of the fit.
const FIT_FLOOR: f64 = 1e-250;

pub fn decay_envelope(traces: &[SimTrace], hslash: f64) -> Result<DecayFit, SimError> {
    if traces.len() < 10 {
        return Err(SimError::EnsembleTooSmall(traces.len()));
    }
    let ms = mean_square_norm(traces);
    let envelope_factor = 1.0 - hslash;
    let pts: Vec<(f64, f64)> = ms
        .iter()
        .enumerate()
        .take_while(|(_, v)| **v > FIT_FLOOR)
        .map(|(t, v)| (t as f64, v.ln()))
        .collect();
    let (slope, intercept) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let stt = pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
        let stv = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum::<f64>();
        let slope = stv / stt;
        (slope, mv - slope * mt)
    } else {
        // Identically zero (or a single sample): no decay to measure.
        (0.0, pts.first().map_or(f64::NEG_INFINITY, |p| p.1))
    };
    let fitted_factor = if pts.is_empty() { 0.0 } else { slope.exp() };
    let envelope_constant = ms
        .iter()
        .enumerate()
        .map(|(t, v)| v / envelope_factor.powi(t as i32))
        .fold(0.0, f64::max);
    Ok(DecayFit {
        runs: traces.len(),
        fitted_factor,
        intercept,
        fitted_samples: pts.len(),
        envelope_factor,
        envelope_constant,
        within_envelope: fitted_factor <= envelope_factor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    /// Mean triggering rate over the runs.
    pub tr: f64,
    /// Largest per-run ratio; `None` without disturbance energy.
    pub empirical_hinf: Option<f64>,
    pub decay_fit: Option<DecayFit>,
    pub max_state_norm: f64,
}

pub fn summarize(traces: &[SimTrace], decay: Option<DecayFit>) -> SimSummary {
    let n = traces.len().max(1) as f64;
    let hinf: Vec<f64> = traces.iter().filter_map(|t| empirical_hinf(t).ok()).collect();
    SimSummary {
        tr: traces.iter().map(triggering_rate).sum::<f64>() / n,
        empirical_hinf: if hinf.is_empty() {
            None
        } else {
            Some(hinf.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        },
        decay_fit: decay,
        max_state_norm: traces.iter().map(SimTrace::max_state_norm).fold(0.0, f64::max),
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// One row per sample: `t, x_*, y_*, y_trig_*, u_*, uf_*, z_*, d_*, varpi,
/// triggered, xi` (`xi` empty between releases).
pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = trace.steps.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", first.x.len()));
    header.extend(indexed("y", first.y.len()));
    header.extend(indexed("y_trig", first.y_trig.len()));
    header.extend(indexed("u", first.u.len()));
    header.extend(indexed("uf", first.uf.len()));
    header.extend(indexed("z", first.z.len()));
    header.extend(indexed("d", first.d.len()));
    header.extend(["varpi", "triggered", "xi"].map(String::from));
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![s.t.to_string()];
        for v in [&s.x, &s.y, &s.y_trig, &s.u, &s.uf, &s.z, &s.d] {
            row.extend(v.iter().map(|a| a.to_string()));
        }
        row.push(s.varpi.to_string());
        row.push(u8::from(s.triggered).to_string());
        row.push(s.xi.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Explicit augmented-matrix form of the loop, used as an oracle.
///
/// The stacked state `x~ = [x(t-kappa+1); ..; x(t)]` evolves as
/// `x~(t+1) = A~ x~ + B_e e~ + B_d d` where, with memberships frozen at `t`,
/// the newest block row carries `sum m_i A_i`, the history gains
/// `xi alpha_f sum m_i n_j m_k Bu_i K_j^(h) Cy_k` and the error gains
/// `-xi alpha_f sum m_i n_j Bu_i K_j^(h)`. It matches the component-wise
/// loop when the output maps `Cy_k` coincide, since past outputs are then
/// rule-independent.
pub fn run_augmented(scenario: &ClosedLoopScenario) -> Result<Vec<DVector<f64>>, SimError> {
    scenario.check()?;
    let plant = &scenario.plant;
    let dims = plant.dims;
    let (nx, ny) = (dims.nx, dims.ny);
    let kappa = scenario.trigger.kappa();
    let alpha = scenario.failure.alpha_f;
    let sampler = scenario.fading.sampler()?;
    let mut rng = scenario.fading.stream(scenario.seed);

    let mut xs = DVector::zeros(kappa * nx);
    for h in 0..kappa {
        xs.rows_mut(h * nx, nx).copy_from(&scenario.x0);
    }
    let cy0 = plant.output_matrix(&plant.memberships_at(&scenario.x0)?.weights);
    let mut trig = TriggerState::new(&scenario.trigger, &(&cy0 * &scenario.x0));
    let mut xi = 0.0;
    let mut released_raw: Vec<DVector<f64>> = Vec::new();
    let mut states = Vec::with_capacity(scenario.horizon + 2);
    states.push(scenario.x0.clone());

    // Slot h (newest first) of the stacked state.
    let slot = |v: &DVector<f64>, h: usize| v.rows((kappa - 1 - h) * nx, nx).into_owned();

    for t in 0..=scenario.horizon {
        let x_now = slot(&xs, 0);
        let m = plant.memberships_at(&x_now)?.weights;
        let cy = plant.output_matrix(&m);
        let decision = trig.check_and_update(&scenario.trigger, &(&cy * &x_now))?;
        if let Some(packet) = &decision.packet {
            xi = sampler.sample(&mut rng);
            released_raw = packet.clone();
        }
        let newest_faded = &released_raw[0] * xi;
        let n = scenario
            .controller
            .memberships
            .normalized(&scenario.controller.memberships.premise_values(&newest_faded))?
            .weights;

        // e_h = y(t-h+1) - y(t_k-h+1)
        let mut eps = DVector::zeros(kappa * ny);
        for h in 0..kappa {
            let e = &cy * slot(&xs, h) - &released_raw[h];
            eps.rows_mut((kappa - 1 - h) * ny, ny).copy_from(&e);
        }

        let mut a_t = DMatrix::zeros(kappa * nx, kappa * nx);
        let mut b_e = DMatrix::zeros(kappa * nx, kappa * ny);
        for r in 0..kappa - 1 {
            a_t.view_mut((r * nx, (r + 1) * nx), (nx, nx))
                .copy_from(&DMatrix::identity(nx, nx));
        }
        let row = (kappa - 1) * nx;
        let mut b_d = DMatrix::zeros(kappa * nx, dims.nd);
        for (i, ri) in plant.rules.iter().enumerate() {
            if m[i] == 0.0 {
                continue;
            }
            let mut a_blk = a_t.view_mut((row, row), (nx, nx));
            a_blk += &ri.a * m[i];
            let mut d_blk = b_d.view_mut((row, 0), (nx, dims.nd));
            d_blk += &ri.bd * m[i];
            for (j, gains) in scenario.controller.gains.iter().enumerate() {
                let w_ij = m[i] * n[j];
                if w_ij == 0.0 {
                    continue;
                }
                for (h, k) in gains.iter().enumerate() {
                    let gb = &ri.bu * k * (alpha * xi * w_ij);
                    let col = (kappa - 1 - h) * nx;
                    for (kk, rk) in plant.rules.iter().enumerate() {
                        if m[kk] == 0.0 {
                            continue;
                        }
                        let mut blk = a_t.view_mut((row, col), (nx, nx));
                        blk += &gb * &rk.cy * m[kk];
                    }
                    let mut eblk = b_e.view_mut((row, (kappa - 1 - h) * ny), (nx, ny));
                    eblk -= &gb;
                }
            }
        }
        let d = DVector::from_element(1, scenario.disturbance_at(t)?);
        xs = &a_t * &xs + &b_e * &eps + &b_d * &d;
        let x_next = slot(&xs, 0);
        if !(x_next.norm() <= OVERFLOW_NORM) {
            return Err(SimError::Overflow { t: t + 1, norm: x_next.norm() });
        }
        states.push(x_next);
    }
    Ok(states)
}
