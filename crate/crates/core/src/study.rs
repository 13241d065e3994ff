//! Orchestration shared by the command-line tool and the acceptance suite:
//! design files, closed-loop scenarios built from a design, and sweeps over
//! cases and memory depths.

use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Case, ConfigError, ToolkitConfig};
use crate::expr::Expr;
use crate::sim::{self, ClosedLoopScenario, DecayFit, SimError, SimSummary, SimTrace};
use crate::synth::{self, DesignResult, DesignStatus, SdpBackend, SynthError};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("design has no controller ({0})")]
    NoController(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// A design together with the exact configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub config: ToolkitConfig,
    pub result: DesignResult,
}

impl DesignFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design files serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file = Self::from_json(&text).map_err(|e| StudyError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        file.config.validate()?;
        Ok(file)
    }

    /// Closed loop driven by the configured disturbance from `sim.x0`
    /// (zero when unset).
    pub fn scenario(&self) -> Result<ClosedLoopScenario, StudyError> {
        let controller = self
            .result
            .controller()
            .ok_or_else(|| StudyError::NoController(format!("status {:?}", self.result.status)))?;
        let omega = self
            .result
            .certificates
            .as_ref()
            .map(|c| c.omega.clone())
            .ok_or_else(|| StudyError::NoController("no certificates".into()))?;
        let plant = self.config.plant()?;
        let x0 = match &self.config.sim.x0 {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(plant.dims.nx),
        };
        Ok(ClosedLoopScenario {
            plant,
            controller,
            trigger: self.config.trigger_config(omega),
            fading: self.config.fading(),
            failure: self.config.failure,
            disturbance: self.config.sim.disturbance.clone(),
            x0,
            horizon: self.config.sim.horizon,
            seed: 0,
        })
    }

    /// Disturbance-free loop from `sim.decay_x0`.
    pub fn decay_scenario(&self) -> Result<Option<ClosedLoopScenario>, StudyError> {
        let Some(x0) = &self.config.sim.decay_x0 else {
            return Ok(None);
        };
        let mut sc = self.scenario()?;
        sc.x0 = DVector::from_column_slice(x0);
        sc.disturbance = Expr::num(0.0);
        Ok(Some(sc))
    }
}

/// Designs from `config`, searching `design.theta_grid` when present. The
/// returned config carries the `theta` actually used.
pub fn design(config: &ToolkitConfig, backend: &dyn SdpBackend) -> Result<DesignFile, StudyError> {
    config.validate()?;
    let problem = config.design_problem()?;
    let mut config = config.clone();
    let result = match &config.design.theta_grid {
        None => problem.solve(backend)?,
        Some(grid) => {
            let search = synth::theta_search(&problem, grid, backend)?;
            let mut best = search.best;
            config.design.theta = best.givens.theta;
            let curve: Vec<String> = search
                .curve
                .iter()
                .map(|(t, g)| format!("{t}:{}", g.map_or("NA".into(), |g| g.to_string())))
                .collect();
            best.messages.push(format!("theta search {}", curve.join(" ")));
            best
        }
    };
    Ok(DesignFile { config, result })
}

/// Designs one case at one memory depth.
pub fn design_case(
    base: &ToolkitConfig,
    case: Case,
    kappa: usize,
    backend: &dyn SdpBackend,
) -> Result<DesignFile, StudyError> {
    design(&base.with_case(case, case.effective_kappa(kappa))?, backend)
}

/// Runs `seeds` consecutive fading streams starting at `first_seed`.
pub fn ensemble(
    scenario: &ClosedLoopScenario,
    first_seed: u64,
    seeds: usize,
) -> Result<Vec<SimTrace>, SimError> {
    let ids: Vec<u64> = (0..seeds as u64).map(|i| first_seed + i).collect();
    sim::run_ensemble(scenario, &ids).into_iter().collect()
}

/// Disturbance ensemble plus, when configured and large enough, the decay
/// fit of a disturbance-free ensemble.
pub fn evaluate(
    design: &DesignFile,
    first_seed: u64,
    seeds: usize,
) -> Result<(Vec<SimTrace>, SimSummary), StudyError> {
    let traces = ensemble(&design.scenario()?, first_seed, seeds)?;
    let decay: Option<DecayFit> = match design.decay_scenario()? {
        Some(sc) if seeds >= 10 => {
            let runs = ensemble(&sc, first_seed, seeds)?;
            Some(sim::decay_envelope(&runs, design.config.design.hslash)?)
        }
        _ => None,
    };
    let summary = sim::summarize(&traces, decay);
    Ok((traces, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub case: u8,
    pub kappa: usize,
    pub status: Option<DesignStatus>,
    pub gamma: Option<f64>,
    /// Mean triggering rate over the ensemble.
    pub tr: Option<f64>,
    pub seconds: f64,
    pub note: String,
}

/// Designs (and optionally simulates) every `(case, kappa)` cell. Failures
/// are recorded in the cell rather than aborting the sweep.
pub fn sweep(
    base: &ToolkitConfig,
    cases: &[Case],
    kappas: &[usize],
    backend: &dyn SdpBackend,
    seeds: usize,
) -> Vec<SweepCell> {
    let cells: Vec<(Case, usize)> = cases
        .iter()
        .flat_map(|c| kappas.iter().map(move |k| (*c, *k)))
        .collect();
    cells
        .par_iter()
        .map(|(case, kappa)| sweep_cell(base, *case, *kappa, backend, seeds))
        .collect()
}

fn sweep_cell(base: &ToolkitConfig, case: Case, kappa: usize, backend: &dyn SdpBackend, seeds: usize) -> SweepCell {
    let start = std::time::Instant::now();
    let mut cell = SweepCell {
        case: case.number(),
        kappa,
        status: None,
        gamma: None,
        tr: None,
        seconds: 0.0,
        note: String::new(),
    };
    match design_case(base, case, kappa, backend) {
        Ok(d) => {
            cell.status = Some(d.result.status);
            cell.gamma = d.result.gamma.filter(|_| d.result.is_optimal());
            if !d.result.is_optimal() {
                cell.note = d.result.messages.join("; ");
            } else if seeds > 0 {
                match d.scenario().map_err(|e| e.to_string()).and_then(|sc| {
                    ensemble(&sc, base.seed, seeds).map_err(|e| e.to_string())
                }) {
                    Ok(traces) => {
                        cell.tr = Some(traces.iter().map(sim::triggering_rate).sum::<f64>() / traces.len() as f64)
                    }
                    Err(e) => cell.note = e,
                }
            }
        }
        Err(e) => cell.note = e.to_string(),
    }
    cell.seconds = start.elapsed().as_secs_f64();
    cell
}

/// Rows are cases, columns are memory depths; missing values print as `NA`.
pub fn sweep_table(cells: &[SweepCell], value: impl Fn(&SweepCell) -> Option<f64>) -> String {
    let mut cases: Vec<u8> = cells.iter().map(|c| c.case).collect();
    cases.dedup();
    cases.sort_unstable();
    cases.dedup();
    let mut kappas: Vec<usize> = cells.iter().map(|c| c.kappa).collect();
    kappas.sort_unstable();
    kappas.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["case".to_string()];
    header.extend(kappas.iter().map(|k| format!("kappa_{k}")));
    w.write_record(&header).expect("in-memory write");
    for case in cases {
        let mut row = vec![case.to_string()];
        for k in &kappas {
            let v = cells
                .iter()
                .find(|c| c.case == case && c.kappa == *k)
                .and_then(&value);
            row.push(v.map_or_else(|| "NA".to_string(), |v| v.to_string()));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
