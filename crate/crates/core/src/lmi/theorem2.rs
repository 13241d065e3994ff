//! Membership-function-dependent conditions on a partitioned premise space.
//!
//! Each plant premise is split into `p` intervals and each controller
//! premise into `q`. At every cell corner the normalized memberships are
//! bounded from below and above, and the triple products give the scalars
//! `o_lo <= m_i n_j m_k <= o_up` used in the corner inequalities
//!
//! ```text
//! sum_ijk (o_lo Psi_ijk + (o_up - o_lo) M_ijkl + o_lo W) - W < 0
//! Psi_ijk - M_ijkl + W < 0,     M_ijkl >= 0
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::affine::AffineMatrix;
use super::program::{LmiProgram, MatrixInequality, Sense};
use super::theorem1::{assemble_all_psi, psi_dim, psi_name, DesignVars, LmiError, SynthesisGivens};
use super::vars::{Sign, VarId, VarKind};
use crate::model::{IT2Plant, MembershipSpec};

pub const DEFAULT_ROW_CAP: usize = 100_000;

/// Bound scalars at one cell corner and sub-FOU slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerBound {
    /// Interval index per plant premise, then per controller premise.
    pub cell: Vec<usize>,
    /// `false` = lower end, `true` = upper end, in the same order as `cell`.
    pub corner: Vec<bool>,
    pub slice: usize,
    /// Indexed by `(i * q_rules + j) * p_rules + k`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FouPartition {
    pub p: usize,
    pub q: usize,
    pub wp: usize,
    pub plant_rules: usize,
    pub controller_rules: usize,
    pub corners: Vec<CornerBound>,
}

impl FouPartition {
    pub fn triple_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.controller_rules + j) * self.plant_rules + k
    }

    pub fn triples(&self) -> usize {
        self.plant_rules * self.controller_rules * self.plant_rules
    }

    /// Indices of the first corner at every distinct grid point and slice.
    /// Neighbouring cells share corners, which yield identical inequalities.
    pub fn distinct_corners(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        self.corners
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let point: Vec<usize> = c.cell.iter().zip(&c.corner).map(|(a, b)| a + *b as usize).collect();
                seen.insert((point, c.slice))
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Every corner carries the same bounds: useful for degenerate checks.
    pub fn uniform(plant_rules: usize, controller_rules: usize, lower: f64, upper: f64) -> Self {
        let n = plant_rules * controller_rules * plant_rules;
        FouPartition {
            p: 1,
            q: 1,
            wp: 1,
            plant_rules,
            controller_rules,
            corners: vec![CornerBound {
                cell: vec![],
                corner: vec![],
                slice: 0,
                lower: vec![lower; n],
                upper: vec![upper; n],
            }],
        }
    }
}

fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Odometer over a mixed-radix index.
fn advance(idx: &mut [usize], radix: &[usize]) -> bool {
    for (d, r) in idx.iter_mut().zip(radix) {
        *d += 1;
        if *d < *r {
            return true;
        }
        *d = 0;
    }
    false
}

pub fn compute_fou_bounds(
    plant: &MembershipSpec,
    controller: &MembershipSpec,
    p: usize,
    q: usize,
    wp: usize,
) -> Result<FouPartition, LmiError> {
    if p == 0 || q == 0 || wp == 0 {
        return Err(LmiError::Invalid("partition counts p, q, wp must be at least 1".into()));
    }
    let (pr, qr) = (plant.rule_count(), controller.rule_count());
    let npx = plant.premises.len();
    let npy = controller.premises.len();
    let grids: Vec<Vec<f64>> = plant
        .premises
        .iter()
        .map(|pm| edges(pm.lo, pm.hi, p))
        .chain(controller.premises.iter().map(|pm| edges(pm.lo, pm.hi, q)))
        .collect();
    let mut radix = vec![p; npx];
    radix.extend(std::iter::repeat(q).take(npy));
    let dims = npx + npy;

    let mut cells = Vec::new();
    let mut cell = vec![0usize; dims];
    loop {
        cells.push(cell.clone());
        if dims == 0 || !advance(&mut cell, &radix) {
            break;
        }
    }

    let err = |e: crate::model::ModelError| LmiError::Membership(e.to_string());
    let mut corners = Vec::with_capacity(cells.len() << dims);
    for cell in &cells {
        for mask in 0..(1usize << dims) {
            let corner: Vec<bool> = (0..dims).map(|d| mask >> d & 1 == 1).collect();
            let point: Vec<f64> = (0..dims)
                .map(|d| grids[d][cell[d] + corner[d] as usize])
                .collect();
            let bm = plant.normalized_bounds(&point[..npx]).map_err(err)?;
            let bn = controller.normalized_bounds(&point[npx..]).map_err(err)?;
            let mut lower = Vec::with_capacity(pr * qr * pr);
            let mut upper = Vec::with_capacity(pr * qr * pr);
            for i in 0..pr {
                for j in 0..qr {
                    for k in 0..pr {
                        let lo = bm[i].0 * bn[j].0 * bm[k].0;
                        let up = bm[i].1 * bn[j].1 * bm[k].1;
                        if !(lo.is_finite() && up.is_finite()) {
                            return Err(LmiError::Membership(format!(
                                "non-finite bound at corner {point:?}"
                            )));
                        }
                        lower.push(lo.clamp(0.0, 1.0));
                        upper.push(up.clamp(0.0, 1.0));
                    }
                }
            }
            for slice in 0..wp {
                let (a, b) = (slice as f64 / wp as f64, (slice + 1) as f64 / wp as f64);
                corners.push(CornerBound {
                    cell: cell.clone(),
                    corner: corner.clone(),
                    slice,
                    lower: lower.iter().zip(&upper).map(|(l, u)| l + a * (u - l)).collect(),
                    upper: lower.iter().zip(&upper).map(|(l, u)| l + b * (u - l)).collect(),
                });
            }
        }
    }
    Ok(FouPartition {
        p,
        q,
        wp,
        plant_rules: pr,
        controller_rules: qr,
        corners,
    })
}

/// Slack variables of the dependent program.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackVars {
    pub w: VarId,
    /// `m[t * wp + slice]` with `t` the triple index.
    pub m: Vec<VarId>,
}

fn add_unit_terms(c: &mut MatrixInequality, program: &LmiProgram, id: VarId, coef: f64) {
    if coef == 0.0 {
        return;
    }
    for (s, r, col) in program.vars.entries(id) {
        c.terms.entry(s).or_default().push((r, col, coef));
    }
}

pub fn estimated_rows(plant: &IT2Plant, kappa: usize, partition: &FouPartition) -> usize {
    let n = psi_dim(plant, kappa);
    let packed = n * (n + 1) / 2;
    let relax = partition.triples() * partition.wp;
    packed * (partition.distinct_corners().len() + 2 * relax + 1)
}

pub fn assemble_theorem2(
    plant: &IT2Plant,
    controller_rules: usize,
    givens: &SynthesisGivens,
    partition: &FouPartition,
    row_cap: usize,
) -> Result<(LmiProgram, DesignVars, SlackVars), LmiError> {
    givens.check(plant.dims.nx)?;
    if partition.plant_rules != plant.rule_count() || partition.controller_rules != controller_rules {
        return Err(LmiError::Invalid(format!(
            "partition built for {}x{} rules, program has {}x{}",
            partition.plant_rules,
            partition.controller_rules,
            plant.rule_count(),
            controller_rules
        )));
    }
    let rows = estimated_rows(plant, givens.kappa(), partition);
    if rows > row_cap {
        return Err(LmiError::TooLarge { rows, cap: row_cap });
    }
    let n = psi_dim(plant, givens.kappa());
    let mut program = LmiProgram::new();
    let vars = DesignVars::register(&mut program, plant, controller_rules, givens);
    let w = program.add_var("W", VarKind::Symmetric { n }, Sign::Free);
    let pr = plant.rule_count();
    let wp = partition.wp;
    let mut m = Vec::with_capacity(partition.triples() * wp);
    for i in 0..pr {
        for j in 0..controller_rules {
            for k in 0..pr {
                for l in 0..wp {
                    m.push(program.add_var(
                        &format!("M[{},{},{},{}]", i + 1, j + 1, k + 1, l + 1),
                        VarKind::Symmetric { n },
                        Sign::PositiveSemidefinite,
                    ));
                }
            }
        }
    }
    program.minimize(vars.gamma_bar);

    let psi = assemble_all_psi(givens, plant, &program, &vars)?;
    let flat: Vec<&AffineMatrix> = psi.iter().flatten().flatten().collect();

    let corner_rows: Vec<MatrixInequality> = partition
        .distinct_corners()
        .into_par_iter()
        .map(|ci| {
            let cb = &partition.corners[ci];
            let mut acc = AffineMatrix::zeros(n, n);
            let mut lo_sum = 0.0;
            for (t, psi_t) in flat.iter().enumerate() {
                if cb.lower[t] != 0.0 {
                    acc = acc + (*psi_t).clone() * cb.lower[t];
                }
                lo_sum += cb.lower[t];
            }
            let mut c = MatrixInequality::from_affine(format!("corner[{ci}]"), &acc, Sense::NegDef);
            for t in 0..flat.len() {
                add_unit_terms(&mut c, &program, m[t * wp + cb.slice], cb.upper[t] - cb.lower[t]);
            }
            add_unit_terms(&mut c, &program, w, lo_sum - 1.0);
            c
        })
        .collect();
    for c in corner_rows {
        program.push(c);
    }

    for i in 0..pr {
        for j in 0..controller_rules {
            for k in 0..pr {
                let t = partition.triple_index(i, j, k);
                for l in 0..wp {
                    let mut c = MatrixInequality::from_affine(
                        format!("{} - M[{}] + W", psi_name(i, j, k), l + 1),
                        flat[t],
                        Sense::NegDef,
                    );
                    add_unit_terms(&mut c, &program, m[t * wp + l], -1.0);
                    add_unit_terms(&mut c, &program, w, 1.0);
                    program.push(c);
                }
            }
        }
    }
    Ok((program, vars, SlackVars { w, m }))
}
