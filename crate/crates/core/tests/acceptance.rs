//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown:
//! `cargo test -p it2mof-core --test acceptance --release`.
//! Set `IT2MOF_ACCEPTANCE_STRICT=1` to exit non-zero when any line fails, and
//! `IT2MOF_ACCEPTANCE_ONLY=3,7` to run a subset.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use it2mof_core::config::{Case, ToolkitConfig};
use it2mof_core::expr::Expr;
use it2mof_core::sim::{self, ClosedLoopScenario};
use it2mof_core::study::{self, DesignFile};
use it2mof_core::synth::{backend_from_env, SdpBackend, SolverSettings};
use it2mof_core::trigger::{TriggerConfig, TriggerState};
use it2mof_core::{fixtures, parse};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REF_GAMMA_CASE1: f64 = 23.493;
const REF_GAMMA_CASE2_K2: f64 = 9.073;
const REF_GAMMA_CASE4_K1: f64 = 0.795;
const GAMMA_TOL: f64 = 0.15;
const MFD_SLACK: f64 = 1e-3;
const MFD_FACTOR: f64 = 3.0;
const HINF_SEEDS: usize = 100;
const DECAY_SEEDS: usize = 100;
const TR_SEEDS: usize = 100;
const TR_BAND: (f64, f64) = (0.1, 0.4);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Designs {
    base: ToolkitConfig,
    backend: Box<dyn SdpBackend>,
    cache: BTreeMap<(u8, usize, usize), DesignFile>,
}

impl Designs {
    /// Cached design of `case` at depth `kappa`; `cells` only matters for case 4.
    fn get(&mut self, case: Case, kappa: usize, cells: usize) -> &DesignFile {
        let key = (case.number(), case.effective_kappa(kappa), if case == Case::Four { cells } else { 0 });
        if !self.cache.contains_key(&key) {
            let mut base = self.base.clone();
            if case == Case::Four {
                base.design.partition.p = cells;
                base.design.partition.q = cells;
            }
            let t = Instant::now();
            let d = study::design_case(&base, case, kappa, self.backend.as_ref()).expect("design runs");
            eprintln!(
                "  designed case {} kappa {} cells {}: {:?} gamma {:?} in {:.1}s",
                key.0,
                key.1,
                key.2,
                d.result.status,
                d.result.gamma,
                t.elapsed().as_secs_f64()
            );
            self.cache.insert(key, d);
        }
        &self.cache[&key]
    }

    fn gamma(&mut self, case: Case, kappa: usize, cells: usize) -> Option<f64> {
        let d = self.get(case, kappa, cells);
        d.result.gamma.filter(|_| d.result.is_optimal())
    }
}

fn fmt(g: Option<f64>) -> String {
    g.map_or("none".into(), |g| format!("{g:.4}"))
}

fn criterion1(d: &mut Designs) -> Outcome {
    let g = d.gamma(Case::One, 1, 0);
    let ok = g.is_some_and(|g| (g - REF_GAMMA_CASE1).abs() <= GAMMA_TOL * REF_GAMMA_CASE1);
    outcome(ok, format!("gamma {} vs {REF_GAMMA_CASE1} +/-15%", fmt(g)))
}

fn criterion2(d: &mut Designs) -> Outcome {
    let gs: Vec<Option<f64>> = (1..=4).map(|k| d.gamma(Case::Two, k, 0)).collect();
    let all: Option<Vec<f64>> = gs.iter().copied().collect();
    let Some(g) = all else {
        return outcome(false, format!("missing designs {gs:?}"));
    };
    let decreasing = g[1] < g[0];
    let near = (g[1] - REF_GAMMA_CASE2_K2).abs() <= GAMMA_TOL * REF_GAMMA_CASE2_K2;
    let monotone = g.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        decreasing && near && monotone,
        format!(
            "gamma(kappa=1..4) = [{}]; kappa=2 vs {REF_GAMMA_CASE2_K2} +/-15%: {near}; non-increasing: {monotone}",
            g.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion3(d: &mut Designs) -> Outcome {
    let mfi = d.gamma(Case::Three, 1, 0);
    let mfd5 = d.gamma(Case::Four, 1, 5);
    let mfd20 = d.gamma(Case::Four, 1, 20);
    let dominance = matches!((mfi, mfd5), (Some(i), Some(m)) if m <= i + MFD_SLACK);
    let near = mfd20.is_some_and(|g| g <= MFD_FACTOR * REF_GAMMA_CASE4_K1 && g >= REF_GAMMA_CASE4_K1 / MFD_FACTOR);
    outcome(
        dominance && near,
        format!(
            "kappa=1: MFI {} vs MFD(p=q=5) {}; MFD(p=q=20) {} vs {REF_GAMMA_CASE4_K1} within x3: {near}",
            fmt(mfi),
            fmt(mfd5),
            fmt(mfd20)
        ),
    )
}

/// Partition for the depth-4 membership-dependent design. That solve runs
/// for well over an hour on one core, so it only happens on request.
fn kappa4_cells() -> Option<usize> {
    std::env::var("IT2MOF_ACCEPTANCE_K4_CELLS").ok().and_then(|v| v.parse().ok())
}

fn criterion4(d: &mut Designs) -> Outcome {
    let Some(cells) = kappa4_cells() else {
        let g: Vec<String> = [Case::One, Case::Two, Case::Three].iter().map(|c| fmt(d.gamma(*c, 4, 0))).collect();
        return outcome(
            false,
            format!("kappa=4 gammas (cases 1-3): [{}]; case 4 not run, set IT2MOF_ACCEPTANCE_K4_CELLS", g.join(", ")),
        );
    };
    let g: Vec<Option<f64>> = vec![
        d.gamma(Case::One, 4, 0),
        d.gamma(Case::Two, 4, 0),
        d.gamma(Case::Three, 4, 0),
        d.gamma(Case::Four, 4, cells),
    ];
    let ordered = g.iter().all(Option::is_some) && g.windows(2).all(|w| w[0].unwrap() > w[1].unwrap());
    outcome(
        ordered,
        format!(
            "kappa=4 gammas (cases 1-4, case 4 on p=q={cells}): [{}]",
            g.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion5(d: &mut Designs) -> Outcome {
    const CONFIGS: usize = 100;
    const SEEDS: usize = 100;
    const STEPS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let loops: Vec<ClosedLoopScenario> = (1..=4)
        .map(|k| d.get(Case::Two, k, 0).scenario().expect("stabilizing design"))
        .collect();
    let mut worst = f64::INFINITY;
    let (mut runs, mut overflowed) = (0, 0);
    for _ in 0..CONFIGS {
        let kappa = rng.gen_range(1..=4);
        let mut sc = loops[kappa - 1].clone();
        // Stay near the designed loop so runs finish; the sign of varpi does
        // not depend on stability.
        let mu = rng.gen_range(0.05..0.95);
        let weights = common::random_weights(&mut rng, kappa);
        let omega = &sc.trigger.omega * rng.gen_range(1.0..5.0);
        sc.trigger = TriggerConfig::new(
            rng.gen_range(0.01..=sc.trigger.rho),
            rng.gen_range(1.0..5.0) / mu,
            mu,
            weights,
            omega,
            rng.gen_range(0.0..2.0),
        )
        .expect("valid trigger");
        assert!(sc.trigger.validate().nonnegativity_guaranteed);
        let amp: f64 = rng.gen_range(0.1..3.0);
        let w: f64 = rng.gen_range(0.05..2.0);
        sc.disturbance = parse(&format!("{amp}*sin({w}*t) + {}*cos(0.7*t)", amp / 2.0)).unwrap();
        sc.x0 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        sc.horizon = STEPS;
        let seeds: Vec<u64> = (0..SEEDS as u64).map(|s| rng.gen::<u64>() ^ s).collect();
        for tr in sim::run_ensemble(&sc, &seeds) {
            match tr {
                Ok(tr) => {
                    worst = worst.min(tr.min_varpi());
                    runs += 1;
                }
                Err(sim::SimError::Overflow { .. }) => overflowed += 1,
                Err(e) => panic!("{e}"),
            }
        }
    }
    outcome(
        worst >= 0.0 && runs >= CONFIGS * SEEDS * 9 / 10,
        format!("{runs} runs x {STEPS} steps ({overflowed} overflowed), min varpi {worst:e}"),
    )
}

fn criterion6(d: &mut Designs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (key, design) in &d.cache {
        let Some(gamma) = design.result.gamma.filter(|_| design.result.is_optimal()) else {
            continue;
        };
        let mut sc = design.scenario().unwrap();
        sc.x0 = DVector::zeros(2);
        sc.disturbance = fixtures::example1_disturbance();
        let traces = study::ensemble(&sc, 1, HINF_SEEDS).unwrap();
        let worst = traces
            .iter()
            .map(|t| sim::empirical_hinf(t).unwrap())
            .fold(0.0f64, f64::max);
        ok &= worst <= gamma;
        lines.push(format!("c{}k{}: {worst:.4} <= {gamma:.4}", key.0, key.1));
    }
    outcome(ok && !lines.is_empty(), format!("{} designs x {HINF_SEEDS} seeds; {}", lines.len(), lines.join("; ")))
}

fn criterion7(d: &mut Designs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (key, design) in &d.cache {
        if !design.result.is_optimal() {
            continue;
        }
        let mut sc = design.scenario().unwrap();
        sc.disturbance = Expr::num(0.0);
        sc.x0 = DVector::from_row_slice(&[1.0, -1.0]);
        let traces = study::ensemble(&sc, 1, DECAY_SEEDS).unwrap();
        let fit = sim::decay_envelope(&traces, design.config.design.hslash).unwrap();
        let pass = fit.within_envelope && fit.fitted_factor <= fit.envelope_factor;
        ok &= pass;
        lines.push(format!(
            "c{}k{}: {:.4} <= {:.4}",
            key.0, key.1, fit.fitted_factor, fit.envelope_factor
        ));
    }
    outcome(ok && !lines.is_empty(), format!("{DECAY_SEEDS} seeds each; {}", lines.join("; ")))
}

fn criterion8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let sc = common::random_scenario(&mut rng, 1 + case % 3, 50);
        let trace = sim::run(&sc).unwrap();
        let aug = sim::run_augmented(&sc).unwrap();
        for (step, xa) in trace.steps.iter().zip(&aug) {
            for (a, b) in step.x.iter().zip(xa.iter()) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    outcome(worst <= 1e-9, format!("20 scenarios (kappa 1-3), worst per-step deviation {worst:e}"))
}

fn criterion9(d: &mut Designs) -> Outcome {
    let sc = d.get(Case::One, 1, 0).scenario().unwrap();
    let cfg = &sc.trigger;
    assert_eq!(cfg.weights, vec![1.0]);
    let mut identical = 0;
    for tr in study::ensemble(&sc, 1, 50).unwrap() {
        let ys: Vec<DVector<f64>> = tr.steps.iter().map(|s| DVector::from_column_slice(&s.y)).collect();
        let mut a = TriggerState::new(cfg, &ys[0]);
        let mut b = TriggerState::new(cfg, &ys[0]);
        let same = ys.iter().all(|y| {
            let da = a.check_and_update(cfg, y).unwrap();
            let db = b.detm_check(cfg, y).unwrap();
            da.triggered == db.triggered && da.varpi_next.to_bits() == db.varpi_next.to_bits()
        });
        let replayed: Vec<bool> = tr.steps.iter().map(|s| s.triggered).collect();
        let mut c = TriggerState::new(cfg, &ys[0]);
        let detm: Vec<bool> = ys.iter().map(|y| c.detm_check(cfg, y).unwrap().triggered).collect();
        identical += usize::from(same && replayed == detm);
    }
    outcome(identical == 50, format!("{identical}/50 traces bit-identical"))
}

fn criterion10(d: &mut Designs) -> Outcome {
    let mut tr = |case| {
        let sc = d.get(case, 4, 0).scenario().unwrap();
        let traces = study::ensemble(&sc, 1, TR_SEEDS).unwrap();
        traces.iter().map(sim::triggering_rate).sum::<f64>() / traces.len() as f64
    };
    let detm = tr(Case::Two);
    let mdetm = tr(Case::Three);
    let trend = mdetm <= detm;
    let band = |v: f64| (TR_BAND.0..=TR_BAND.1).contains(&v);
    outcome(
        trend && band(detm) && band(mdetm),
        format!(
            "kappa=4 over {TR_SEEDS} seeds: MDETM {mdetm:.3} <= DETM {detm:.3}: {trend}; both in [{}, {}]: {}",
            TR_BAND.0,
            TR_BAND.1,
            band(detm) && band(mdetm)
        ),
    )
}

fn criterion11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut stable = 0;
    for _ in 0..1000 {
        let e = common::random_expr(&mut rng, 5);
        let env = [("a", rng.gen_range(-3.0..3.0)), ("b", rng.gen_range(-3.0..3.0)), ("t", rng.gen_range(0.0..30.0))];
        let again = common::reparse(&e);
        let ok = again == e
            && again.to_string() == e.to_string()
            && common::eval_bits(&again, &env) == common::eval_bits(&e, &env);
        stable += usize::from(ok);
    }
    let sum = parse("a+b*c").unwrap();
    let grouped = parse("a+(b*c)").unwrap();
    let mut precedence = 0;
    for _ in 0..10_000 {
        let env = [("a", rng.gen_range(-1e3..1e3)), ("b", rng.gen_range(-1e3..1e3)), ("c", rng.gen_range(-1e3..1e3))];
        precedence += usize::from(sum.eval(&env).unwrap().to_bits() == grouped.eval(&env).unwrap().to_bits());
    }
    outcome(
        stable == 1000 && precedence == 10_000,
        format!("{stable}/1000 round-trips stable, {precedence}/10000 precedence triples"),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("IT2MOF_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var_os("IT2MOF_ACCEPTANCE_STRICT").is_some();
    let mut designs = Designs {
        base: fixtures::example1_config(),
        backend: backend_from_env(SolverSettings::default()).expect("backend"),
        cache: BTreeMap::new(),
    };
    type Check = fn(&mut Designs) -> Outcome;
    // 6 and 7 cover every design built by the criteria before them.
    let checks: [(u32, &str, Check); 11] = [
        (1, "Case 1 gamma", criterion1),
        (2, "memory benefit (Case 2)", criterion2),
        (3, "MFD dominance", criterion3),
        (4, "four-case ordering at kappa=4", criterion4),
        (5, "varpi nonnegativity", criterion5),
        (8, "augmented-form oracle", |_| criterion8()),
        (9, "MDETM to DETM reduction", criterion9),
        (10, "triggering-rate trend", criterion10),
        (11, "expression round-trips", |_| criterion11()),
        (6, "empirical H-infinity", criterion6),
        (7, "mean-square decay", criterion7),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (n, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut designs);
        let line = format!(
            "criterion {n:>2} {}: {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        failed += usize::from(!o.pass);
        lines.push((n, line));
    }
    lines.sort_by_key(|(n, _)| *n);
    println!("\nsummary");
    for (_, l) in &lines {
        println!("{l}");
    }
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
