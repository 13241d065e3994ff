#![allow(dead_code)]

use it2mof_core::channel::{FadingConfig, FadingFamily};
use it2mof_core::controller::{ControllerGains, FailureConfig};
use it2mof_core::expr::{BinOp, Expr, Func};
use it2mof_core::model::IT2Plant;
use it2mof_core::sim::ClosedLoopScenario;
use it2mof_core::trigger::TriggerConfig;
use it2mof_core::{fixtures, parse};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const VARS: [&str; 3] = ["a", "b", "t"];

/// Random expression tree of bounded depth over `VARS`.
pub fn random_expr<R: Rng>(rng: &mut R, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.5) {
            Expr::Num(random_literal(rng))
        } else {
            Expr::var(VARS[rng.gen_range(0..VARS.len())])
        };
    }
    let sub = |rng: &mut R| Box::new(random_expr(rng, depth - 1));
    match rng.gen_range(0..8) {
        0 => Expr::Neg(sub(rng)),
        1 => Expr::Binary(BinOp::Add, sub(rng), sub(rng)),
        2 => Expr::Binary(BinOp::Sub, sub(rng), sub(rng)),
        3 => Expr::Binary(BinOp::Mul, sub(rng), sub(rng)),
        4 => Expr::Binary(BinOp::Div, sub(rng), sub(rng)),
        5 => Expr::Binary(BinOp::Pow, sub(rng), sub(rng)),
        6 => {
            let f = [Func::Sin, Func::Cos, Func::Exp, Func::Abs][rng.gen_range(0..4)];
            Expr::Call(f, vec![random_expr(rng, depth - 1)])
        }
        _ => {
            let f = if rng.gen_bool(0.5) { Func::Min } else { Func::Max };
            let n = rng.gen_range(2..4);
            Expr::Call(f, (0..n).map(|_| random_expr(rng, depth - 1)).collect())
        }
    }
}

/// Non-negative literals: a leading minus parses as negation.
pub fn random_literal<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..100) as f64,
        1 => rng.gen_range(0.0..10.0),
        2 => rng.gen_range(0.0..1.0) * 10f64.powi(rng.gen_range(-12..12)),
        _ => f64::from(rng.gen::<f32>()),
    }
}

/// Evaluation outcome compared bit-for-bit (errors compare by equality too).
pub fn eval_bits(e: &Expr, env: &[(&str, f64)]) -> Result<u64, String> {
    e.eval(env).map(f64::to_bits).map_err(|e| e.to_string())
}

pub fn reparse(e: &Expr) -> Expr {
    parse(&e.to_string()).unwrap_or_else(|err| panic!("{e}: {err}"))
}

fn perturb<R: Rng>(rng: &mut R, m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    m.map(|v| v + rng.gen_range(-scale..scale))
}

/// Example plant with perturbed `A`, `Bu`, `Bd`, `Cz` and a shared `Cy`.
pub fn random_plant<R: Rng>(rng: &mut R) -> IT2Plant {
    let mut plant = fixtures::example1_plant();
    let cy = perturb(rng, &plant.rules[0].cy, 0.3);
    for r in &mut plant.rules {
        r.a = perturb(rng, &r.a, 0.1);
        r.bu = perturb(rng, &r.bu, 0.2);
        r.bd = perturb(rng, &r.bd, 0.2);
        r.cz = perturb(rng, &r.cz, 0.1);
        r.cy = cy.clone();
    }
    plant
}

/// Non-increasing weights summing to one.
pub fn random_weights<R: Rng>(rng: &mut R, kappa: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..kappa).map(|_| rng.gen_range(0.05..1.0)).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Random small closed loop with memory depth `kappa`.
pub fn random_scenario<R: Rng>(rng: &mut R, kappa: usize, horizon: usize) -> ClosedLoopScenario {
    let plant = random_plant(rng);
    let gains: Vec<Vec<DMatrix<f64>>> = (0..3)
        .map(|_| (0..kappa).map(|_| DMatrix::from_fn(1, 1, |_, _| rng.gen_range(-0.6..0.2))).collect())
        .collect();
    let controller = ControllerGains::new(gains, fixtures::example1_controller_memberships()).unwrap();
    let mu = rng.gen_range(0.1..0.9);
    let nu = rng.gen_range(1.0..3.0) / mu;
    let trigger = TriggerConfig::new(
        rng.gen_range(0.01..0.9),
        nu,
        mu,
        random_weights(rng, kappa),
        DMatrix::from_element(1, 1, rng.gen_range(0.1..5.0)),
        rng.gen_range(0.0..1.0),
    )
    .unwrap();
    let family = match rng.gen_range(0..3) {
        0 => FadingFamily::Gaussian,
        1 => FadingFamily::TwoPoint,
        _ => FadingFamily::TruncatedGaussian { lo: 0.0, hi: 2.0 },
    };
    ClosedLoopScenario {
        plant,
        controller,
        trigger,
        fading: FadingConfig::new(rng.gen_range(0.6..1.0), rng.gen_range(0.0..0.05), family, rng.gen()),
        failure: FailureConfig::new(rng.gen_range(0.5..1.0)).unwrap(),
        disturbance: parse("3*exp(-0.1*t)*sin(t)").unwrap(),
        x0: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
        horizon,
        seed: rng.gen(),
    }
}
