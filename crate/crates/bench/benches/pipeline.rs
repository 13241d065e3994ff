use criterion::{criterion_group, criterion_main, Criterion};
use it2mof_core::config::Case;
use it2mof_core::fixtures;
use it2mof_core::lmi::assemble_theorem1;
use it2mof_core::sim;
use it2mof_core::study;
use it2mof_core::synth::{backend_by_name, SolverSettings};

fn synthesis(c: &mut Criterion) {
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    for kappa in [1, 4] {
        let cfg = fixtures::example1_config().with_case(Case::Three, kappa).unwrap();
        let plant = cfg.plant().unwrap();
        let givens = cfg.givens().unwrap();
        g.bench_function(format!("assemble_mfi_k{kappa}"), |b| {
            b.iter(|| assemble_theorem1(&plant, 3, &givens).unwrap())
        });
        let backend = backend_by_name("clarabel", SolverSettings::default()).unwrap();
        g.bench_function(format!("design_mfi_k{kappa}"), |b| {
            b.iter(|| study::design(&cfg, backend.as_ref()).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let backend = backend_by_name("clarabel", SolverSettings::default()).unwrap();
    let cfg = fixtures::example1_config().with_case(Case::Three, 4).unwrap();
    let design = study::design(&cfg, backend.as_ref()).unwrap();
    let mut scenario = design.scenario().unwrap();
    scenario.horizon = 1000;
    c.bench_function("simulate_k4_1000_steps", |b| b.iter(|| sim::run(&scenario).unwrap()));
}

criterion_group!(benches, synthesis, simulation);
criterion_main!(benches);
