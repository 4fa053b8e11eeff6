use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use loopshaper::ccp::{stage1_program, LinearizationState, SynthesisConfig};
use loopshaper::conic::{solve, SolverOptions};
use loopshaper::loops::{verify_norms, CompensatorParams, FilterParams, NormBounds};
use loopshaper::lti::{hinf_norm, roots, DEFAULT_REFINE_LEVELS};
use loopshaper::plant::{identified_plant_set, paper_controllers, paper_weights, ConverterParams};
use loopshaper::sim::{scenario_b, simulate, SimConfig};
use loopshaper::FrequencyGrid;

fn frequency(c: &mut Criterion) {
    let pc = paper_controllers();
    let grid = FrequencyGrid::logspace(1e2, 1e5, 2000).unwrap();
    c.bench_function("hinf_norm K_x 2000 points", |b| {
        b.iter(|| hinf_norm(black_box(&pc.k_x), &grid, DEFAULT_REFINE_LEVELS).unwrap())
    });
    c.bench_function("roots K_k denominator", |b| b.iter(|| roots(black_box(pc.k_k.den())).unwrap()));

    let comp = CompensatorParams::from_transfer_function(&pc.k_x).unwrap();
    let filt = FilterParams::from_transfer_function(&pc.q).unwrap();
    let plants = identified_plant_set();
    let weights = paper_weights();
    let bounds = NormBounds::from_gammas(0.813, 1.0, 0.15);
    c.bench_function("verify_norms 2000 points", |b| {
        b.iter(|| verify_norms(&comp, &filt, &plants, &weights, &grid, Some(bounds)).unwrap())
    });
}

fn solver(c: &mut Criterion) {
    let cfg = SynthesisConfig::paper();
    let lin = LinearizationState {
        comp: cfg.init_comp.clone(),
        filt: cfg.init_filt.clone(),
    };
    let program = stage1_program(&cfg, &lin).unwrap();
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("conic");
    g.sample_size(10);
    g.bench_function("stage-1 program, paper grid", |b| b.iter(|| solve(black_box(&program), &opts).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let pc = paper_controllers();
    let comp = CompensatorParams::from_transfer_function(&pc.k_x).unwrap();
    let plants = identified_plant_set();
    let params = ConverterParams::table1();
    let mut sc = scenario_b();
    // the stretch around the load step only
    sc.duration = 2.1;
    let cfg = SimConfig::default();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("averaged load step", |b| {
        b.iter(|| simulate(&sc, &comp, None, &plants, &params, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, frequency, solver, simulation);
criterion_main!(benches);
