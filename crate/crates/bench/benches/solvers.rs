//! Timings of the main solvers on random instances of growing size.

use std::hint::black_box;

use codesign::analysis::price_of_anarchy;
use codesign::game::{solve_equilibrium, GameConfig, GameOptions};
use codesign::instances::random_space;
use codesign::mechanism::{solve_w_max, MechanismSpec};
use codesign::solver::{solve_optimal_design, SolverOptions};
use codesign::{AgentProfile, CriterionKind, DesignSpace};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// (dimension, points, agents)
const SIZES: [(usize, usize, usize); 3] = [(2, 6, 2), (4, 16, 3), (6, 30, 4)];

fn instance(d: usize, n: usize, agents: usize) -> (DesignSpace, Vec<AgentProfile>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let space = random_space(&mut rng, d, n, agents, d);
    let costs: Vec<f64> = (0..agents).map(|k| 0.5 + 0.25 * k as f64).collect();
    let agents = AgentProfile::all_d(&space, &costs).expect("valid costs");
    (space, agents)
}

fn label(d: usize, n: usize, agents: usize) -> String {
    format!("d{d}_n{n}_k{agents}")
}

fn design(c: &mut Criterion) {
    let mut group = c.benchmark_group("d_optimal_design");
    for (d, n, k) in SIZES {
        let (space, _) = instance(d, n, k);
        let opts = SolverOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(label(d, n, k)), &space, |b, s| {
            b.iter(|| solve_optimal_design(&CriterionKind::D, black_box(s), None, &opts).unwrap())
        });
    }
    group.finish();
}

fn w_max(c: &mut Criterion) {
    let mut group = c.benchmark_group("information_maximizing_design");
    group.sample_size(20);
    for (d, n, k) in SIZES {
        let (space, agents) = instance(d, n, k);
        group.bench_function(BenchmarkId::from_parameter(label(d, n, k)), |b| {
            b.iter(|| solve_w_max(black_box(&space), &agents).unwrap())
        });
    }
    group.finish();
}

fn equilibrium(c: &mut Criterion) {
    let mut group = c.benchmark_group("federated_equilibrium");
    group.sample_size(20);
    for (d, n, k) in SIZES {
        let (space, agents) = instance(d, n, k);
        let config = GameConfig::new(space, agents, MechanismSpec::Fed, GameOptions::default()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(label(d, n, k)), &config, |b, cfg| {
            b.iter(|| solve_equilibrium(black_box(cfg), None).unwrap())
        });
    }
    group.finish();
}

fn anarchy(c: &mut Criterion) {
    let mut group = c.benchmark_group("price_of_anarchy");
    group.sample_size(10);
    for (d, n, k) in SIZES {
        let (space, agents) = instance(d, n, k);
        group.bench_function(BenchmarkId::from_parameter(label(d, n, k)), |b| {
            b.iter(|| price_of_anarchy(black_box(&space), &agents).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, design, w_max, equilibrium, anarchy);
criterion_main!(benches);
