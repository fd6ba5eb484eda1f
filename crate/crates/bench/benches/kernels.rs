use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use regime_iter_bench::{call_problem, two_regime_model};
use regime_iter_core::ctmc::sample_switch_path;
use regime_iter_core::fd::{self, Lattice, SystemConfig};
use regime_iter_core::mc::{Dynamics, Oracle, Scheme};
use regime_iter_core::rng::substream;
use regime_iter_core::semianalytic::{call_price, SemiAnalytic};
use regime_iter_core::{IterateVariant, Payoff, QuadratureSpec, RegimeIndex};

fn regime(v: usize) -> RegimeIndex {
    RegimeIndex::from_zero_based(v - 1)
}

fn bench_closed_form(c: &mut Criterion) {
    c.bench_function("call_price", |b| {
        b.iter(|| call_price(black_box(1.1), 0.05, 0.2, 1.0, 0.0, 1.0))
    });
}

fn bench_iterates(c: &mut Criterion) {
    let model = two_regime_model();
    let eng = SemiAnalytic::new(&model, Payoff::call(1.0), 1.0, QuadratureSpec::default()).unwrap();
    c.bench_function("level1_point", |b| {
        b.iter(|| eng.level1(0.0, black_box(1.0), regime(1), IterateVariant::W).unwrap())
    });
    c.bench_function("level2_point", |b| {
        b.iter(|| eng.level2(0.0, black_box(1.0), regime(1), IterateVariant::W).unwrap())
    });
}

fn bench_ctmc(c: &mut Criterion) {
    let model = two_regime_model();
    c.bench_function("sample_switch_path", |b| {
        let mut k = 0_u64;
        b.iter(|| {
            k += 1;
            let mut rng = substream(7, k);
            sample_switch_path(model.generator(), regime(1), 0.0, 1.0, &mut rng)
        })
    });
}

fn bench_mc(c: &mut Criterion) {
    let model = two_regime_model();
    let problem = call_problem();
    let oracle = Oracle::new(
        &problem,
        Dynamics::Gbm(&model),
        Scheme::ExactGbmBridging { monitor_step: None },
    )
    .unwrap();
    c.bench_function("oracle_value_10k_paths", |b| {
        b.iter(|| oracle.value(0.0, black_box(1.0), regime(1), 10_000, 3).unwrap())
    });
}

fn bench_fd(c: &mut Criterion) {
    let model = two_regime_model();
    let problem = call_problem();
    c.bench_function("fd_two_iterations_201x200", |b| {
        b.iter(|| {
            let lattice = Arc::new(Lattice::log(0.05, 20.0, 201, 200, 1.0).unwrap());
            fd::iterate_system(
                &problem,
                &model.coefficients(),
                model.generator(),
                2,
                lattice,
                IterateVariant::W,
                SystemConfig::default(),
            )
            .unwrap()
        })
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default()
        .sample_size(20)
        .measurement_time(Duration::from_secs(3))
        .warm_up_time(Duration::from_secs(1));
    targets = bench_closed_form, bench_iterates, bench_ctmc, bench_mc, bench_fd
}
criterion_main!(kernels);
