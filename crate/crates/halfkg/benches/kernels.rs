//! Sequential against rayon for the hot kernels. With one core the two should
//! be close; the gap measures the pool overhead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use halfkg::evolve::{self, PropagatorConfig, Scheme};
use halfkg::exec;
use halfkg::grid::{make_grid, SpectralField};
use halfkg::metric::MetricSpec;
use halfkg::C64;
use std::hint::black_box;

fn gaussian(d: usize, n: usize, l: f64) -> SpectralField {
    let g = make_grid(d, n, l).unwrap();
    SpectralField::from_fn(&g, |x| C64::from_polar((-x.iter().map(|v| v * v).sum::<f64>() / 8.0).exp(), 0.7 * x[0]))
}

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn flat_step(c: &mut Criterion) {
    let u = gaussian(3, 32, 16.0);
    let mut group = c.benchmark_group("flat_halfkg_step_3d_32");
    for (name, on) in modes() {
        exec::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evolve::flat_halfkg_step(black_box(&u), 1.0, 0.5)));
    }
    exec::set_parallel(true);
    group.finish();
}

fn split_step(c: &mut Criterion) {
    let u = gaussian(2, 64, 32.0);
    let cfg = PropagatorConfig::new(MetricSpec::inverse_square(2, 0.01), 1.0, 0.5, Scheme::SplitStep).unwrap();
    let mut group = c.benchmark_group("split_step_2d_64");
    group.sample_size(20);
    for (name, on) in modes() {
        exec::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evolve::step(black_box(&u), &cfg, None, 1.0).unwrap()));
    }
    exec::set_parallel(true);
    group.finish();
}

fn sobolev(c: &mut Criterion) {
    let u = gaussian(3, 32, 16.0);
    let mut group = c.benchmark_group("sobolev_norm_3d_32");
    for (name, on) in modes() {
        exec::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| halfkg::measure::sobolev_norm(black_box(&u), 1.5)));
    }
    exec::set_parallel(true);
    group.finish();
}

criterion_group!(benches, flat_step, split_step, sobolev);
criterion_main!(benches);
