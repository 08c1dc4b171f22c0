use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use smallnoise::catalog;
use smallnoise::expr::parse;
use smallnoise::zeroth_order::{convergence_study, EpsGrid, StudySpec};
use smallnoise::{euler_maruyama, simulate_ensemble, step_tamed, BrownianDriver, EnsembleSpec, InitialState, SchemeSpec, TimeGrid};

fn driver(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let mut g = c.benchmark_group("driver");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("increments/1000", |b| {
        let mut stream = 0u64;
        b.iter(|| {
            stream += 1;
            BrownianDriver::new(7, stream, 1, grid).unwrap().increments()
        })
    });
    g.finish();
}

fn stepping(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let ou = catalog::entry("ou", 1.0).unwrap();
    let cubic = catalog::entry("cubic", 1.0).unwrap();
    let d = BrownianDriver::new(7, 0, 1, grid).unwrap();
    let mut g = c.benchmark_group("path");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("euler/ou", |b| b.iter(|| euler_maruyama(&ou.field, black_box(&[1.0]), &grid, 0.1, &d).unwrap()));
    g.bench_function("tamed/cubic", |b| b.iter(|| step_tamed(&cubic.field, black_box(&[0.5]), &grid, 0.1, &d).unwrap()));
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let ou = catalog::entry("ou", 1.0).unwrap();
    let spec = EnsembleSpec {
        x0: InitialState::Fixed(vec![1.0]),
        grid: TimeGrid::new(1.0, 1000).unwrap(),
        eps: 0.1,
        paths: 1024,
        seed: 3,
        scheme: SchemeSpec::Euler,
        keep_paths: false,
        checkpoints: Vec::new(),
    };
    let mut g = c.benchmark_group("ensemble");
    g.sample_size(10);
    g.bench_function("ou/1024x1000", |b| b.iter(|| simulate_ensemble(&ou.field, "ou", &spec).unwrap()));
    let study = StudySpec {
        x0: vec![1.0],
        grid: TimeGrid::new(1.0, 500).unwrap(),
        eps: EpsGrid::new(vec![0.4, 0.2, 0.1, 0.05]).unwrap(),
        paths: 1024,
        seed: 3,
        scheme: SchemeSpec::Euler,
        t_checks: vec![1.0],
        deltas: vec![0.5],
    };
    g.bench_function("convergence/ou", |b| b.iter(|| convergence_study(&ou.field, "ou", &study, None).unwrap()));
    g.finish();
}

fn parser(c: &mut Criterion) {
    let src = "-x1^3 + sin(t) * exp(-x2 / 2) - max(abs(x1), sqrt(1 + x2^2)) / (1 + tanh(x1 * x2))";
    let e = parse(src, 2).unwrap();
    let mut g = c.benchmark_group("expr");
    g.bench_function("parse", |b| b.iter(|| parse(black_box(src), 2).unwrap()));
    g.bench_function("eval", |b| {
        b.iter_batched(|| [0.3, -1.2], |x| e.eval(0.5, black_box(&x)).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, driver, stepping, ensemble, parser);
criterion_main!(benches);
