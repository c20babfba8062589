use criterion::{criterion_group, criterion_main, Criterion};
use sparsepat::acoustics::{default_ring, simulate_forward, time_reverse, KSpaceSolver, Medium};
use sparsepat::phantoms::gen_circles;

fn solver(c: &mut Criterion) {
    let medium = Medium::for_grid(64);
    let p0 = gen_circles(1, 64);
    let mut solver = KSpaceSolver::new(&medium, 64).unwrap();
    let mut state = solver.initial_state(&p0).unwrap();
    c.bench_function("kspace_step_64px", |b| b.iter(|| solver.step(&mut state)));

    let ring = default_ring(30, 64).unwrap();
    let mut group = c.benchmark_group("pipeline_64px");
    group.sample_size(10);
    group.bench_function("forward_30_detectors", |b| {
        b.iter(|| simulate_forward(&p0, &medium, &ring).unwrap())
    });
    let data = simulate_forward(&p0, &medium, &ring).unwrap();
    group.bench_function("time_reversal_30_detectors", |b| {
        b.iter(|| time_reverse(&data, &medium, &ring, 64).unwrap())
    });
    group.finish();
}

criterion_group!(benches, solver);
criterion_main!(benches);
