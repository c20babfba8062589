use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparsepat::networks::{build_fd_unet, build_unet, Model};
use sparsepat::tensor::{ops, Mode, Tape};
use sparsepat_bench::filled;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for channels in [8usize, 32] {
        let x = filled(&[3, channels, 64, 64]);
        let w = filled(&[channels, channels, 3, 3]);
        let b = vec![0.0f32; channels];
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |bench, _| {
            bench.iter(|| ops::conv2d(&x, &w, &b, 1, 1).unwrap())
        });
    }
    group.finish();
}

fn train_step(model: &mut Model<f32>) {
    let x = filled(&[3, 1, 64, 64]);
    let y = filled(&[3, 1, 64, 64]);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let out = model.forward(&mut tape, xv, Mode::Train).unwrap();
    let loss = tape.mse_loss(out, yv).unwrap();
    model.params_mut().zero_grad();
    tape.backward(loss, model.params_mut()).unwrap();
}

fn networks(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_64px_batch3");
    group.sample_size(10);
    let mut unet = build_unet::<f32>(8, 0).unwrap();
    let mut fd = build_fd_unet::<f32>(8, 1, 0).unwrap();
    group.bench_function("unet_f8", |b| b.iter(|| train_step(&mut unet)));
    group.bench_function("fd_unet_f8_k1", |b| b.iter(|| train_step(&mut fd)));
    group.finish();
}

criterion_group!(benches, conv, networks);
criterion_main!(benches);
