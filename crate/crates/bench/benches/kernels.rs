use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use uwmmse::model::{sample_channel, Channel, RngStream, SystemConfig};
use uwmmse::numkit::{herm_eig, CMatrix};
use uwmmse::train::loss_and_grad;
use uwmmse::unfolded::{forward, StepSizes, UnfoldConfig};
use uwmmse::wmmse::{run_wmmse, StopRule};

fn setup(snr: f64) -> (SystemConfig, Channel) {
    let cfg = SystemConfig::from_snr_db(4, 4, snr).unwrap();
    let h = sample_channel(&cfg, RngStream::new(1, 0));
    (cfg, h)
}

fn eigensolver(c: &mut Criterion) {
    let (_, h) = setup(10.0);
    let a: CMatrix = h.matrix().adjoint().matmul(h.matrix()).unwrap();
    c.bench_function("herm_eig 4x4", |b| b.iter(|| herm_eig(black_box(&a)).unwrap()));
}

fn classic(c: &mut Criterion) {
    let (cfg, h) = setup(10.0);
    c.bench_function("wmmse 6 iterations", |b| {
        b.iter(|| run_wmmse(black_box(&h), &cfg, StopRule::truncated(6)).unwrap())
    });
    c.bench_function("wmmse to convergence", |b| {
        b.iter(|| run_wmmse(black_box(&h), &cfg, StopRule::converged()).unwrap())
    });
}

fn unfolded(c: &mut Criterion) {
    let (cfg, h) = setup(10.0);
    let ucfg = UnfoldConfig::new(6, 4).unwrap();
    let steps = StepSizes::filled(6, 4, 0.5);
    c.bench_function("forward L=6 K=4", |b| {
        b.iter(|| forward(black_box(&h), &steps, &cfg, &ucfg).unwrap())
    });
    let batch: Vec<Channel> = (0..100).map(|i| sample_channel(&cfg, RngStream::new(2, i))).collect();
    let ucfg1 = UnfoldConfig::new(1, 4).unwrap();
    let steps1 = StepSizes::filled(1, 4, 1.0);
    c.bench_function("loss_and_grad batch=100 L=1 K=4", |b| {
        b.iter(|| loss_and_grad(black_box(&batch), &steps1, &cfg, &ucfg1).unwrap())
    });
}

criterion_group!(benches, eigensolver, classic, unfolded);
criterion_main!(benches);
