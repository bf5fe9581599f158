use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glrl_lab::dynamics::{balanced_init, flow_depth2, gd_factored, IntegratorConfig};
use glrl_lab::expcli::CompletionInstance;
use glrl_lab::par::{par_map, seq_map};
use glrl_lab::rng::{Stream, StreamRng};
use glrl_lab::{LossSpec, SymMat};

fn gd_seed(seed: u64) -> f64 {
    let inst = CompletionInstance::generate(seed, 10, 2, 0.5, 10.0).unwrap();
    let u0 = balanced_init(10, 2, 1e-3, &mut StreamRng::new(seed, Stream::Init)).unwrap().factors()[0].clone();
    let cfg = IntegratorConfig::rk4(1e-2).with_record_every(100);
    let traj = gd_factored(&inst.loss, &u0, &cfg, 20.0).unwrap();
    traj.diagnostics.last().unwrap().loss
}

fn flow_scale(spec: &LossSpec, alpha: f64) -> f64 {
    let w0 = SymMat::identity(spec.dim()).scale(alpha);
    let cfg = IntegratorConfig::rk4(1e-2).with_record_every(200).with_stop_grad_norm(1e-10);
    let traj = flow_depth2(spec, &w0, &cfg, 200.0).unwrap();
    traj.final_time().unwrap()
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for n in [2u64, 8, 32] {
        let seeds: Vec<u64> = (0..n).collect();
        group.bench_with_input(BenchmarkId::new("par", n), &seeds, |b, s| {
            b.iter(|| par_map(black_box(s.clone()), gd_seed))
        });
        group.bench_with_input(BenchmarkId::new("seq", n), &seeds, |b, s| {
            b.iter(|| seq_map(black_box(s.clone()), gd_seed))
        });
    }
    group.finish();
}

fn scale_sweep(c: &mut Criterion) {
    let spec = LossSpec::full_observation(SymMat::from_diagonal(&[3.0, 2.0, 1.0, 0.5, 0.25, 0.0]));
    let mut group = c.benchmark_group("scale_sweep");
    group.sample_size(10);
    for n in [4i32, 16, 64] {
        let alphas: Vec<f64> = (0..n).map(|k| 10f64.powf(-2.0 - 6.0 * k as f64 / n as f64)).collect();
        group.bench_with_input(BenchmarkId::new("par", n), &alphas, |b, a| {
            b.iter(|| par_map(black_box(a.clone()), |alpha| flow_scale(&spec, alpha)))
        });
        group.bench_with_input(BenchmarkId::new("seq", n), &alphas, |b, a| {
            b.iter(|| seq_map(black_box(a.clone()), |alpha| flow_scale(&spec, alpha)))
        });
    }
    group.finish();
}

criterion_group!(benches, seed_sweep, scale_sweep);
criterion_main!(benches);
