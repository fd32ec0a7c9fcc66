use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rcbf_core::barrier::{grad_h, h, BarrierParams};
use rcbf_core::harness::{run_task, RunConfig};
use rcbf_core::mpc::solve;
use rcbf_core::task::{generate_task, TaskGenConfig};
use rcbf_core::{MpcConfig, MpcProblem, Obstacle, SafetyParams, Vec3, WarmStart};

/// A ring of obstacles around a robot heading into the first one.
fn problem(obstacles: usize) -> MpcProblem {
    let obstacles = (0..obstacles)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / obstacles as f64;
            Obstacle::new(Vec3::new(4.0 + 1.4 * a.cos(), 0.0, 4.0 + 1.4 * a.sin()), 0.3).unwrap()
        })
        .collect();
    MpcProblem {
        x_hat: Vec3::new(4.0, 0.0, 4.0),
        u_prev: Vec3::new(0.3, 0.0, 0.0),
        u_des: Vec3::new(0.5, 0.0, 0.1),
        obstacles,
        safety: SafetyParams::default(),
        sigma: 0.2,
    }
}

fn barrier(c: &mut Criterion) {
    let safety = SafetyParams::default();
    let obstacle = Obstacle::new(Vec3::new(4.0, 0.0, 4.0), 0.5).unwrap();
    let params = BarrierParams::new(obstacle, &safety, 0.1).unwrap();
    let x = Vec3::new(3.1, 0.0, 4.7);
    c.bench_function("barrier/h_and_grad", |b| {
        b.iter(|| {
            let x = black_box(&x);
            (h(x, &params).unwrap(), grad_h(x, &params).unwrap())
        })
    });
}

fn mpc(c: &mut Criterion) {
    let config = MpcConfig::default();
    let mut group = c.benchmark_group("mpc_solve");
    for n in [1, 8] {
        let p = problem(n);
        group.bench_with_input(BenchmarkId::new("cold", n), &p, |b, p| {
            b.iter(|| solve(black_box(p), &config, &WarmStart::cold()))
        });
        let warm = WarmStart::from_solution(&solve(&p, &config, &WarmStart::cold()));
        group.bench_with_input(BenchmarkId::new("warm", n), &p, |b, p| {
            b.iter(|| solve(black_box(p), &config, &warm))
        });
    }
    group.finish();
}

fn closed_loop(c: &mut Criterion) {
    let safety = SafetyParams::default();
    let task = generate_task(3, &TaskGenConfig::default(), &safety).unwrap();
    let config = RunConfig::default();
    let mut group = c.benchmark_group("closed_loop");
    group.sample_size(10);
    group.bench_function("one_task", |b| b.iter(|| run_task(black_box(&task), &config)));
    group.finish();
}

criterion_group!(benches, barrier, mpc, closed_loop);
criterion_main!(benches);
