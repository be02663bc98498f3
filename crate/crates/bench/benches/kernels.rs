use std::hint::black_box;

use covar_core::covariance::build_system;
use covar_core::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn pauli_multiply(c: &mut Criterion) {
    let a: PauliString = "XYZIXYZIXYZIXYZI".parse().unwrap();
    let b: PauliString = "ZZXXYYIIZZXXYYII".parse().unwrap();
    c.bench_function("pauli_multiply_16q", |bench| {
        bench.iter(|| black_box(&a).multiply(black_box(&b)).unwrap())
    });
}

fn rotation(c: &mut Criterion) {
    let mut group = c.benchmark_group("pauli_rotation");
    for n in [6usize, 10, 14] {
        let p: PauliString = "XZ".repeat(n / 2).parse().unwrap();
        let mut state = Statevector::random(n, &mut rng::seeded(1)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| state.apply_pauli_rotation(black_box(&p), 0.3))
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("lm_step_nu100");
    let mut r = rng::seeded(2);
    for n_c in [500usize, 5_000] {
        let stacked = StackedSystem {
            jacobian: DMatrix::from_fn(2 * n_c, 100, |_, _| r.random_range(-1.0..1.0)),
            residual: DVector::from_fn(2 * n_c, |_, _| r.random_range(-1.0..1.0)),
        };
        group.bench_with_input(BenchmarkId::from_parameter(n_c), &stacked, |bench, s| {
            bench.iter(|| lm_step(s, 1e-4, Regularizer::Identity, 1.0).unwrap())
        });
    }
    group.finish();
}

fn covariance_system(c: &mut Criterion) {
    let (task, theta) = make_recompilation(6, 2, 0, 0.3).unwrap();
    let constraints = OperatorPool::enumerate(6, 2)
        .unwrap()
        .sample_seeded(60, 3)
        .unwrap();
    let exact = ExactProvider::new();
    c.bench_function("covariance_system_6q_60c", |bench| {
        bench.iter(|| {
            build_system(
                &exact,
                task.circuit(),
                &theta,
                &constraints,
                &task.hamiltonian,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, pauli_multiply, rotation, solve, covariance_system);
criterion_main!(benches);
