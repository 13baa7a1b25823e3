use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qalab_core::entangle::schmidt;
use qalab_core::entbound::{entropy_bound, maximize_entropy, TailConstraint};
use qalab_core::hamiltonian::{diagonalize, HamiltonianPath, PathConstants, PathFamily, Profile};
use qalab_core::linalg;
use qalab_core::quasiflow::{FilterFunction, GeneratorEngine};
use qalab_core::{Cut, Lattice};

fn tfim(n: usize) -> HamiltonianPath {
    HamiltonianPath::new(Lattice::chain(n).unwrap(), 2, PathFamily::Tfim { lambda: 0.5 }, Profile::Linear, PathConstants::default())
        .unwrap()
}

fn eigensolve(c: &mut Criterion) {
    let mut group = c.benchmark_group("diagonalize");
    group.sample_size(10);
    for n in [6, 8, 10] {
        let h = tfim(n).assemble::<f64>(1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| {
            b.iter(|| diagonalize(black_box(h.clone())).unwrap())
        });
    }
    group.finish();
}

fn generator_snapshot(c: &mut Criterion) {
    let path = tfim(8);
    let engine = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap());
    let spec = path.spectrum::<f64>(0.5).unwrap();
    c.bench_function("snapshot n=8", |b| b.iter(|| engine.snapshot_from::<f64>(0.5, black_box(&spec)).unwrap()));
}

fn flow_step(c: &mut Criterion) {
    let path = tfim(8);
    let engine = GeneratorEngine::new(&path, FilterFunction::spectral(0.9).unwrap());
    let k = engine.snapshot::<f64>(0.5).unwrap().skew().clone();
    let u = linalg::identity::<f64>(k.nrows());
    c.bench_function("exp step n=8", |b| b.iter(|| linalg::exp_skew_apply(k.as_ref(), 0.005, black_box(u.as_ref()))));
}

fn schmidt_cut(c: &mut Criterion) {
    let path = tfim(10);
    let psi = path.spectrum::<f64>(1.0).unwrap().ground_state();
    let cut = Cut::new(path.lattice().region(0..5).unwrap()).unwrap();
    c.bench_function("schmidt n=10", |b| b.iter(|| schmidt(black_box(&psi), &cut, 2).unwrap()));
}

fn bounds(c: &mut Criterion) {
    let tc = TailConstraint::geometric(2, 4, |n| 0.5f64.powi(n as i32), 200).unwrap();
    c.bench_function("entropy_bound geometric", |b| b.iter(|| entropy_bound(black_box(&tc)).unwrap()));
    let small = TailConstraint::new(vec![0, 2, 6, 12], vec![1.0, 0.4, 0.15], 3.0).unwrap();
    c.bench_function("maximize_entropy 12", |b| b.iter(|| maximize_entropy(black_box(&small)).unwrap()));
}

criterion_group!(benches, eigensolve, generator_snapshot, flow_step, schmidt_cut, bounds);
criterion_main!(benches);
