use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tsld_core::lqr::{solve_riccati, CostSpec, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL};
use tsld_core::{ula_chain, NoiseModel, PotentialState, Preset, UlaSchedule};

fn mixture_state(len: usize) -> PotentialState {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Arc::new(NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap());
    let mut st = PotentialState::new(5.0, DVector::from_element(18, 0.5), noise).unwrap();
    for _ in 0..len {
        let z: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        st.ingest_one(&z, &x).unwrap();
    }
    st
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("potential_gradient");
    for len in [100, 1000, 2000] {
        let st = mixture_state(len);
        let theta = DVector::from_element(18, 0.3);
        let mut out = vec![0.0; 18];
        group.bench_with_input(BenchmarkId::new("structured", len), &len, |b, _| {
            b.iter(|| st.grad_into(black_box(theta.as_slice()), &mut out))
        });
        group.bench_with_input(BenchmarkId::new("direct", len), &len, |b, _| {
            b.iter(|| st.grad_potential_direct(black_box(&theta)))
        });
    }
    group.finish();
}

fn chain(c: &mut Criterion) {
    let st = mixture_state(1000);
    let theta = DVector::from_element(18, 0.3);
    let schedule = UlaSchedule::fixed(1e-3, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("ula_chain_100_steps_t1000", |b| {
        b.iter(|| ula_chain(&st, black_box(&theta), &schedule, &mut rng).unwrap())
    });
}

fn riccati(c: &mut Criterion) {
    let mut group = c.benchmark_group("riccati");
    for preset in [Preset::Ref3x3, Preset::Ref5x5, Preset::Ref10x10] {
        let sys = preset.system();
        let cost = CostSpec::standard(sys.n(), sys.n_u());
        group.bench_function(preset.name(), |b| {
            b.iter(|| solve_riccati(black_box(&sys), &cost, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, chain, riccati);
criterion_main!(benches);
