use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tsld_core::noise::{AsymmetricBuilder, NoiseModel, PiecewiseCurvature};
use tsld_core::{PotentialState, PrecondMode, Preset};

type Pair = (DVector<f64>, DVector<f64>);

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Closed-loop-like trajectory of the 3×3 preset driven by random inputs.
fn trajectory(rng: &mut ChaCha8Rng, noise: &NoiseModel, len: usize) -> Vec<Pair> {
    let sys = Preset::Ref3x3.system();
    let mut x = DVector::zeros(3);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let u = normal(rng, 3, 1.0);
        let next = sys.a() * &x + sys.b() * &u + noise.sample(rng).unwrap();
        let mut z = DVector::zeros(6);
        z.rows_mut(0, 3).copy_from(&x);
        z.rows_mut(3, 3).copy_from(&u);
        out.push((z, next.clone()));
        x = next;
    }
    out
}

fn state_with(noise: Arc<NoiseModel>, lambda: f64, data: &[Pair]) -> PotentialState {
    let mut st = PotentialState::new(lambda, DVector::from_element(18, 0.5), noise).unwrap();
    st.ingest(data).unwrap();
    st
}

fn inv_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = p.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn sandwich(noise: NoiseModel, trajectories: usize, thetas: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Arc::new(noise);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..trajectories {
        let len = rng.random_range(1..80);
        let data = trajectory(&mut rng, &noise, len);
        let st = state_with(noise.clone(), 5.0, &data);
        let s = inv_sqrt(&st.dense_preconditioner());
        for _ in 0..thetas {
            let theta = normal(&mut rng, 18, 1.0).add_scalar(0.5);
            let scaled = &s * st.hessian_potential(&theta) * &s;
            for v in scaled.symmetric_eigenvalues().iter() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    (lo, hi)
}

#[test]
fn curvature_sandwich_mixture() {
    let (lo, hi) = sandwich(NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap(), 10, 100, 1);
    assert!(lo >= 0.25 - 1e-8 && hi <= 1.0 + 1e-8, "[{lo}, {hi}]");
}

#[test]
fn curvature_sandwich_asymmetric() {
    let profile = PiecewiseCurvature::new(1.0, 10.0, -1.0, 1.0).unwrap();
    let noise = AsymmetricBuilder::new(3, profile).with_reservoir_size(200_000).build_seeded(2).unwrap();
    let (lo, hi) = sandwich(noise, 10, 100, 2);
    assert!(lo >= 1.0 - 1e-8 && hi <= 10.0 + 1e-8, "[{lo}, {hi}]");
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noises = [
        NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap(),
        NoiseModel::standard_gaussian(3),
        {
            let p = PiecewiseCurvature::new(1.0, 10.0, -1.0, 1.0).unwrap();
            AsymmetricBuilder::new(3, p).with_reservoir_size(200_000).build_seeded(4).unwrap()
        },
    ];
    for noise in noises {
        let noise = Arc::new(noise);
        let data = trajectory(&mut rng, &noise, 60);
        let st = state_with(noise, 5.0, &data);
        for _ in 0..20 {
            let theta = normal(&mut rng, 18, 0.3).add_scalar(0.4);
            let g = st.grad_potential(&theta);
            let fd = DVector::from_fn(18, |i, _| {
                let h = 1e-5;
                let (mut p, mut m) = (theta.clone(), theta.clone());
                p[i] += h;
                m[i] -= h;
                (st.potential(&p) - st.potential(&m)) / (2.0 * h)
            });
            let err = (&g - &fd).norm() / fd.norm().max(1.0);
            assert!(err < 1e-5, "rel err {err:.2e}");
            assert!((&g - st.grad_potential_direct(&theta)).norm() <= 1e-9 * g.norm().max(1.0));
        }
    }
}

#[test]
fn kronecker_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Arc::new(NoiseModel::standard_gaussian(3));
    let data = trajectory(&mut rng, &noise, 40);
    let st = state_with(noise, 5.0, &data);
    let p = st.dense_preconditioner();
    let expected = DMatrix::<f64>::identity(3, 3).kronecker(st.gram());
    assert_eq!(p.shape(), (18, 18));
    for i in 0..18 {
        for j in 0..18 {
            if i / 6 != j / 6 {
                assert_eq!(p[(i, j)], 0.0);
            }
        }
    }
    assert!((&p - &expected).amax() < 1e-12);
}

#[test]
fn conjugate_mode_is_ridge_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Arc::new(NoiseModel::standard_gaussian(3));
    let data = trajectory(&mut rng, &noise, 120);
    let st = state_with(noise, 5.0, &data);

    // Ridge regression per state coordinate, solved densely.
    let z = DMatrix::from_fn(data.len(), 6, |s, r| data[s].0[r]);
    let lhs = z.transpose() * &z + DMatrix::identity(6, 6) * 5.0;
    let mut ridge = DVector::zeros(18);
    for i in 0..3 {
        let y = DVector::from_fn(data.len(), |s, _| data[s].1[i]);
        let rhs = z.transpose() * y + DVector::from_element(6, 0.5 * 5.0);
        let col = lhs.clone().lu().solve(&rhs).unwrap();
        ridge.rows_mut(6 * i, 6).copy_from(&col);
    }
    let mode = st.newton_minimize(&DVector::zeros(18), 1e-9, 100).unwrap();
    assert!((&mode - &ridge).amax() < 1e-8, "{}", (&mode - &ridge).amax());
}

#[test]
fn newton_matches_gradient_descent_on_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Arc::new(NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap());
    let data = trajectory(&mut rng, &noise, 50);
    let st = state_with(noise, 5.0, &data);
    let mode = st.newton_minimize(st.prior_mean(), 1e-9, 100).unwrap();
    assert!(st.grad_potential(&mode).norm() < 1e-8);

    // Plain gradient descent with step 1/L, L = λ_max(P) ≥ ‖∇²U‖.
    let (_, lmax) = st.precond_spectrum();
    let mut theta = st.prior_mean().clone();
    for _ in 0..2_000_000 {
        let g = st.grad_potential(&theta);
        if g.norm() < 1e-10 {
            break;
        }
        theta -= g / lmax;
    }
    assert!(st.grad_potential(&theta).norm() < 1e-10);
    assert!((&mode - &theta).amax() < 1e-6);
}

#[test]
fn ingest_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Arc::new(NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap());
    let data = trajectory(&mut rng, &noise, 30);
    let whole = state_with(noise.clone(), 5.0, &data);
    let mut parts = PotentialState::new(5.0, DVector::from_element(18, 0.5), noise).unwrap();
    parts.ingest(&data[..7]).unwrap();
    parts.ingest(&[]).unwrap();
    parts.ingest(&data[7..19]).unwrap();
    for (z, x) in &data[19..] {
        parts.ingest_one(z.as_slice(), x.as_slice()).unwrap();
    }
    assert_eq!(whole.gram(), parts.gram());
    assert_eq!(whole.len(), parts.len());
    assert_eq!(whole.t(), parts.t());
    for s in 0..whole.len() {
        assert_eq!(whole.z(s), parts.z(s));
        assert_eq!(whole.x_next(s), parts.x_next(s));
    }
    let theta = normal(&mut rng, 18, 1.0);
    assert_eq!(whole.grad_potential(&theta), parts.grad_potential(&theta));
}

#[test]
fn gram_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Arc::new(NoiseModel::standard_gaussian(3));
    let data = trajectory(&mut rng, &noise, 100);
    let st = state_with(noise, 5.0, &data);
    let mut direct = DMatrix::identity(6, 6) * 5.0;
    for (z, _) in &data {
        direct += z * z.transpose();
    }
    assert!((st.gram() - &direct).norm() < 1e-10);
    let ev = st.gram().symmetric_eigenvalues();
    assert!(ev.min() >= 5.0 - 1e-10);
}

fn spd(values: &[f64], d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(d, d, values);
    &m * m.transpose() + DMatrix::identity(d, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preconditioner_multiply_back(
        values in prop::collection::vec(-2.0f64..2.0, 16),
        v in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let gram = spd(&values, 4);
        let pre = tsld_core::Preconditioner::new(&gram, 2);
        let v = DVector::from_vec(v);
        let p = DMatrix::<f64>::identity(2, 2).kronecker(&gram);
        let back = &p * pre.apply(&v, PrecondMode::Inverse);
        prop_assert!((&back - &v).norm() <= 1e-9 * v.norm().max(1.0));
        let s = pre.apply(&pre.apply(&v, PrecondMode::InverseSqrt), PrecondMode::InverseSqrt);
        prop_assert!((&s - pre.apply(&v, PrecondMode::Inverse)).norm() <= 1e-9 * v.norm().max(1.0));
    }

    #[test]
    fn spectrum_matches_dense_eigensolve(values in prop::collection::vec(-2.0f64..2.0, 9)) {
        let gram = spd(&values, 3);
        let pre = tsld_core::Preconditioner::new(&gram, 3);
        let (lo, hi) = pre.spectrum();
        let dense = DMatrix::<f64>::identity(3, 3).kronecker(&gram).symmetric_eigenvalues();
        prop_assert!((lo - dense.min()).abs() < 1e-9);
        prop_assert!((hi - dense.max()).abs() < 1e-9);
    }
}
