use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use tsld_core::noise::{AsymmetricBuilder, NoiseKind, NoiseModel, PiecewiseCurvature};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn asymmetric(n: usize, big_m: f64) -> NoiseModel {
    let profile = PiecewiseCurvature::new(1.0, big_m, -1.0, 1.0).unwrap();
    AsymmetricBuilder::new(n, profile).build_seeded(11).unwrap()
}

fn models() -> Vec<(&'static str, NoiseModel)> {
    let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 0.5]);
    vec![
        ("gaussian-identity", NoiseModel::standard_gaussian(3)),
        ("gaussian-correlated", NoiseModel::gaussian(cov).unwrap()),
        ("mixture-3", NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap()),
        ("mixture-10", NoiseModel::mixture(DVector::from_element(10, 0.125)).unwrap()),
        ("asymmetric-3", asymmetric(3, 10.0)),
    ]
}

fn fd_grad(model: &NoiseModel, w: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(w.len(), |i, _| {
        let (mut p, mut m) = (w.clone(), w.clone());
        p[i] += h;
        m[i] -= h;
        (model.log_pdf(p.as_slice()) - model.log_pdf(m.as_slice())) / (2.0 * h)
    })
}

fn fd_hessian(model: &NoiseModel, w: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = w.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut p, mut m) = (w.clone(), w.clone());
        p[j] += h;
        m[j] -= h;
        let col = (model.log_pdf_grad(&p) - model.log_pdf_grad(&m)) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

#[test]
fn score_matches_central_differences() {
    let mut r = rng(1);
    for (name, model) in models() {
        for _ in 0..100 {
            let w = normal(&mut r, model.dim(), 1.5);
            let g = model.log_pdf_grad(&w);
            let fd = fd_grad(&model, &w, 1e-5);
            let err = (&g - &fd).norm() / fd.norm().max(1.0);
            assert!(err < 1e-4, "{name}: rel err {err:.2e} at {w}");
        }
    }
}

#[test]
fn hessian_matches_differentiated_score() {
    let mut r = rng(2);
    for (name, model) in models() {
        for _ in 0..100 {
            let w = normal(&mut r, model.dim(), 1.5);
            let h = model.log_pdf_hessian(&w);
            let fd = fd_hessian(&model, &w, 1e-6);
            let err = (&h - &fd).norm() / fd.norm().max(1.0);
            assert!(err < 1e-4, "{name}: rel err {err:.2e}");
        }
    }
}

#[test]
fn curvature_certificate() {
    let mut r = rng(3);
    for (name, model) in models() {
        let (lo, hi) = model.hessian_bounds();
        for _ in 0..1000 {
            let w = normal(&mut r, model.dim(), 3.0);
            let neg = -model.log_pdf_hessian(&w);
            for ev in neg.symmetric_eigenvalues().iter() {
                assert!(*ev >= lo - 1e-8 && *ev <= hi + 1e-8, "{name}: eigenvalue {ev} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn reference_bounds() {
    assert_eq!(NoiseModel::standard_gaussian(3).hessian_bounds(), (1.0, 1.0));
    let (lo, hi) = NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap().hessian_bounds();
    assert!((lo - 0.25).abs() < 1e-15 && hi == 1.0);
    let (lo, hi) = NoiseModel::mixture(DVector::from_element(10, 0.125)).unwrap().hessian_bounds();
    assert!((lo - 27.0 / 32.0).abs() < 1e-15 && hi == 1.0);
    assert_eq!(asymmetric(3, 10.0).hessian_bounds(), (1.0, 10.0));
}

#[test]
fn gaussian_identity_score_is_exact() {
    let model = NoiseModel::standard_gaussian(4);
    let mut r = rng(4);
    for _ in 0..100 {
        let w = normal(&mut r, 4, 2.0);
        assert_eq!(model.log_pdf_grad(&w), -&w);
    }
}

#[test]
fn mixture_score_is_odd() {
    let model = NoiseModel::mixture(DVector::from_element(3, 0.5)).unwrap();
    let mut r = rng(5);
    for _ in 0..100 {
        let w = normal(&mut r, 3, 2.0);
        let diff = model.log_pdf_grad(&(-&w)) + model.log_pdf_grad(&w);
        assert!(diff.amax() < 1e-14);
    }
}

#[test]
fn mixture_score_at_offset_point() {
    let a = DVector::from_element(3, 0.5);
    let model = NoiseModel::mixture(a.clone()).unwrap();
    let a2 = a.norm_squared();
    let expected = -(&a - &a + &a * (2.0 / (1.0 + (2.0 * a2).exp())));
    let g = model.log_pdf_grad(&a);
    assert!((&g - &expected).norm() < 1e-14);
    let fd = fd_grad(&model, &a, 1e-5);
    assert!((&g - &fd).norm() / g.norm() < 1e-6);
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

const KS_1PCT: f64 = 1.628;

#[test]
fn gaussian_sampler_matches_cdf() {
    let model = NoiseModel::standard_gaussian(3);
    let mut r = rng(6);
    let draws: Vec<DVector<f64>> = (0..100_000).map(|_| model.sample(&mut r).unwrap()).collect();
    let std = Normal::new(0.0, 1.0).unwrap();
    for i in 0..3 {
        let xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 4.0 / (1e5f64).sqrt());
        let d = ks_statistic(xs, |x| std.cdf(x));
        assert!(d * (1e5f64).sqrt() < KS_1PCT, "coordinate {i}: D = {d}");
    }
}

#[test]
fn mixture_sampler_matches_cdf_and_covariance() {
    let a = DVector::from_element(3, 0.5);
    let model = NoiseModel::mixture(a.clone()).unwrap();
    let mut r = rng(7);
    let n = 100_000;
    let draws: Vec<DVector<f64>> = (0..n).map(|_| model.sample(&mut r).unwrap()).collect();
    let std = Normal::new(0.0, 1.0).unwrap();
    for i in 0..3 {
        let xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let ai = a[i];
        let d = ks_statistic(xs, |x| 0.5 * std.cdf(x - ai) + 0.5 * std.cdf(x + ai));
        assert!(d * (n as f64).sqrt() < KS_1PCT, "coordinate {i}: D = {d}");
    }
    let mut cov = DMatrix::zeros(3, 3);
    for d in &draws {
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let expected = DMatrix::identity(3, 3) + &a * a.transpose();
    assert!((&cov - &expected).amax() < 0.03, "{cov}");
    assert!((model.covariance() - &expected).amax() < 1e-15);
}

#[test]
fn asymmetric_draws_are_centered() {
    let model = asymmetric(3, 10.0);
    let NoiseKind::Asymmetric(asym) = model.kind() else { panic!("wrong kind") };
    let res = asym.reservoir();
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    assert!(mean.abs() < 1e-12);

    let mut r = rng(8);
    let n = 100_000;
    let last: Vec<f64> = (0..n).map(|_| model.sample(&mut r).unwrap()[2]).collect();
    let m = last.iter().sum::<f64>() / n as f64;
    let var = model.covariance()[(2, 2)];
    assert!(m.abs() < 4.0 * (var / n as f64).sqrt(), "mean {m}");
}

#[test]
fn asymmetric_regimes() {
    let model = asymmetric(3, 10.0);
    let NoiseKind::Asymmetric(asym) = model.kind() else { panic!("wrong kind") };
    let (lo_knot, hi_knot) = asym.knots();
    let mut w = DVector::zeros(3);
    w[2] = lo_knot - 0.5;
    assert!((model.log_pdf_hessian(&w)[(2, 2)] + 1.0).abs() < 1e-12);
    w[2] = hi_knot + 0.5;
    assert!((model.log_pdf_hessian(&w)[(2, 2)] + 10.0).abs() < 1e-12);
}

#[test]
fn equal_curvatures_reduce_to_gaussian() {
    let profile = PiecewiseCurvature::new(2.0, 2.0, -1.0, 1.0).unwrap();
    let model = AsymmetricBuilder::new(3, profile).build_seeded(3).unwrap();
    let cov = model.covariance();
    assert_eq!(cov[(0, 0)], 1.0);
    assert_eq!(cov[(1, 1)], 1.0);
    assert!((cov[(2, 2)] - 0.5).abs() < 0.05 * 0.5, "{}", cov[(2, 2)]);
}

#[test]
fn ten_dimensional_mask() {
    let profile = PiecewiseCurvature::new(1.0, 2.0, -1.0, 1.0).unwrap();
    let mask: Vec<bool> = (0..10).map(|i| i >= 5).collect();
    let model = AsymmetricBuilder::new(10, profile)
        .with_mask(mask)
        .with_reservoir_size(200_000)
        .build_seeded(5)
        .unwrap();
    assert_eq!(model.hessian_bounds(), (1.0, 2.0));
    let cov = model.covariance();
    for i in 0..5 {
        assert_eq!(cov[(i, i)], 1.0);
    }
    for i in 5..10 {
        assert!(cov[(i, i)] > 0.5 && cov[(i, i)] < 1.0);
    }
}
