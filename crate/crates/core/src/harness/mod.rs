//! Experiment plumbing: configuration, seed batches, CSV and plot output,
//! and a quick self-test.

pub mod batch;
pub mod config;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::langevin::{ula_trace, UlaSchedule};
use crate::lqr::{solve_riccati, spectral_radius, CostSpec, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL};
use crate::noise::NoiseModel;
use crate::posterior::PotentialState;
use crate::presets::Preset;
use crate::simulator::{episode_schedule, run_tsld};

pub use batch::{
    aggregate, compare_iteration_counts, emit_plots, run_batch, run_seeds, write_outputs, AggregateReport,
    EpisodeAggregate, IterationRow, SeedFailure, SEED_CSV_COLUMNS,
};
pub use config::{load_config, parse_config, ExperimentConfig, NoiseSpec, ScalarOrVec, SystemSource};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Closed-loop spectral radii of the optimal controllers on the presets.
pub const PRESET_RADII: [(Preset, f64); 3] =
    [(Preset::Ref3x3, 0.3365), (Preset::Ref5x5, 0.3187), (Preset::Ref10x10, 0.3839)];

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn riccati_check() -> Check {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (preset, expected) in PRESET_RADII {
        let sys = preset.system();
        let cost = CostSpec::standard(sys.n(), sys.n_u());
        match solve_riccati(&sys, &cost, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER) {
            Ok(sol) => {
                let rho = spectral_radius(&sys.closed_loop(&sol.k));
                worst = worst.max((rho - expected).abs());
                detail.push(format!("{}: {rho:.4}", preset.name()));
            }
            Err(e) => return check("riccati_radii", false, format!("{}: {e}", preset.name())),
        }
    }
    check("riccati_radii", worst <= 5e-4, detail.join(", "))
}

fn central_difference(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn mixture_state(rng: &mut ChaCha8Rng, len: usize) -> PotentialState {
    let noise = Arc::new(NoiseModel::mixture(DVector::from_element(3, 0.5)).expect("valid offset"));
    let mut st = PotentialState::new(5.0, DVector::from_element(18, 0.5), noise.clone()).expect("valid prior");
    let theta = Preset::Ref3x3.system().theta();
    let params = crate::lqr::SystemParams::from_theta(theta.as_slice(), 3, 3).expect("preset");
    let mut x = DVector::zeros(3);
    for _ in 0..len {
        let u = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = noise.sample(rng).expect("mixture sampling");
        let next = params.a() * &x + params.b() * &u + w;
        let mut z = DVector::zeros(6);
        z.rows_mut(0, 3).copy_from(&x);
        z.rows_mut(3, 3).copy_from(&u);
        st.ingest_one(z.as_slice(), next.as_slice()).expect("dimensions agree");
        x = next;
    }
    st
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Check {
    let noise = NoiseModel::mixture(DVector::from_element(3, 0.5)).expect("valid offset");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = DVector::from_fn(3, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let fd = central_difference(&|v| noise.log_pdf(v.as_slice()), &w, 1e-5);
        worst = worst.max(rel_err(&noise.log_pdf_grad(&w), &fd));
    }
    let st = mixture_state(rng, 40);
    for _ in 0..10 {
        let theta = DVector::from_fn(18, |_, _| 0.5 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let fd = central_difference(&|v| st.potential(v), &theta, 1e-5);
        worst = worst.max(rel_err(&st.grad_potential(&theta), &fd));
    }
    check("finite_differences", worst <= 1e-4, format!("max relative error {worst:.2e}"))
}

fn sandwich_check(rng: &mut ChaCha8Rng) -> Check {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..5 {
        let st = mixture_state(rng, 30);
        let p = st.dense_preconditioner();
        let p_inv_sqrt = {
            let eig = p.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
        };
        for _ in 0..4 {
            let theta = DVector::from_fn(18, |_, _| rng.sample::<f64, _>(StandardNormal));
            let h = st.hessian_potential(&theta);
            let scaled = &p_inv_sqrt * h * &p_inv_sqrt;
            for v in scaled.symmetric_eigenvalues().iter() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    check(
        "curvature_sandwich",
        lo >= 0.25 - 1e-8 && hi <= 1.0 + 1e-8,
        format!("eigenvalues in [{lo:.6}, {hi:.6}]"),
    )
}

fn stationary_variance_check(rng: &mut ChaCha8Rng) -> Check {
    let gamma = 0.025;
    let noise = Arc::new(NoiseModel::standard_gaussian(1));
    let st = PotentialState::new(1.0, DVector::zeros(2), noise).expect("valid prior");
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
    let burn = 1_000usize;
    let mut step = 0usize;
    let res = ula_trace(&st, &DVector::zeros(2), &UlaSchedule::fixed(gamma, 1_000_000 + burn), rng, |th| {
        step += 1;
        if step > burn {
            s1 += th[0];
            s2 += th[0] * th[0];
            n += 1.0;
        }
    });
    if let Err(e) = res {
        return check("ula_stationary_variance", false, e.to_string());
    }
    let var = s2 / n - (s1 / n).powi(2);
    let target = 1.0 / (1.0 - gamma / 2.0);
    let rel = (var - target).abs() / target;
    check("ula_stationary_variance", rel <= 0.02, format!("variance {var:.5} vs {target:.5}"))
}

fn schedule_check() -> Check {
    let ok = (1..=100).all(|k| {
        let s = episode_schedule(k);
        s.t_start == k * (k + 1) / 2 && s.length == k + 1 && episode_schedule(k + 1).t_start == s.t_start + s.length
    });
    check("episode_schedule", ok, "k = 1..100".into())
}

fn determinism_check() -> Check {
    let cfg = ExperimentConfig::preset_mixture(Preset::Ref3x3, 40, vec![7]);
    let outcome = cfg.to_sim().and_then(|sim| Ok((run_tsld(&sim, 7)?, run_tsld(&sim, 7)?)));
    match outcome {
        Ok((a, b)) => {
            let same = a.rows.len() == b.rows.len()
                && a.rows.iter().zip(&b.rows).all(|(x, y)| x.cost == y.cost && x.x == y.x && x.u == y.u);
            check("seed_determinism", same, format!("{} rows", a.rows.len()))
        }
        Err(e) => check("seed_determinism", false, e.to_string()),
    }
}

/// Fast subset of the property suites; every check should pass.
pub fn selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    vec![
        riccati_check(),
        gradient_check(&mut rng),
        sandwich_check(&mut rng),
        stationary_variance_check(&mut rng),
        schedule_check(),
        determinism_check(),
    ]
}
