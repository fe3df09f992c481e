//! Closed-loop simulation of Thompson sampling with Langevin dynamics, plus
//! a conjugate-Gaussian posterior-sampling baseline on the same schedule.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{failure_index, naive_schedule, sample_with_rejection, step_schedule, SampleOutcome, UlaSchedule};
use crate::lqr::{
    average_cost, in_admissible_set, solve_riccati, AdmissibleSet, CostSpec, Membership,
    SystemParams, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL,
};
use crate::noise::NoiseModel;
use crate::posterior::{PotentialState, Preconditioner, PrecondMode};

pub const STATE_BLOWUP_NORM: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    pub k: usize,
    pub t_start: usize,
    pub length: usize,
}

impl EpisodeSchedule {
    pub fn last_step(&self) -> usize {
        self.t_start + self.length - 1
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.t_start && t <= self.last_step()
    }
}

/// Episode `k ≥ 1` starts at `t_k = k(k+1)/2` and lasts `T_k = k + 1` steps.
pub fn episode_schedule(k: usize) -> EpisodeSchedule {
    assert!(k >= 1, "episodes are numbered from 1");
    EpisodeSchedule { k, t_start: k * (k + 1) / 2, length: k + 1 }
}

/// Zero-mean Gaussian input perturbation applied at the last step of every
/// episode.
#[derive(Debug, Clone)]
pub struct ExcitationSpec {
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

/// Excitation variance used in the reference experiments.
pub const DEFAULT_EXCITATION_VARIANCE: f64 = 1e-4;

impl ExcitationSpec {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("excitation covariance must be positive definite".into()))?
            .l();
        Ok(Self { covariance, chol })
    }

    pub fn isotropic(n_u: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n_u, n_u) * variance)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }
}

/// `ν_t`: a Gaussian draw at the episode's final step, zero elsewhere.
pub fn excitation<R: Rng + ?Sized>(
    spec: &ExcitationSpec,
    t: usize,
    schedule: &EpisodeSchedule,
    rng: &mut R,
) -> DVector<f64> {
    debug_assert!(schedule.contains(t), "t = {t} outside episode {schedule:?}");
    if t == schedule.last_step() {
        let g = DVector::from_fn(spec.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &spec.chol * g
    } else {
        DVector::zeros(spec.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tsld,
    Psrl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tsld => "tsld",
            Algorithm::Psrl => "psrl",
        }
    }
}

/// Everything one closed-loop run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub system: SystemParams,
    pub noise: Arc<NoiseModel>,
    pub cost: CostSpec,
    pub admissible: AdmissibleSet,
    pub lambda: f64,
    pub prior_mean: DVector<f64>,
    pub horizon: usize,
    pub excitation: ExcitationSpec,
    pub max_attempts: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let (n, n_u) = (self.system.n(), self.system.n_u());
        let d = n + n_u;
        let check = |ok: bool, what: String| if ok { Ok(()) } else { Err(Error::Validation(what)) };
        check(self.noise.dim() == n, format!("noise dimension {} != n = {n}", self.noise.dim()))?;
        check(
            self.cost.q.nrows() == n && self.cost.r.nrows() == n_u,
            format!("cost matrices do not match n = {n}, n_u = {n_u}"),
        )?;
        check(self.admissible.cost == self.cost, "admissible set uses a different cost".into())?;
        check(self.prior_mean.len() == d * n, format!("prior mean length {} != d*n = {}", self.prior_mean.len(), d * n))?;
        check(self.excitation.dim() == n_u, format!("excitation dimension {} != n_u = {n_u}", self.excitation.dim()))?;
        check(self.lambda >= 1.0, format!("lambda = {} < 1", self.lambda))?;
        check(self.max_attempts >= 1, "max_attempts must be positive".into())?;
        Ok(())
    }

    /// `(m, M) = (min{m̲, 1}, max{m̄, 1})`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.noise.hessian_bounds();
        (lo.min(1.0), hi.max(1.0))
    }

    /// Optimal average cost of the true system under the noise covariance.
    pub fn optimal_cost(&self) -> Result<f64> {
        let sol = solve_riccati(&self.system, &self.cost, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER)?;
        Ok(average_cost(&sol.p_star, self.noise.covariance()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub t: usize,
    pub episode: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub nu: Vec<f64>,
    pub cost: f64,
    pub regret: f64,
    pub cum_regret: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub theta_err: f64,
    pub ula_steps: u64,
    pub attempts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: usize,
    pub t_start: usize,
    pub length: usize,
    /// Transitions in the posterior when the episode's sample was drawn.
    pub data_len: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub theta_tilde: Vec<f64>,
    pub theta_err: f64,
    pub schedule: Option<UlaSchedule>,
    pub attempts: usize,
    pub ula_steps: u64,
    /// Iterations the unpreconditioned schedule would have needed per sample.
    pub naive_steps_per_sample: u64,
    pub rejections: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub j_star: f64,
    pub rows: Vec<RunRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn cum_regret(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cum_regret).collect()
    }
}

/// Cumulative regret `R(t)` and `R(t)/√t` for `t = 1..T`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretSeries {
    pub cumulative: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn regret_series(record: &RunRecord, j_star: f64) -> RegretSeries {
    let mut out = RegretSeries::default();
    let mut acc = 0.0;
    for row in &record.rows {
        acc += row.cost - j_star;
        out.cumulative.push(acc);
        out.normalized.push(acc / (row.t as f64).sqrt());
    }
    out
}

/// Per-column conjugate posterior mean `G⁻¹(λ μᵢ + Σ z x_{next,i})` under
/// unit-variance Gaussian noise.
pub fn conjugate_posterior_mean(state: &PotentialState) -> DVector<f64> {
    let (n, d) = (state.n(), state.d());
    let mut rhs = state.prior_mean() * state.lambda();
    for s in 0..state.len() {
        let (z, x) = (state.z(s), state.x_next(s));
        for i in 0..n {
            for r in 0..d {
                rhs[i * d + r] += z[r] * x[i];
            }
        }
    }
    state.preconditioner().apply(&rhs, PrecondMode::Inverse)
}

/// Exact draws from the conjugate posterior, gated by `𝒞`.
fn sample_conjugate<R: Rng + ?Sized>(
    state: &PotentialState,
    admissible: &AdmissibleSet,
    w: &DMatrix<f64>,
    rng: &mut R,
    max_attempts: usize,
) -> Result<(DVector<f64>, Membership, usize, [usize; 4])> {
    let mean = conjugate_posterior_mean(state);
    let precond: Preconditioner = state.preconditioner();
    let (n, n_u) = (state.n(), state.d() - state.n());
    let mut rejections = [0usize; 4];
    let mut last = String::from("none");
    for attempt in 1..=max_attempts {
        let g = DVector::from_fn(state.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = &mean + precond.apply(&g, PrecondMode::InverseSqrt);
        let params = SystemParams::from_theta(theta.as_slice(), n, n_u)?;
        let m = in_admissible_set(&params, admissible, w);
        if m.admitted {
            return Ok((theta, m, attempt, rejections));
        }
        if let Some(f) = m.failure {
            rejections[failure_index(f)] += 1;
            last = format!("{f:?}");
        }
    }
    Err(Error::RejectionExhausted { attempts: max_attempts, last_failure: last })
}

/// Separate streams so that paired runs see the same process noise.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(0);
    let mut alg = ChaCha8Rng::seed_from_u64(seed);
    alg.set_stream(1);
    (env, alg)
}

pub fn run_tsld(config: &SimConfig, seed: u64) -> Result<RunRecord> {
    run(config, seed, Algorithm::Tsld)
}

pub fn run_psrl_baseline(config: &SimConfig, seed: u64) -> Result<RunRecord> {
    run(config, seed, Algorithm::Psrl)
}

pub fn run(config: &SimConfig, seed: u64, algorithm: Algorithm) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let (mut env_rng, mut alg_rng) = streams(seed);
    let sys = &config.system;
    let (n, n_u) = (sys.n(), sys.n_u());
    let theta_star = sys.theta();
    let w_cov = config.noise.covariance().clone();
    let j_star = config.optimal_cost()?;
    let (m, big_m) = config.curvature_bounds();

    let mut state = PotentialState::new(config.lambda, config.prior_mean.clone(), config.noise.clone())?;
    let mut theta_min = config.prior_mean.clone();
    let mut buffer: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let mut x = DVector::zeros(n);
    let mut t = 1usize;
    let mut cum = 0.0;
    let mut rows = Vec::with_capacity(config.horizon);
    let mut episodes = Vec::new();

    let mut k = 0usize;
    while t <= config.horizon {
        k += 1;
        let sched = episode_schedule(k);
        debug_assert_eq!(sched.t_start, t);
        state.ingest(&buffer)?;
        buffer.clear();
        let (lambda_min, lambda_max) = state.precond_spectrum();

        let (theta_tilde, membership, ula, attempts, ula_steps, rejections) = match algorithm {
            Algorithm::Tsld => {
                theta_min = state.newton_minimize(&theta_min, config.newton_tol, config.newton_max_iter)?;
                let ula = step_schedule(lambda_min, state.t(), m, big_m)?;
                let SampleOutcome { theta_tilde, attempts, total_ula_steps, membership, rejections, .. } =
                    sample_with_rejection(
                        &state,
                        &theta_min,
                        &ula,
                        &config.admissible,
                        &w_cov,
                        &mut alg_rng,
                        config.max_attempts,
                    )?;
                (theta_tilde, membership, Some(ula), attempts, total_ula_steps, rejections)
            }
            Algorithm::Psrl => {
                let (theta, membership, attempts, rejections) =
                    sample_conjugate(&state, &config.admissible, &w_cov, &mut alg_rng, config.max_attempts)?;
                (theta, membership, None, attempts, 0, rejections)
            }
        };
        let gain = membership
            .solution
            .as_ref()
            .map(|s| s.k.clone())
            .expect("admitted samples carry a Riccati solution");
        let theta_err = (&theta_tilde - &theta_star).norm();
        let (_, naive) = naive_schedule(m * lambda_min, big_m * lambda_max);
        episodes.push(EpisodeRecord {
            k,
            t_start: sched.t_start,
            length: sched.length,
            data_len: state.len(),
            lambda_min,
            lambda_max,
            theta_tilde: theta_tilde.as_slice().to_vec(),
            theta_err,
            schedule: ula,
            attempts,
            ula_steps,
            naive_steps_per_sample: naive,
            rejections,
        });

        for _ in 0..sched.length {
            if t > config.horizon {
                break;
            }
            let nu = excitation(&config.excitation, t, &sched, &mut alg_rng);
            let u = &gain * &x + &nu;
            let w = config.noise.sample(&mut env_rng)?;
            let x_next = sys.a() * &x + sys.b() * &u + w;
            let cost = config.cost.stage_cost(&x, &u);
            cum += cost - j_star;
            rows.push(RunRow {
                t,
                episode: k,
                x: x.as_slice().to_vec(),
                u: u.as_slice().to_vec(),
                nu: nu.as_slice().to_vec(),
                cost,
                regret: cost - j_star,
                cum_regret: cum,
                lambda_min,
                lambda_max,
                theta_err,
                ula_steps,
                attempts,
            });
            let mut z = DVector::zeros(n + n_u);
            z.rows_mut(0, n).copy_from(&x);
            z.rows_mut(n, n_u).copy_from(&u);
            let norm = x_next.norm();
            if !(norm <= STATE_BLOWUP_NORM) {
                return Err(Error::StateBlowup { norm, t: t + 1 });
            }
            buffer.push((z, x_next.clone()));
            x = x_next;
            t += 1;
        }
    }

    Ok(RunRecord {
        seed,
        algorithm,
        j_star,
        rows,
        episodes,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
