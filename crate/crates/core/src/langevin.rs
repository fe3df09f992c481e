//! Preconditioned unadjusted Langevin sampling of the posterior, with the
//! time-dependent stepsize / iteration schedule and rejection against the
//! admissible set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{in_admissible_set, AdmissibleSet, Membership, MembershipFailure, SystemParams};
use crate::posterior::{PotentialState, PrecondMode, Preconditioner};

pub const BLOWUP_NORM: f64 = 1e12;
pub const DEFAULT_MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UlaSchedule {
    pub gamma: f64,
    /// Iterations actually run, after flooring.
    pub n_steps: usize,
    /// `⌈4 log₂(max{λ_min, t}/λ_min) / (m γ)⌉` before flooring.
    pub raw_n_steps: usize,
    pub floored: bool,
    pub lambda_min: f64,
    pub t: usize,
    pub m: f64,
    pub big_m: f64,
}

impl UlaSchedule {
    /// A constant-stepsize schedule outside the adaptive rule (tests, tools).
    pub fn fixed(gamma: f64, n_steps: usize) -> Self {
        Self {
            gamma,
            n_steps,
            raw_n_steps: n_steps,
            floored: false,
            lambda_min: f64::NAN,
            t: 0,
            m: f64::NAN,
            big_m: f64::NAN,
        }
    }
}

/// `γ = m λ_min / (16 M² max{λ_min, t})`,
/// `N = ⌈4 log₂(max{λ_min, t}/λ_min) / (m γ)⌉`, floored at one relaxation
/// time `⌈1/(m γ)⌉`.
pub fn step_schedule(lambda_min: f64, t: usize, m: f64, big_m: f64) -> Result<UlaSchedule> {
    if !(lambda_min > 0.0) || t == 0 || !(m > 0.0 && m <= big_m) {
        return Err(Error::InvalidArgument(format!(
            "schedule needs lambda_min > 0, t >= 1, 0 < m <= M; got {lambda_min}, {t}, {m}, {big_m}"
        )));
    }
    let top = lambda_min.max(t as f64);
    let gamma = m * lambda_min / (16.0 * big_m * big_m * top);
    let raw = (4.0 * (top / lambda_min).log2() / (m * gamma)).ceil();
    let floor = (1.0 / (m * gamma)).ceil();
    let raw_n_steps = raw as usize;
    let n_steps = raw.max(floor) as usize;
    Ok(UlaSchedule {
        gamma,
        n_steps,
        raw_n_steps,
        floored: n_steps != raw_n_steps,
        lambda_min,
        t,
        m,
        big_m,
    })
}

/// Constant-stepsize schedule for unpreconditioned ULA given Hessian bounds
/// `λ_min I ⪯ ∇²U ⪯ λ_max I`: `γ = λ_min/(16 λ_max²)`, `N = ⌈64 (λ_max/λ_min)²⌉`.
pub fn naive_schedule(lambda_min_h: f64, lambda_max_h: f64) -> (f64, u64) {
    let gamma = lambda_min_h / (16.0 * lambda_max_h * lambda_max_h);
    let steps = (64.0 * lambda_max_h * lambda_max_h / (lambda_min_h * lambda_min_h)).ceil();
    (gamma, steps as u64)
}

/// Scratch buffers for one chain.
struct ChainBuffers {
    grad: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    kick: Vec<f64>,
}

impl ChainBuffers {
    fn new(dim: usize) -> Self {
        Self {
            grad: vec![0.0; dim],
            drift: vec![0.0; dim],
            noise: vec![0.0; dim],
            kick: vec![0.0; dim],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_chain<R: Rng + ?Sized, F: FnMut(&[f64])>(
    state: &PotentialState,
    precond: &Preconditioner,
    theta: &mut [f64],
    gamma: f64,
    n_steps: usize,
    buf: &mut ChainBuffers,
    rng: &mut R,
    mut visit: F,
) -> Result<()> {
    let scale = (2.0 * gamma).sqrt();
    for step in 0..n_steps {
        state.grad_into(theta, &mut buf.grad);
        precond.apply_into(&buf.grad, PrecondMode::Inverse, &mut buf.drift);
        for g in buf.noise.iter_mut() {
            *g = rng.sample(StandardNormal);
        }
        precond.apply_into(&buf.noise, PrecondMode::InverseSqrt, &mut buf.kick);
        let mut norm2 = 0.0;
        for ((th, dr), k) in theta.iter_mut().zip(&buf.drift).zip(&buf.kick) {
            *th += -gamma * dr + scale * k;
            norm2 += *th * *th;
        }
        let norm = norm2.sqrt();
        if !(norm <= BLOWUP_NORM) {
            return Err(Error::NumericalBlowup { norm, step });
        }
        visit(theta);
    }
    Ok(())
}

/// `θ_{j+1} = θ_j − γ P⁻¹∇U(θ_j) + √(2γ) P^{-1/2} g_j`, `N` times.
pub fn ula_chain<R: Rng + ?Sized>(
    state: &PotentialState,
    theta0: &DVector<f64>,
    schedule: &UlaSchedule,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let precond = state.preconditioner();
    ula_chain_with(state, &precond, theta0, schedule, rng)
}

pub fn ula_chain_with<R: Rng + ?Sized>(
    state: &PotentialState,
    precond: &Preconditioner,
    theta0: &DVector<f64>,
    schedule: &UlaSchedule,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if theta0.len() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta0 has length {}, expected {}",
            theta0.len(),
            state.dim()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("theta0 must be finite".into()));
    }
    let mut theta = theta0.clone();
    let mut buf = ChainBuffers::new(state.dim());
    run_chain(state, precond, theta.as_mut_slice(), schedule.gamma, schedule.n_steps, &mut buf, rng, |_| {})?;
    Ok(theta)
}

/// Like [`ula_chain`], calling `visit` with every iterate after its update.
pub fn ula_trace<R: Rng + ?Sized, F: FnMut(&[f64])>(
    state: &PotentialState,
    theta0: &DVector<f64>,
    schedule: &UlaSchedule,
    rng: &mut R,
    visit: F,
) -> Result<DVector<f64>> {
    if theta0.len() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta0 has length {}, expected {}",
            theta0.len(),
            state.dim()
        )));
    }
    let precond = state.preconditioner();
    let mut theta = theta0.clone();
    let mut buf = ChainBuffers::new(state.dim());
    run_chain(state, &precond, theta.as_mut_slice(), schedule.gamma, schedule.n_steps, &mut buf, rng, visit)?;
    Ok(theta)
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub theta_tilde: DVector<f64>,
    pub attempts: usize,
    pub total_ula_steps: u64,
    pub schedule: UlaSchedule,
    /// Membership report of the accepted sample (carries its Riccati solution).
    pub membership: Membership,
    /// Rejections by failed clause: norm, Riccati, closed loop, cost.
    pub rejections: [usize; 4],
}

pub(crate) fn failure_index(f: MembershipFailure) -> usize {
    match f {
        MembershipFailure::Norm => 0,
        MembershipFailure::Riccati => 1,
        MembershipFailure::ClosedLoop => 2,
        MembershipFailure::Cost => 3,
    }
}

/// Restarts the chain from `theta_min` until the output lies in `𝒞`.
#[allow(clippy::too_many_arguments)]
pub fn sample_with_rejection<R: Rng + ?Sized>(
    state: &PotentialState,
    theta_min: &DVector<f64>,
    schedule: &UlaSchedule,
    admissible: &AdmissibleSet,
    w: &DMatrix<f64>,
    rng: &mut R,
    max_attempts: usize,
) -> Result<SampleOutcome> {
    let precond = state.preconditioner();
    let (n, n_u) = (state.n(), state.d() - state.n());
    let mut rejections = [0usize; 4];
    let mut last_failure = String::from("none");
    for attempt in 1..=max_attempts {
        let theta = ula_chain_with(state, &precond, theta_min, schedule, rng)?;
        let params = SystemParams::from_theta(theta.as_slice(), n, n_u)?;
        let membership = in_admissible_set(&params, admissible, w);
        if membership.admitted {
            return Ok(SampleOutcome {
                theta_tilde: theta,
                attempts: attempt,
                total_ula_steps: attempt as u64 * schedule.n_steps as u64,
                schedule: *schedule,
                membership,
                rejections,
            });
        }
        if let Some(f) = membership.failure {
            rejections[failure_index(f)] += 1;
            last_failure = format!("{f:?}");
        }
    }
    Err(Error::RejectionExhausted { attempts: max_attempts, last_failure })
}
