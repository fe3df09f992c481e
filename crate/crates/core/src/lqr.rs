//! Discrete-time LQR: Riccati solve, optimal gain, average cost, and the
//! admissible parameter set used to gate posterior samples.
//!
//! Parameters are vectorized column-by-column from `Θ = [A B]ᵀ ∈ ℝ^{d×n}`,
//! so block `i` of `theta` (entries `i*d .. (i+1)*d`) is row `i` of `[A B]`.
//! With this layout `Θᵀ z = A x + B u` for `z = (x, u)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RICCATI_TOL: f64 = 1e-10;
pub const DEFAULT_RICCATI_MAX_ITER: usize = 10_000;

/// Iterates whose Frobenius norm exceeds this are treated as diverged.
const DIVERGENCE_NORM: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemParams {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B must have {} rows, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// Rebuilds `(A, B)` from the column-stacked vector of `Θ = [A B]ᵀ`.
    pub fn from_theta(theta: &[f64], n: usize, n_u: usize) -> Result<Self> {
        let d = n + n_u;
        if theta.len() != d * n {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, expected {}",
                theta.len(),
                d * n
            )));
        }
        let a = DMatrix::from_fn(n, n, |i, j| theta[i * d + j]);
        let b = DMatrix::from_fn(n, n_u, |i, j| theta[i * d + n + j]);
        Self::new(a, b)
    }

    pub fn theta(&self) -> DVector<f64> {
        let (n, n_u) = (self.n(), self.n_u());
        let d = n + n_u;
        DVector::from_fn(d * n, |k, _| {
            let (i, j) = (k / d, k % d);
            if j < n {
                self.a[(i, j)]
            } else {
                self.b[(i, j - n)]
            }
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn d(&self) -> usize {
        self.n() + self.n_u()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        let q_min = q.clone().symmetric_eigenvalues().min();
        if q_min < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "Q must be positive semidefinite (min eigenvalue {q_min:.3e})"
            )));
        }
        let r_min = r.clone().symmetric_eigenvalues().min();
        if r_min < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "R must be positive definite (min eigenvalue {r_min:.3e})"
            )));
        }
        Ok(Self { q, r })
    }

    /// `Q = 2 I_n`, `R = I_{n_u}`.
    pub fn standard(n: usize, n_u: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n) * 2.0,
            r: DMatrix::identity(n_u, n_u),
        }
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{name} must be square")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be symmetric (max asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    /// Bound on the Euclidean norm of the vectorized parameter.
    pub s: f64,
    /// Bound on the spectral norm of the closed loop, in (0, 1).
    pub rho: f64,
    /// Bound on the optimal average cost.
    pub m_j: f64,
    pub cost: CostSpec,
}

impl AdmissibleSet {
    pub fn new(s: f64, rho: f64, m_j: f64, cost: CostSpec) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("S must be positive, got {s}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
        }
        if !(m_j > 0.0) {
            return Err(Error::InvalidArgument(format!("M_J must be positive, got {m_j}")));
        }
        Ok(Self { s, rho, m_j, cost })
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p_star: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Set by callers that know the noise covariance; see [`average_cost`].
    pub j: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// One application of the Riccati map, symmetrized.
fn riccati_map(params: &SystemParams, cost: &CostSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (params.a(), params.b());
    let at_p = a.transpose() * p;
    let bt_p = b.transpose() * p;
    let inner = &cost.r + &bt_p * b;
    let rhs = &bt_p * a;
    let sol = inner
        .cholesky()
        .ok_or(Error::SingularInnerMatrix)?
        .solve(&rhs);
    let next = &cost.q + &at_p * a - (&at_p * b) * sol;
    Ok(symmetrize(next))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Fixed-point iteration of the Riccati map from `P₀ = Q`.
///
/// Convergence is declared when `‖P − Ric(P)‖_F ≤ tol · max(1, ‖P‖_F)`.
pub fn solve_riccati(
    params: &SystemParams,
    cost: &CostSpec,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let n = params.n();
    if cost.q.nrows() != n || cost.r.nrows() != params.n_u() {
        return Err(Error::DimensionMismatch(format!(
            "cost matrices {}x{} / {}x{} do not match system (n={}, n_u={})",
            cost.q.nrows(),
            cost.q.ncols(),
            cost.r.nrows(),
            cost.r.ncols(),
            n,
            params.n_u()
        )));
    }

    let mut p = cost.q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_map(params, cost, &p)?;
        residual = (&next - &p).norm();
        p = next;
        let scale = p.norm();
        if !scale.is_finite() || scale > DIVERGENCE_NORM {
            return Err(Error::NonConvergence { residual, iterations: it });
        }
        if residual <= tol * scale.max(1.0) {
            // Report the residual of the returned iterate itself.
            let check = riccati_map(params, cost, &p)?;
            let residual = (&check - &p).norm();
            let k = gain(params, &p, &cost.r)?;
            return Ok(RiccatiSolution { p_star: p, k, j: None, residual, iterations: it });
        }
    }
    Err(Error::NonConvergence { residual, iterations: max_iter })
}

/// `K = −(R + BᵀPB)⁻¹ BᵀPA`.
pub fn gain(params: &SystemParams, p_star: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (params.a(), params.b());
    let bt_p = b.transpose() * p_star;
    let inner = r + &bt_p * b;
    let rhs = &bt_p * a;
    let lu = inner.lu();
    let sol = lu.solve(&rhs).ok_or(Error::SingularInnerMatrix)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnerMatrix);
    }
    Ok(-sol)
}

/// `J = tr(W P*)`.
pub fn average_cost(p_star: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (w * p_star).trace()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MembershipFailure {
    /// `|θ| > S`.
    Norm,
    /// The Riccati solve for `θ` failed (non-stabilizable sample).
    Riccati,
    /// `‖A + BK(θ)‖₂ > ρ`.
    ClosedLoop,
    /// `J(θ) > M_J`.
    Cost,
}

#[derive(Debug, Clone)]
pub struct Membership {
    pub admitted: bool,
    pub failure: Option<MembershipFailure>,
    pub theta_norm: f64,
    pub closed_loop_norm: Option<f64>,
    pub closed_loop_radius: Option<f64>,
    pub average_cost: Option<f64>,
    /// Present whenever the Riccati solve succeeded.
    pub solution: Option<RiccatiSolution>,
}

/// Tests `θ ∈ 𝒞` and reports which clause failed first.
pub fn in_admissible_set(theta: &SystemParams, set: &AdmissibleSet, w: &DMatrix<f64>) -> Membership {
    let theta_norm = theta.theta().norm();
    let mut out = Membership {
        admitted: false,
        failure: None,
        theta_norm,
        closed_loop_norm: None,
        closed_loop_radius: None,
        average_cost: None,
        solution: None,
    };
    if !(theta_norm <= set.s) {
        out.failure = Some(MembershipFailure::Norm);
        return out;
    }
    let mut sol = match solve_riccati(theta, &set.cost, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER) {
        Ok(sol) => sol,
        Err(_) => {
            out.failure = Some(MembershipFailure::Riccati);
            return out;
        }
    };
    let cl = theta.closed_loop(&sol.k);
    let cl_norm = spectral_norm(&cl);
    let j = average_cost(&sol.p_star, w);
    sol.j = Some(j);
    out.closed_loop_norm = Some(cl_norm);
    out.closed_loop_radius = Some(spectral_radius(&cl));
    out.average_cost = Some(j);
    out.solution = Some(sol);
    if !(cl_norm <= set.rho) {
        out.failure = Some(MembershipFailure::ClosedLoop);
    } else if !(j <= set.m_j) {
        out.failure = Some(MembershipFailure::Cost);
    } else {
        out.admitted = true;
    }
    out
}
