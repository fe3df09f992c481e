//! Log-posterior potential over the vectorized system parameter.
//!
//! `U_t(θ) = (λ/2)|θ − θ₀|² − Σ_s log p_w(x_{s+1} − Θᵀ z_s)`, with the
//! block-Kronecker preconditioner `P_t = I_n ⊗ G_t`, `G_t = λ I_d + Σ_s z_s z_sᵀ`.
//!
//! The gradient and Hessian are evaluated from sufficient statistics
//! (`Σ z zᵀ`, `Σ z x_nextᵀ`) plus one scalar per stored transition and noise
//! ridge. The `*_direct` variants loop over transitions with the pointwise
//! noise score and serve as the reference path.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::noise::{NoiseModel, RidgeProfile, ScoreStructure};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;
const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct PotentialState {
    lambda: f64,
    prior_mean: DVector<f64>,
    n: usize,
    d: usize,
    /// Row-major `t × d` regressors.
    zs: Vec<f64>,
    /// Row-major `t × n` successor states.
    xs: Vec<f64>,
    gram: DMatrix<f64>,
    /// `Σ z x_nextᵀ`, `d × n`.
    zx: DMatrix<f64>,
    noise: Arc<NoiseModel>,
    structure: ScoreStructure,
    /// Per ridge `j`, the values `aⱼᵀ x_next_s`.
    ridge_offsets: Vec<Vec<f64>>,
    t: usize,
}

impl PotentialState {
    /// `U₁(θ) = (λ/2)|θ − prior_mean|²`; `d` is inferred from the mean length.
    pub fn new(lambda: f64, prior_mean: DVector<f64>, noise: Arc<NoiseModel>) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(Error::InvalidLambda(lambda));
        }
        let n = noise.dim();
        if prior_mean.len() % n != 0 || prior_mean.len() <= n * n {
            return Err(Error::DimensionMismatch(format!(
                "prior mean length {} is not d*n with n = {n} and d > n",
                prior_mean.len()
            )));
        }
        let d = prior_mean.len() / n;
        let structure = noise.score_structure();
        let ridge_offsets = vec![Vec::new(); structure.ridges.len()];
        Ok(Self {
            lambda,
            prior_mean,
            n,
            d,
            zs: Vec::new(),
            xs: Vec::new(),
            gram: DMatrix::identity(d, d) * lambda,
            zx: DMatrix::zeros(d, n),
            noise,
            structure,
            ridge_offsets,
            t: 1,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    /// Current timestep: one more than the number of ingested transitions.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.zs.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn z(&self, s: usize) -> &[f64] {
        &self.zs[s * self.d..(s + 1) * self.d]
    }

    pub fn x_next(&self, s: usize) -> &[f64] {
        &self.xs[s * self.n..(s + 1) * self.n]
    }

    /// Appends one transition `(z_s, x_{s+1})`.
    pub fn ingest_one(&mut self, z: &[f64], x_next: &[f64]) -> Result<()> {
        if z.len() != self.d || x_next.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "transition has |z| = {}, |x_next| = {}; expected {} and {}",
                z.len(),
                x_next.len(),
                self.d,
                self.n
            )));
        }
        if z.iter().chain(x_next).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("transition contains non-finite values".into()));
        }
        for i in 0..self.d {
            for j in 0..self.d {
                self.gram[(i, j)] += z[i] * z[j];
            }
            for j in 0..self.n {
                self.zx[(i, j)] += z[i] * x_next[j];
            }
        }
        for (offsets, ridge) in self.ridge_offsets.iter_mut().zip(&self.structure.ridges) {
            offsets.push(x_next.iter().zip(ridge.direction.iter()).map(|(x, a)| x * a).sum());
        }
        self.zs.extend_from_slice(z);
        self.xs.extend_from_slice(x_next);
        self.t += 1;
        Ok(())
    }

    /// Appends a batch; the state is untouched if any pair is malformed.
    pub fn ingest(&mut self, batch: &[(DVector<f64>, DVector<f64>)]) -> Result<()> {
        for (z, x) in batch {
            if z.len() != self.d || x.len() != self.n {
                return Err(Error::DimensionMismatch(format!(
                    "transition has |z| = {}, |x_next| = {}; expected {} and {}",
                    z.len(),
                    x.len(),
                    self.d,
                    self.n
                )));
            }
        }
        for (z, x) in batch {
            self.ingest_one(z.as_slice(), x.as_slice())?;
        }
        Ok(())
    }

    /// `λ I + Σ z zᵀ` recomputed from the stored regressors.
    pub fn recompute_gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::identity(self.d, self.d) * self.lambda;
        for s in 0..self.len() {
            let z = DVector::from_column_slice(self.z(s));
            g += &z * z.transpose();
        }
        g
    }

    /// Dense `P_t = I_n ⊗ G_t`.
    pub fn dense_preconditioner(&self) -> DMatrix<f64> {
        let dn = self.dim();
        let mut p = DMatrix::zeros(dn, dn);
        for blk in 0..self.n {
            p.view_mut((blk * self.d, blk * self.d), (self.d, self.d))
                .copy_from(&self.gram);
        }
        p
    }

    /// `w_s = x_{s+1} − Θᵀ z_s`.
    pub fn residual(&self, theta: &[f64], s: usize, out: &mut [f64]) {
        let (z, x) = (self.z(s), self.x_next(s));
        for (i, o) in out.iter_mut().enumerate() {
            let col = &theta[i * self.d..(i + 1) * self.d];
            *o = x[i] - col.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn check_theta(&self, theta: &[f64]) {
        assert_eq!(theta.len(), self.dim(), "theta must have length d*n");
    }

    pub fn potential(&self, theta: &DVector<f64>) -> f64 {
        self.check_theta(theta.as_slice());
        let mut u = 0.5 * self.lambda * (theta - &self.prior_mean).norm_squared();
        let mut w = vec![0.0; self.n];
        for s in 0..self.len() {
            self.residual(theta.as_slice(), s, &mut w);
            u -= self.noise.log_pdf(&w);
        }
        u
    }

    /// Writes `∇U(θ)` into `out`.
    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        self.check_theta(theta);
        let (n, d) = (self.n, self.d);
        for ((o, th), mu) in out.iter_mut().zip(theta).zip(self.prior_mean.iter()) {
            *o = self.lambda * (th - mu);
        }
        if self.is_empty() {
            return;
        }

        // (Σ z zᵀ Θ − Σ z x_nextᵀ) Λ
        let mut lin = vec![0.0; d * n];
        for i in 0..n {
            let col = &theta[i * d..(i + 1) * d];
            for r in 0..d {
                let mut acc = -self.zx[(r, i)];
                for c in 0..d {
                    let g = if r == c { self.gram[(r, c)] - self.lambda } else { self.gram[(r, c)] };
                    acc += g * col[c];
                }
                lin[i * d + r] = acc;
            }
        }
        let prec = &self.structure.precision;
        for i in 0..n {
            for k in 0..n {
                let l = prec[(k, i)];
                if l != 0.0 {
                    for r in 0..d {
                        out[i * d + r] += lin[k * d + r] * l;
                    }
                }
            }
        }

        // + Σⱼ (Σ_s z_s Φⱼ'(sⱼ)) aⱼᵀ with sⱼ = aⱼᵀ x_next − z_sᵀ Θ aⱼ
        let mut proj = vec![0.0; d];
        let mut acc = vec![0.0; d];
        let mut svals = vec![0.0; self.len()];
        for (ridge, offsets) in self.structure.ridges.iter().zip(&self.ridge_offsets) {
            let a = ridge.direction.as_slice();
            proj.iter_mut().for_each(|p| *p = 0.0);
            for (i, &ai) in a.iter().enumerate() {
                if ai != 0.0 {
                    for r in 0..d {
                        proj[r] += theta[i * d + r] * ai;
                    }
                }
            }
            match d {
                6 => ridge_pass::<6>(&self.zs, offsets, &proj, ridge.profile, &mut svals, &mut acc),
                10 => ridge_pass::<10>(&self.zs, offsets, &proj, ridge.profile, &mut svals, &mut acc),
                20 => ridge_pass::<20>(&self.zs, offsets, &proj, ridge.profile, &mut svals, &mut acc),
                _ => ridge_pass_dyn(&self.zs, offsets, &proj, ridge.profile, &mut svals, &mut acc),
            }
            for (i, &ai) in a.iter().enumerate() {
                if ai != 0.0 {
                    for r in 0..d {
                        out[i * d + r] += acc[r] * ai;
                    }
                }
            }
        }
    }

    pub fn grad_potential(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.grad_into(theta.as_slice(), out.as_mut_slice());
        out
    }

    /// Reference gradient: per-transition loop over the pointwise score.
    pub fn grad_potential_direct(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.check_theta(theta.as_slice());
        let (n, d) = (self.n, self.d);
        let mut out = (theta - &self.prior_mean) * self.lambda;
        let mut w = vec![0.0; n];
        let mut score = vec![0.0; n];
        for s in 0..self.len() {
            self.residual(theta.as_slice(), s, &mut w);
            self.noise.log_pdf_grad_into(&w, &mut score);
            let z = self.z(s);
            for i in 0..n {
                for r in 0..d {
                    // ∂/∂Θ of −log p_w(x − Θᵀz) is z · score_iᵀ.
                    out[i * d + r] += z[r] * score[i];
                }
            }
        }
        out
    }

    /// `λ I + Λ ⊗ Σ z zᵀ − Σⱼ (aⱼ aⱼᵀ) ⊗ Σ_s Φⱼ''(sⱼ) z_s z_sᵀ`.
    pub fn hessian_potential(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self.check_theta(theta.as_slice());
        let (n, d) = (self.n, self.d);
        let dn = self.dim();
        let data_gram = &self.gram - DMatrix::identity(d, d) * self.lambda;
        let mut h = DMatrix::identity(dn, dn) * self.lambda;
        let prec = &self.structure.precision;
        for i in 0..n {
            for k in 0..n {
                let l = prec[(i, k)];
                if l != 0.0 {
                    let mut blk = h.view_mut((i * d, k * d), (d, d));
                    blk += &data_gram * l;
                }
            }
        }
        let mut proj = DVector::zeros(d);
        for (ridge, offsets) in self.structure.ridges.iter().zip(&self.ridge_offsets) {
            let a = &ridge.direction;
            proj.fill(0.0);
            for i in 0..n {
                if a[i] != 0.0 {
                    proj += DVector::from_column_slice(&theta.as_slice()[i * d..(i + 1) * d]) * a[i];
                }
            }
            let mut weighted = DMatrix::zeros(d, d);
            for (z, &c) in self.zs.chunks_exact(d).zip(offsets) {
                let s = c - z.iter().zip(proj.iter()).map(|(x, y)| x * y).sum::<f64>();
                let w2 = ridge.profile.second_deriv(s);
                if w2 != 0.0 {
                    for r in 0..d {
                        for q in 0..d {
                            weighted[(r, q)] += w2 * z[r] * z[q];
                        }
                    }
                }
            }
            for i in 0..n {
                for k in 0..n {
                    let aa = a[i] * a[k];
                    if aa != 0.0 {
                        let mut blk = h.view_mut((i * d, k * d), (d, d));
                        blk -= &weighted * aa;
                    }
                }
            }
        }
        h
    }

    /// Reference Hessian `λ I − Σ_s ∇²log p_w(w_s) ⊗ z_s z_sᵀ`.
    pub fn hessian_potential_direct(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self.check_theta(theta.as_slice());
        let n = self.n;
        let dn = self.dim();
        let mut h = DMatrix::identity(dn, dn) * self.lambda;
        let mut w = vec![0.0; n];
        for s in 0..self.len() {
            self.residual(theta.as_slice(), s, &mut w);
            let neg_hess = -self.noise.log_pdf_hessian(&DVector::from_column_slice(&w));
            let z = DVector::from_column_slice(self.z(s));
            let zz = &z * z.transpose();
            h += neg_hess.kronecker(&zz);
        }
        h
    }

    /// Unique minimizer of `U_t` by damped Newton with Armijo backtracking.
    pub fn newton_minimize(&self, theta0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
        self.check_theta(theta0.as_slice());
        let mut theta = theta0.clone();
        let mut value = self.potential(&theta);
        let mut grad = self.grad_potential(&theta);
        // Rounding floor of the gradient evaluation; only binds for very stiff
        // priors or very large data.
        let lmax = self.precond_spectrum().1;
        let floor = |theta: &DVector<f64>| 64.0 * f64::EPSILON * lmax * theta.norm().max(1.0);
        for _ in 0..max_iter {
            let gnorm = grad.norm();
            if gnorm <= tol.max(floor(&theta)) {
                return Ok(theta);
            }
            let hess = self.hessian_potential(&theta);
            let step = match hess.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => -&grad,
            };
            // A stiff prior can leave the gradient above `tol` through rounding
            // alone; once the Newton step is below the resolution of θ, stop.
            if step.norm() <= 4.0 * f64::EPSILON * theta.norm().max(1.0) {
                return Ok(theta);
            }
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let cand = &theta + &step * alpha;
                let cand_value = self.potential(&cand);
                let armijo = cand_value <= value + ARMIJO_SLOPE * alpha * slope;
                // Near the optimum the decrease drops below the resolution of U.
                let flat = (cand_value - value).abs() <= 1e-12 * value.abs().max(1.0);
                let cand_grad = if armijo || flat { Some(self.grad_potential(&cand)) } else { None };
                if let Some(cg) = cand_grad {
                    if armijo || cg.norm() < gnorm {
                        theta = cand;
                        value = cand_value;
                        grad = cg;
                        accepted = true;
                        break;
                    }
                }
                alpha *= BACKTRACK;
            }
            if !accepted {
                break;
            }
        }
        let gnorm = grad.norm();
        if gnorm <= tol.max(floor(&theta)) {
            Ok(theta)
        } else {
            Err(Error::NewtonNonConvergence { grad_norm: gnorm, iterations: max_iter })
        }
    }

    pub fn preconditioner(&self) -> Preconditioner {
        Preconditioner::new(&self.gram, self.n)
    }

    /// Extreme eigenvalues of `P_t`.
    pub fn precond_spectrum(&self) -> (f64, f64) {
        self.preconditioner().spectrum()
    }

    pub fn precond_apply(&self, v: &DVector<f64>, mode: PrecondMode) -> DVector<f64> {
        self.preconditioner().apply(v, mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondMode {
    Inverse,
    InverseSqrt,
}

/// Factorized `I_n ⊗ G` from one symmetric eigendecomposition of `G`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    n: usize,
    d: usize,
    eigenvalues: DVector<f64>,
    inv: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl Preconditioner {
    pub fn new(gram: &DMatrix<f64>, n: usize) -> Self {
        let d = gram.nrows();
        let eig = SymmetricEigen::new(gram.clone());
        let v = &eig.eigenvectors;
        let scaled = |f: &dyn Fn(f64) -> f64| {
            let diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            v * diag * v.transpose()
        };
        let inv = scaled(&|l| 1.0 / l);
        let inv_sqrt = scaled(&|l| 1.0 / l.sqrt());
        Self { n, d, eigenvalues: eig.eigenvalues, inv, inv_sqrt }
    }

    pub fn spectrum(&self) -> (f64, f64) {
        (self.eigenvalues.min(), self.eigenvalues.max())
    }

    fn factor(&self, mode: PrecondMode) -> &DMatrix<f64> {
        match mode {
            PrecondMode::Inverse => &self.inv,
            PrecondMode::InverseSqrt => &self.inv_sqrt,
        }
    }

    /// Blockwise `out = F v` for `F ∈ {G⁻¹, G^{-1/2}}`.
    pub fn apply_into(&self, v: &[f64], mode: PrecondMode, out: &mut [f64]) {
        let f = self.factor(mode);
        let d = self.d;
        for blk in 0..self.n {
            let src = &v[blk * d..(blk + 1) * d];
            let dst = &mut out[blk * d..(blk + 1) * d];
            for (r, o) in dst.iter_mut().enumerate() {
                *o = (0..d).map(|c| f[(r, c)] * src[c]).sum();
            }
        }
    }

    pub fn apply(&self, v: &DVector<f64>, mode: PrecondMode) -> DVector<f64> {
        assert_eq!(v.len(), self.n * self.d);
        let mut out = DVector::zeros(v.len());
        self.apply_into(v.as_slice(), mode, out.as_mut_slice());
        out
    }
}

fn apply_profile(profile: RidgeProfile, svals: &mut [f64]) {
    match profile {
        RidgeProfile::LogCosh => svals.iter_mut().for_each(|v| *v = tanh(*v)),
        profile => svals.iter_mut().for_each(|v| *v = profile.deriv(*v)),
    }
}

/// `acc = Σ_s z_s Φ'(c_s − z_sᵀ proj)` with the row width fixed at compile time.
fn ridge_pass<const D: usize>(
    zs: &[f64],
    offsets: &[f64],
    proj: &[f64],
    profile: RidgeProfile,
    svals: &mut [f64],
    acc: &mut [f64],
) {
    let proj: &[f64; D] = proj.try_into().expect("projection width");
    let (rows, _) = zs.as_chunks::<D>();
    for ((sv, z), &c) in svals.iter_mut().zip(rows).zip(offsets) {
        let mut dot = 0.0;
        for r in 0..D {
            dot += z[r] * proj[r];
        }
        *sv = c - dot;
    }
    apply_profile(profile, svals);
    let mut sum = [0.0; D];
    for (z, &phi) in rows.iter().zip(svals.iter()) {
        for r in 0..D {
            sum[r] += z[r] * phi;
        }
    }
    acc.copy_from_slice(&sum);
}

fn ridge_pass_dyn(zs: &[f64], offsets: &[f64], proj: &[f64], profile: RidgeProfile, svals: &mut [f64], acc: &mut [f64]) {
    let d = proj.len();
    for ((sv, z), &c) in svals.iter_mut().zip(zs.chunks_exact(d)).zip(offsets) {
        *sv = c - z.iter().zip(proj).map(|(x, y)| x * y).sum::<f64>();
    }
    apply_profile(profile, svals);
    acc.iter_mut().for_each(|p| *p = 0.0);
    for (z, &phi) in zs.chunks_exact(d).zip(svals.iter()) {
        for (a_r, z_r) in acc.iter_mut().zip(z) {
            *a_r += z_r * phi;
        }
    }
}

/// `tanh` through `exp`; several times cheaper than the libm routine, with
/// absolute error of a few ulps.
#[inline]
fn tanh(s: f64) -> f64 {
    let e = (-2.0 * s.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(s)
}
