//! Strongly log-concave process-noise laws.
//!
//! Every model exposes its (unnormalized) log-density, score and Hessian,
//! certified curvature bounds `m̲ I ⪯ −∇² log p ⪯ m̄ I`, an exact or
//! reservoir-based sampler, and its covariance.
//!
//! Besides the pointwise API, each model describes its score as a linear part
//! plus a few one-dimensional ridge terms,
//!
//! ```text
//! log p(w) = −½ wᵀ Λ w + Σⱼ Φⱼ(aⱼᵀ w) + const,
//! ```
//!
//! which lets the posterior evaluate gradients over thousands of transitions
//! from sufficient statistics plus one scalar per transition and ridge
//! (see [`ScoreStructure`]).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature `h(y) = −(log p)''(y)` that is `m` below `alpha`, `big_m` above
/// `beta`, and linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCurvature {
    pub m: f64,
    pub big_m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl PiecewiseCurvature {
    pub fn new(m: f64, big_m: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(m > 0.0 && m <= big_m && big_m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < m <= M < inf, got m={m}, M={big_m}"
            )));
        }
        if !(alpha < beta) {
            return Err(Error::InvalidArgument(format!(
                "need alpha < beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { m, big_m, alpha, beta })
    }

    fn width(&self) -> f64 {
        self.beta - self.alpha
    }

    pub fn curvature(&self, y: f64) -> f64 {
        let frac = ((y - self.alpha) / self.width()).clamp(0.0, 1.0);
        self.m + (self.big_m - self.m) * frac
    }

    /// `∫_{−∞}^{y} clamp((s−α)/(β−α), 0, 1) ds`.
    fn ramp(&self, y: f64) -> f64 {
        let w = self.width();
        if y < self.alpha {
            0.0
        } else if y < self.beta {
            (y - self.alpha).powi(2) / (2.0 * w)
        } else {
            0.5 * w + (y - self.beta)
        }
    }

    /// `∫_{−∞}^{y} ramp(s) ds`.
    fn ramp2(&self, y: f64) -> f64 {
        let w = self.width();
        if y < self.alpha {
            0.0
        } else if y < self.beta {
            (y - self.alpha).powi(3) / (6.0 * w)
        } else {
            let e = y - self.beta;
            w * w / 6.0 + 0.5 * w * e + 0.5 * e * e
        }
    }

    /// Potential `V` with `V'' = h` and `V(0) = V'(0) = 0`.
    pub fn potential(&self, y: f64) -> f64 {
        let dm = self.big_m - self.m;
        0.5 * self.m * y * y + dm * (self.ramp2(y) - self.ramp2(0.0) - self.ramp(0.0) * y)
    }

    pub fn potential_deriv(&self, y: f64) -> f64 {
        self.m * y + (self.big_m - self.m) * (self.ramp(y) - self.ramp(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct AsymmetricNoise {
    /// `true` for coordinates carrying the piecewise curvature; the rest are
    /// standard Gaussian.
    pub mask: Vec<bool>,
    pub profile: PiecewiseCurvature,
    /// The centered law is `p(w) ∝ exp(−V(w + shift))` on masked coordinates.
    pub shift: f64,
    /// Centered one-dimensional draws shared by all masked coordinates.
    reservoir: Arc<Vec<f64>>,
}

impl AsymmetricNoise {
    pub fn reservoir(&self) -> &[f64] {
        &self.reservoir
    }

    /// Knot locations in the centered coordinate.
    pub fn knots(&self) -> (f64, f64) {
        (self.profile.alpha - self.shift, self.profile.beta - self.shift)
    }
}

#[derive(Debug, Clone)]
pub enum NoiseKind {
    Gaussian {
        precision: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
    /// Equal-weight mixture of `N(a, I)` and `N(−a, I)`.
    Mixture { offset: DVector<f64> },
    Asymmetric(AsymmetricNoise),
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    dim: usize,
    kind: NoiseKind,
    m_lower: f64,
    m_upper: f64,
    cov: DMatrix<f64>,
}

/// One-dimensional nonlinearity `Φ` of a ridge term and its derivatives.
#[derive(Debug, Clone, Copy)]
pub enum RidgeProfile {
    /// `Φ(s) = log cosh s`.
    LogCosh,
    /// `Φ(s) = ½ m s² − V(s + shift)`.
    Piecewise { curvature: PiecewiseCurvature, shift: f64 },
}

impl RidgeProfile {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            RidgeProfile::LogCosh => {
                let a = s.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            RidgeProfile::Piecewise { curvature, shift } => {
                0.5 * curvature.m * s * s - curvature.potential(s + shift)
            }
        }
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        match *self {
            RidgeProfile::LogCosh => s.tanh(),
            RidgeProfile::Piecewise { curvature, shift } => {
                curvature.m * s - curvature.potential_deriv(s + shift)
            }
        }
    }

    #[inline]
    pub fn second_deriv(&self, s: f64) -> f64 {
        match *self {
            RidgeProfile::LogCosh => {
                let c = s.cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
            RidgeProfile::Piecewise { curvature, shift } => curvature.m - curvature.curvature(s + shift),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ridge {
    pub direction: DVector<f64>,
    pub profile: RidgeProfile,
}

/// `∇ log p(w) = −Λ w + Σⱼ aⱼ Φⱼ'(aⱼᵀ w)`.
#[derive(Debug, Clone)]
pub struct ScoreStructure {
    pub precision: DMatrix<f64>,
    pub ridges: Vec<Ridge>,
}

impl NoiseModel {
    pub fn gaussian(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::DimensionMismatch("covariance must be square and nonempty".into()));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument("covariance must be symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
        let precision = chol.inverse();
        let eig = precision.clone().symmetric_eigenvalues();
        Ok(Self {
            dim: cov.nrows(),
            m_lower: eig.min(),
            m_upper: eig.max(),
            kind: NoiseKind::Gaussian { precision, chol: chol.l() },
            cov,
        })
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(DMatrix::identity(dim, dim)).expect("identity covariance")
    }

    /// `½ N(a, I) + ½ N(−a, I)`; requires `|a| < 1` for strong log-concavity.
    pub fn mixture(offset: DVector<f64>) -> Result<Self> {
        let a2 = offset.norm_squared();
        if offset.is_empty() || !(a2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mixture offset must be nonempty with |a| < 1, got |a|² = {a2}"
            )));
        }
        let dim = offset.len();
        let cov = DMatrix::identity(dim, dim) + &offset * offset.transpose();
        Ok(Self {
            dim,
            m_lower: 1.0 - a2,
            m_upper: 1.0,
            kind: NoiseKind::Mixture { offset },
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Certified `(m̲, m̄)`.
    pub fn hessian_bounds(&self) -> (f64, f64) {
        (self.m_lower, self.m_upper)
    }

    /// Unnormalized log-density.
    pub fn log_pdf(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.dim);
        match &self.kind {
            NoiseKind::Gaussian { precision, .. } => {
                let w = DVector::from_column_slice(w);
                -0.5 * w.dot(&(precision * &w))
            }
            NoiseKind::Mixture { offset } => {
                let (mut lp, mut lm) = (0.0, 0.0);
                for (wi, ai) in w.iter().zip(offset.iter()) {
                    lp -= 0.5 * (wi - ai).powi(2);
                    lm -= 0.5 * (wi + ai).powi(2);
                }
                let hi = lp.max(lm);
                hi + ((lp - hi).exp() + (lm - hi).exp()).ln()
            }
            NoiseKind::Asymmetric(asym) => w
                .iter()
                .zip(&asym.mask)
                .map(|(&wi, &piece)| {
                    if piece {
                        -asym.profile.potential(wi + asym.shift)
                    } else {
                        -0.5 * wi * wi
                    }
                })
                .sum(),
        }
    }

    /// Writes `∇_w log p(w)` into `out`.
    pub fn log_pdf_grad_into(&self, w: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.dim);
        match &self.kind {
            NoiseKind::Gaussian { precision, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = -(0..self.dim).map(|j| precision[(i, j)] * w[j]).sum::<f64>();
                }
            }
            NoiseKind::Mixture { offset } => {
                // −(w − a + 2a / (1 + e^{2wᵀa}))
                let s: f64 = w.iter().zip(offset.iter()).map(|(x, y)| x * y).sum();
                let logistic = 1.0 / (1.0 + (2.0 * s).exp());
                for ((o, wi), ai) in out.iter_mut().zip(w).zip(offset.iter()) {
                    *o = -(wi - ai + 2.0 * ai * logistic);
                }
            }
            NoiseKind::Asymmetric(asym) => {
                for ((o, &wi), &piece) in out.iter_mut().zip(w).zip(&asym.mask) {
                    *o = if piece {
                        -asym.profile.potential_deriv(wi + asym.shift)
                    } else {
                        -wi
                    };
                }
            }
        }
    }

    pub fn log_pdf_grad(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.log_pdf_grad_into(w.as_slice(), out.as_mut_slice());
        out
    }

    pub fn log_pdf_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::Gaussian { precision, .. } => -precision,
            NoiseKind::Mixture { offset } => {
                // −(I − 4aaᵀ e^{2s} / (1 + e^{2s})²)
                let s = w.dot(offset);
                let e = (2.0 * s).exp();
                let factor = if e.is_finite() { 4.0 * e / (1.0 + e).powi(2) } else { 0.0 };
                -(DMatrix::identity(self.dim, self.dim) - offset * offset.transpose() * factor)
            }
            NoiseKind::Asymmetric(asym) => {
                let diag = DVector::from_fn(self.dim, |i, _| {
                    if asym.mask[i] {
                        -asym.profile.curvature(w[i] + asym.shift)
                    } else {
                        -1.0
                    }
                });
                DMatrix::from_diagonal(&diag)
            }
        }
    }

    pub fn score_structure(&self) -> ScoreStructure {
        match &self.kind {
            NoiseKind::Gaussian { precision, .. } => ScoreStructure {
                precision: precision.clone(),
                ridges: Vec::new(),
            },
            NoiseKind::Mixture { offset } => ScoreStructure {
                precision: DMatrix::identity(self.dim, self.dim),
                ridges: vec![Ridge { direction: offset.clone(), profile: RidgeProfile::LogCosh }],
            },
            NoiseKind::Asymmetric(asym) => {
                let precision = DMatrix::from_diagonal(&DVector::from_fn(self.dim, |i, _| {
                    if asym.mask[i] {
                        asym.profile.m
                    } else {
                        1.0
                    }
                }));
                let ridges = (0..self.dim)
                    .filter(|&i| asym.mask[i])
                    .map(|i| Ridge {
                        direction: DVector::from_fn(self.dim, |j, _| if i == j { 1.0 } else { 0.0 }),
                        profile: RidgeProfile::Piecewise { curvature: asym.profile, shift: asym.shift },
                    })
                    .collect();
                ScoreStructure { precision, ridges }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        match &self.kind {
            NoiseKind::Gaussian { chol, .. } => {
                let g = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok(chol * g)
            }
            NoiseKind::Mixture { offset } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Ok(DVector::from_fn(self.dim, |i, _| {
                    sign * offset[i] + rng.sample::<f64, _>(StandardNormal)
                }))
            }
            NoiseKind::Asymmetric(asym) => {
                if asym.reservoir.is_empty() {
                    return Err(Error::ReservoirEmpty);
                }
                let len = asym.reservoir.len();
                Ok(DVector::from_fn(self.dim, |i, _| {
                    if asym.mask[i] {
                        asym.reservoir[rng.random_range(0..len)]
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    }
                }))
            }
        }
    }
}

/// Offline-ULA calibration settings for the asymmetric law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymmetricBuilder {
    pub dim: usize,
    pub mask: Vec<bool>,
    pub profile: PiecewiseCurvature,
    pub reservoir_size: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Tolerated difference between the reservoir half means, in units of
    /// the reservoir standard deviation.
    pub max_half_drift: f64,
}

pub const DEFAULT_RESERVOIR_SIZE: usize = 1_000_000;
pub const DEFAULT_BURN_IN: usize = 100_000;
pub const DEFAULT_THIN: usize = 10;

impl AsymmetricBuilder {
    /// Last coordinate piecewise, the rest standard Gaussian.
    pub fn new(dim: usize, profile: PiecewiseCurvature) -> Self {
        let mut mask = vec![false; dim];
        if let Some(last) = mask.last_mut() {
            *last = true;
        }
        Self {
            dim,
            mask,
            profile,
            reservoir_size: DEFAULT_RESERVOIR_SIZE,
            burn_in: DEFAULT_BURN_IN,
            thin: DEFAULT_THIN,
            max_half_drift: 0.05,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_reservoir_size(mut self, size: usize) -> Self {
        self.reservoir_size = size;
        self
    }

    /// Stepsize of the offline chain, `m / (16 M²)`.
    pub fn step_size(&self) -> f64 {
        self.profile.m / (16.0 * self.profile.big_m.powi(2))
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mask.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} does not match dim {}",
                self.mask.len(),
                self.dim
            )));
        }
        if !self.mask.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("asymmetric noise needs at least one piecewise coordinate".into()));
        }
        if self.reservoir_size < 2 || self.thin == 0 {
            return Err(Error::InvalidArgument("reservoir_size >= 2 and thin >= 1 required".into()));
        }
        PiecewiseCurvature::new(self.profile.m, self.profile.big_m, self.profile.alpha, self.profile.beta)?;
        Ok(())
    }

    /// Runs the offline chain and returns the raw (uncentered) reservoir.
    pub fn run_chain<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        let gamma = self.step_size();
        let noise_scale = (2.0 * gamma).sqrt();
        let mut y = 0.0f64;
        let step = |y: &mut f64, rng: &mut R| {
            let g: f64 = rng.sample(StandardNormal);
            *y += -gamma * self.profile.potential_deriv(*y) + noise_scale * g;
        };
        for _ in 0..self.burn_in {
            step(&mut y, rng);
        }
        let mut out = Vec::with_capacity(self.reservoir_size);
        for _ in 0..self.reservoir_size {
            for _ in 0..self.thin {
                step(&mut y, rng);
            }
            out.push(y);
        }
        Ok(out)
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NoiseModel> {
        let raw = self.run_chain(rng)?;
        self.from_raw_reservoir(raw)
    }

    /// Builds from a seeded stream; convenient for configs.
    pub fn build_seeded(&self, seed: u64) -> Result<NoiseModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.build(&mut rng)
    }

    /// Builds from an existing raw chain, e.g. one loaded from a cache file.
    pub fn from_raw_reservoir(&self, raw: Vec<f64>) -> Result<NoiseModel> {
        self.validate()?;
        if raw.len() < 2 {
            return Err(Error::ReservoirEmpty);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::CalibrationFailure("reservoir contains non-finite draws".into()));
        }
        let len = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / len;
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let var = centered.iter().map(|v| v * v).sum::<f64>() / len;
        let sd = var.sqrt();

        let half = centered.len() / 2;
        let m1 = centered[..half].iter().sum::<f64>() / half as f64;
        let m2 = centered[half..].iter().sum::<f64>() / (centered.len() - half) as f64;
        let drift = (m1 - m2).abs() / sd;
        if !(drift <= self.max_half_drift) {
            return Err(Error::CalibrationFailure(format!(
                "reservoir half means differ by {drift:.4} sd (limit {})",
                self.max_half_drift
            )));
        }

        let cov = DMatrix::from_diagonal(&DVector::from_fn(self.dim, |i, _| {
            if self.mask[i] {
                var
            } else {
                1.0
            }
        }));
        let p = self.profile;
        let has_gaussian = self.mask.iter().any(|&b| !b);
        let (mut lo, mut hi) = (p.m, p.big_m);
        if has_gaussian {
            lo = lo.min(1.0);
            hi = hi.max(1.0);
        }
        Ok(NoiseModel {
            dim: self.dim,
            m_lower: lo,
            m_upper: hi,
            cov,
            kind: NoiseKind::Asymmetric(AsymmetricNoise {
                mask: self.mask.clone(),
                profile: p,
                shift: mean,
                reservoir: Arc::new(centered),
            }),
        })
    }
}

/// `build_asymmetric(n, m, M, α, β, reservoir_size, rng)` with the last
/// coordinate piecewise.
pub fn build_asymmetric<R: Rng + ?Sized>(
    n: usize,
    m: f64,
    big_m: f64,
    alpha: f64,
    beta: f64,
    reservoir_size: usize,
    rng: &mut R,
) -> Result<NoiseModel> {
    let profile = PiecewiseCurvature::new(m, big_m, alpha, beta)?;
    AsymmetricBuilder::new(n, profile)
        .with_reservoir_size(reservoir_size)
        .build(rng)
}

/// Writes a reservoir as little-endian `u32 dim`, `u32 count`, then
/// `count × dim` row-major `f64` values.
pub fn write_reservoir(path: &Path, dim: usize, values: &[f64]) -> Result<()> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} values do not form rows of width {dim}",
            values.len()
        )));
    }
    let count = values.len() / dim;
    let (dim32, count32) = match (u32::try_from(dim), u32::try_from(count)) {
        (Ok(d), Ok(c)) => (d, c),
        _ => return Err(Error::InvalidArgument("reservoir too large for the cache header".into())),
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&dim32.to_le_bytes())?;
    out.write_all(&count32.to_le_bytes())?;
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a reservoir written by [`write_reservoir`]; returns `(dim, values)`.
pub fn read_reservoir(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut values = Vec::with_capacity(dim * count);
    let mut buf = [0u8; 8];
    for _ in 0..dim * count {
        input.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "reservoir file has {} trailing bytes",
            rest.len()
        )));
    }
    Ok((dim, values))
}
