//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{AdmissibleSet, CostSpec, SystemParams};
use crate::noise::{read_reservoir, write_reservoir, AsymmetricBuilder, NoiseModel, PiecewiseCurvature};
use crate::posterior::{DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};
use crate::presets::Preset;
use crate::simulator::{Algorithm, ExcitationSpec, SimConfig, DEFAULT_EXCITATION_VARIANCE};
use crate::langevin::DEFAULT_MAX_ATTEMPTS;

/// Row-major dense matrix as nested JSON arrays.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Preset { preset: Preset },
    Inline { a: Rows, b: Rows },
}

/// A scalar is broadcast to every entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, len: usize, what: &str) -> Result<DVector<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(DVector::from_element(len, *v)),
            ScalarOrVec::Vector(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
            ScalarOrVec::Vector(v) => Err(Error::Validation(format!("{what} has length {}, expected {len}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Identity covariance when `covariance` is omitted.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Rows>,
    },
    Mixture { offset: ScalarOrVec },
    Asymmetric {
        m: f64,
        #[serde(rename = "M")]
        big_m: f64,
        alpha: f64,
        beta: f64,
        /// Piecewise coordinates; defaults to the last one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<Vec<bool>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reservoir_size: Option<usize>,
        #[serde(default)]
        calibration_seed: u64,
        /// Raw chain cache; read if present, written otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cache: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRows {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleSpec {
    pub s: f64,
    pub rho: f64,
    pub m_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostRows>,
    pub admissible: AdmissibleSpec,
    /// Defaults to the preset's value; required for inline systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub prior_mean: ScalarOrVec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// Full covariance; takes precedence over `excitation_variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation_covariance: Option<Rows>,
    #[serde(default = "default_excitation_variance")]
    pub excitation_variance: f64,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_excitation_variance() -> f64 {
    DEFAULT_EXCITATION_VARIANCE
}

fn default_algorithm() -> Algorithm {
    Algorithm::Tsld
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Validation(format!(
            "{what} row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn square(rows: &Rows, dim: usize, what: &str) -> Result<DMatrix<f64>> {
    let m = matrix(rows, what)?;
    if m.shape() != (dim, dim) {
        return Err(Error::Validation(format!("{what} is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn validation(e: Error) -> Error {
    match e {
        Error::Validation(_) | Error::Io(_) | Error::CalibrationFailure(_) | Error::ReservoirEmpty => e,
        other => Error::Validation(other.to_string()),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config = parse_config(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    config.validate()?;
    Ok(config)
}

/// Parses without validating.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn system(&self) -> Result<SystemParams> {
        match &self.system {
            SystemSource::Preset { preset } => Ok(preset.system()),
            SystemSource::Inline { a, b } => {
                let a = matrix(a, "system.a")?;
                let b = matrix(b, "system.b")?;
                SystemParams::new(a, b).map_err(validation)
            }
        }
    }

    pub fn lambda(&self) -> Result<f64> {
        match (&self.system, self.lambda) {
            (_, Some(l)) => Ok(l),
            (SystemSource::Preset { preset }, None) => Ok(preset.lambda()),
            (SystemSource::Inline { .. }, None) => {
                Err(Error::Validation("lambda is required for inline systems".into()))
            }
        }
    }

    pub fn cost(&self, n: usize, n_u: usize) -> Result<CostSpec> {
        let standard = CostSpec::standard(n, n_u);
        let Some(c) = &self.cost else { return Ok(standard) };
        let q = match &c.q {
            Some(q) => square(q, n, "cost.q")?,
            None => standard.q,
        };
        let r = match &c.r {
            Some(r) => square(r, n_u, "cost.r")?,
            None => standard.r,
        };
        CostSpec::new(q, r).map_err(validation)
    }

    pub fn noise(&self, n: usize) -> Result<NoiseModel> {
        match &self.noise {
            NoiseSpec::Gaussian { covariance: None } => Ok(NoiseModel::standard_gaussian(n)),
            NoiseSpec::Gaussian { covariance: Some(c) } => {
                NoiseModel::gaussian(square(c, n, "noise.covariance")?).map_err(validation)
            }
            NoiseSpec::Mixture { offset } => {
                NoiseModel::mixture(offset.expand(n, "noise.offset")?).map_err(validation)
            }
            NoiseSpec::Asymmetric { m, big_m, alpha, beta, mask, reservoir_size, calibration_seed, cache } => {
                let profile = PiecewiseCurvature::new(*m, *big_m, *alpha, *beta).map_err(validation)?;
                let mut builder = AsymmetricBuilder::new(n, profile);
                if let Some(mask) = mask {
                    if mask.len() != n {
                        return Err(Error::Validation(format!("noise.mask has length {}, expected {n}", mask.len())));
                    }
                    builder = builder.with_mask(mask.clone());
                }
                if let Some(size) = reservoir_size {
                    builder = builder.with_reservoir_size(*size);
                }
                let raw = match cache {
                    Some(path) if path.exists() => {
                        let (dim, raw) = read_reservoir(path)?;
                        if dim != 1 {
                            return Err(Error::Validation(format!(
                                "reservoir cache {} has dim {dim}, expected 1",
                                path.display()
                            )));
                        }
                        raw
                    }
                    _ => {
                        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(*calibration_seed);
                        let raw = builder.run_chain(&mut rng)?;
                        if let Some(path) = cache {
                            write_reservoir(path, 1, &raw)?;
                        }
                        raw
                    }
                };
                builder.from_raw_reservoir(raw)
            }
        }
    }

    pub fn excitation(&self, n_u: usize) -> Result<ExcitationSpec> {
        match &self.excitation_covariance {
            Some(c) => ExcitationSpec::new(square(c, n_u, "excitation_covariance")?).map_err(validation),
            None if self.excitation_variance > 0.0 => {
                ExcitationSpec::isotropic(n_u, self.excitation_variance).map_err(validation)
            }
            None => Err(Error::Validation("excitation_variance must be positive".into())),
        }
    }

    /// Checks every structural invariant that does not require building the
    /// noise model.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        Ok(())
    }

    fn validate_shape(&self) -> Result<(SystemParams, CostSpec, AdmissibleSet, f64, DVector<f64>, ExcitationSpec)> {
        let system = self.system()?;
        let (n, n_u) = (system.n(), system.n_u());
        let cost = self.cost(n, n_u)?;
        let a = &self.admissible;
        let admissible = AdmissibleSet::new(a.s, a.rho, a.m_j, cost.clone()).map_err(validation)?;
        let lambda = self.lambda()?;
        if !(lambda >= 1.0) {
            return Err(Error::Validation(format!("lambda = {lambda} must be at least 1")));
        }
        let prior_mean = self.prior_mean.expand(n * (n + n_u), "prior_mean")?;
        let excitation = self.excitation(n_u)?;
        if self.max_attempts == 0 {
            return Err(Error::Validation("max_attempts must be positive".into()));
        }
        match &self.noise {
            NoiseSpec::Gaussian { covariance: Some(c) } => {
                square(c, n, "noise.covariance")?;
            }
            NoiseSpec::Mixture { offset } => {
                offset.expand(n, "noise.offset")?;
            }
            NoiseSpec::Asymmetric { m, big_m, alpha, beta, mask, .. } => {
                PiecewiseCurvature::new(*m, *big_m, *alpha, *beta).map_err(validation)?;
                if mask.as_ref().is_some_and(|mask| mask.len() != n) {
                    return Err(Error::Validation(format!("noise.mask length differs from n = {n}")));
                }
            }
            NoiseSpec::Gaussian { covariance: None } => {}
        }
        Ok((system, cost, admissible, lambda, prior_mean, excitation))
    }

    /// Expands presets and builds the noise model.
    pub fn to_sim(&self) -> Result<SimConfig> {
        let (system, cost, admissible, lambda, prior_mean, excitation) = self.validate_shape()?;
        let noise = self.noise(system.n())?;
        let sim = SimConfig {
            system,
            noise: Arc::new(noise),
            cost,
            admissible,
            lambda,
            prior_mean,
            horizon: self.horizon,
            excitation,
            max_attempts: self.max_attempts,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        };
        sim.validate()?;
        Ok(sim)
    }

    /// Mixture-noise setup on a preset with the reference hyperparameters.
    pub fn preset_mixture(preset: Preset, horizon: usize, seeds: Vec<u64>) -> Self {
        Self {
            system: SystemSource::Preset { preset },
            noise: NoiseSpec::Mixture { offset: ScalarOrVec::Scalar(preset.mixture_offset()) },
            cost: None,
            admissible: AdmissibleSpec { s: 20.0, rho: 0.99, m_j: 20_000.0 },
            lambda: None,
            prior_mean: ScalarOrVec::Scalar(0.5),
            horizon,
            seeds,
            excitation_covariance: None,
            excitation_variance: DEFAULT_EXCITATION_VARIANCE,
            algorithm: Algorithm::Tsld,
            output_dir: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}
