//! Estimators of the angular velocity from anti-development increments.

mod kalman;
mod particle;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew_dim, SkewMatrix};

pub use kalman::{kb_step, run_kalman, GaussianState, RICCATI_SUBSTEP};
pub use particle::{
    ess, log_likelihood_increments, multinomial_counts, normalize_log_weights, pf_estimate, pf_init, pf_spread,
    pf_step, run_particle_filter, ParticleEnsemble, ParticleRun, StepInfo,
};

/// Isotropic Gaussian prior over so(n) coordinates. An empty mean is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    #[serde(default)]
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl Prior {
    pub fn centered(variance: f64) -> Self {
        Prior { mean: Vec::new(), variance }
    }

    pub fn mean_vector(&self, n: usize) -> Result<DVector<f64>> {
        let d = skew_dim(n);
        if self.mean.is_empty() {
            return Ok(DVector::zeros(d));
        }
        if self.mean.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "prior mean has {} entries, so({n}) has {d}",
                self.mean.len()
            )));
        }
        Ok(DVector::from_column_slice(&self.mean))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior variance must be > 0, got {}",
                self.variance
            )));
        }
        self.mean_vector(n).map(|_| ())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SkewMatrix> {
        let sd = self.variance.sqrt();
        let mean = self.mean_vector(n)?;
        let c: Vec<f64> = mean
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SkewMatrix::from_coords(n, &c)
    }

    pub fn gaussian(&self, n: usize) -> Result<GaussianState> {
        let d = skew_dim(n);
        GaussianState::new(self.mean_vector(n)?, DMatrix::identity(d, d) * self.variance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResamplePolicy {
    /// Resample when ESS drops below `ess_fraction * N`.
    EssThreshold,
    /// Resample after every `m`-th step regardless of ESS.
    EveryMSteps { m: usize },
}

fn default_ess_fraction() -> f64 {
    0.5
}

fn default_policy() -> ResamplePolicy {
    ResamplePolicy::EssThreshold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub sigma_w: f64,
    #[serde(default = "default_ess_fraction")]
    pub ess_fraction: f64,
    pub prior: Prior,
    #[serde(default = "default_policy")]
    pub resample_policy: ResamplePolicy,
}

impl FilterConfig {
    pub fn new(sigma_w: f64, prior: Prior) -> Self {
        FilterConfig {
            sigma_w,
            ess_fraction: default_ess_fraction(),
            prior,
            resample_policy: default_policy(),
        }
    }

    pub fn validate(&self, n: usize, particles: usize) -> Result<()> {
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_w must be > 0, got {}", self.sigma_w)));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ess_fraction must lie in (0, 1], got {}",
                self.ess_fraction
            )));
        }
        if particles == 0 {
            return Err(Error::InvalidConfig("need at least one particle".into()));
        }
        if self.ess_fraction * (particles as f64) < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "ess_fraction * N = {} is below 1",
                self.ess_fraction * particles as f64
            )));
        }
        if let ResamplePolicy::EveryMSteps { m: 0 } = self.resample_policy {
            return Err(Error::InvalidConfig("resampling period must be >= 1".into()));
        }
        self.prior.validate(n)
    }
}
