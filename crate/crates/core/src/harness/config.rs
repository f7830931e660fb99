use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::antidev::InterpolationScheme;
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, Prior};
use crate::geometry::{skew_dim, SkewMatrix};
use crate::simulate::{ModelSpec, SimulationGrid, StateModel};

/// One estimator applied to every repeat. A particle or interpolated Kalman
/// filter without an explicit scheme uses the scenario's scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Particle(Option<InterpolationScheme>),
    Kalman(Option<InterpolationScheme>),
    /// Kalman filter driven by the fine-grid anti-development of the truth.
    KalmanReference,
}

impl Estimator {
    pub fn resolve(&self, default: InterpolationScheme) -> Estimator {
        match self {
            Estimator::Particle(s) => Estimator::Particle(Some(s.unwrap_or(default))),
            Estimator::Kalman(s) => Estimator::Kalman(Some(s.unwrap_or(default))),
            Estimator::KalmanReference => Estimator::KalmanReference,
        }
    }

    /// File-name friendly label, e.g. `kalman_geodesic`.
    pub fn label(&self, default: InterpolationScheme) -> String {
        match self.resolve(default) {
            Estimator::Particle(s) => format!("particle_{}", s.unwrap()),
            Estimator::Kalman(s) => format!("kalman_{}", s.unwrap()),
            Estimator::KalmanReference => "kalman_reference".into(),
        }
    }

    pub fn needs_full_frame(&self, default: InterpolationScheme) -> bool {
        match self.resolve(default) {
            Estimator::Particle(s) => s == Some(InterpolationScheme::Geodesic),
            Estimator::Kalman(_) | Estimator::KalmanReference => true,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Particle(None) => f.write_str("particle"),
            Estimator::Particle(Some(s)) => write!(f, "particle:{s}"),
            Estimator::Kalman(None) => f.write_str("kalman"),
            Estimator::Kalman(Some(s)) => write!(f, "kalman:{s}"),
            Estimator::KalmanReference => f.write_str("kalman_reference"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, scheme) = match s.split_once(':') {
            Some((k, sch)) => (k, Some(sch.parse()?)),
            None => (s, None),
        };
        match (kind, scheme) {
            ("particle", sch) => Ok(Estimator::Particle(sch)),
            ("kalman", sch) => Ok(Estimator::Kalman(sch)),
            ("kalman_reference", None) => Ok(Estimator::KalmanReference),
            _ => Err(Error::InvalidConfig(format!("unknown estimator {s:?}"))),
        }
    }
}

impl Serialize for Estimator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Particle(None)]
}

fn one() -> usize {
    1
}

/// Everything needed to simulate and filter one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub k: usize,
    pub model: ModelSpec,
    /// Initial angular velocity coordinates; empty means zero. Stair models
    /// take theirs from the schedule.
    #[serde(default)]
    pub x0: Vec<f64>,
    pub sigma_w: f64,
    pub grid: SimulationGrid,
    pub particles: usize,
    pub filter: FilterConfig,
    pub scheme: InterpolationScheme,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 3,
            k: 1,
            model: ModelSpec::Brownian {
                sigma_b: 1.0,
                drift: None,
            },
            x0: Vec::new(),
            sigma_w: 1.0,
            grid: SimulationGrid {
                h_sim: 1e-3,
                delta_t: 0.01,
                horizon: 10.0,
            },
            particles: 500,
            filter: FilterConfig::new(1.0, Prior::centered(2.0)),
            scheme: InterpolationScheme::Linear,
            estimators: default_estimators(),
            seed: 0,
            repeats: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every field; returns the validated grid (with `delta_t`
    /// snapped to a multiple of `h_sim`) and the state model.
    pub fn validate(&self) -> Result<(SimulationGrid, StateModel)> {
        if self.n < 2 || self.k == 0 || self.k > self.n {
            return Err(Error::InvalidDimension(format!(
                "need n >= 2 and 1 <= k <= n, got n={}, k={}",
                self.n, self.k
            )));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_w must be >= 0, got {}", self.sigma_w)));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimator selected".into()));
        }
        for e in &self.estimators {
            if e.needs_full_frame(self.scheme) && self.k != self.n {
                return Err(Error::UnsupportedScheme(format!(
                    "{e} needs full observations (k = n), got n={}, k={}",
                    self.n, self.k
                )));
            }
        }
        self.filter.validate(self.n, self.particles)?;
        let grid = SimulationGrid::new(self.grid.h_sim, self.grid.delta_t, self.grid.horizon)?;
        let model = self.model.build(self.n)?;
        self.initial_velocity()?;
        Ok((grid, model))
    }

    pub fn initial_velocity(&self) -> Result<SkewMatrix> {
        if self.x0.is_empty() {
            return Ok(SkewMatrix::zeros(self.n));
        }
        if self.x0.len() != skew_dim(self.n) {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {} entries, so({}) has {}",
                self.x0.len(),
                self.n,
                skew_dim(self.n)
            )));
        }
        SkewMatrix::from_coords(self.n, &self.x0)
    }

    pub fn labels(&self) -> Vec<String> {
        self.estimators.iter().map(|e| e.label(self.scheme)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_strings_round_trip() {
        for s in ["particle", "particle:geodesic", "kalman", "kalman:linear", "kalman_reference"] {
            let e: Estimator = s.parse().unwrap();
            assert_eq!(e.to_string(), s);
        }
        assert!("kalman_reference:linear".parse::<Estimator>().is_err());
        assert!("smoother".parse::<Estimator>().is_err());
        assert_eq!(
            Estimator::Kalman(None).label(InterpolationScheme::Geodesic),
            "kalman_geodesic"
        );
    }

    #[test]
    fn config_json_round_trip() {
        let c = ScenarioConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let text = r#"{
            "n": 3, "k": 3, "model": {"kind": "constant"}, "x0": [1, 0, 0],
            "sigma_w": 1, "grid": {"h_sim": 0.001, "delta_t": 0.05, "horizon": 5},
            "particles": 10, "filter": {"sigma_w": 1, "prior": {"variance": 2}},
            "scheme": "geodesic", "estimators": ["kalman", "kalman_reference"], "seed": 3
        }"#;
        let c: ScenarioConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.repeats, 1);
        assert_eq!(c.filter.ess_fraction, 0.5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_scenarios() {
        let mut c = ScenarioConfig {
            scheme: InterpolationScheme::Geodesic,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::UnsupportedScheme(_))));
        c.scheme = InterpolationScheme::Linear;
        c.estimators = vec![Estimator::KalmanReference];
        assert!(matches!(c.validate(), Err(Error::UnsupportedScheme(_))));

        let mut c = ScenarioConfig::default();
        c.grid.delta_t = 0.0105;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));

        let c = ScenarioConfig {
            particles: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());

        let c = ScenarioConfig {
            x0: vec![1.0],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
