//! Canned scenarios for the sphere particle filter experiments, the
//! interpolated Kalman comparisons, the static-observation cloud and the
//! Riemann-sum convergence rate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Estimator, ScenarioConfig};
use super::ellipse::{run_ellipse, EllipseConfig};
use super::experiment::{mean_squared_error_table, run_experiment, Experiment, RunRecord};
use super::rate::{riemann_sum_rate, RateConfig};
use super::sweep::run_sweep;
use crate::antidev::InterpolationScheme;
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, Prior};
use crate::simulate::{ModelSpec, SimulationGrid, StairStep};

pub const SUMMARY_FILE: &str = "summary.json";

/// Sampling periods of the interpolated Kalman sweep, up to where the
/// geodesic step stops being reliable.
pub const FIG8_DELTAS: [f64; 9] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45];

/// Stair values and change times of the piecewise-constant sphere scenario.
pub const STAIR_TIMES: [f64; 3] = [0.0, 5.0, 10.0];
pub const STAIR_VALUES: [[f64; 3]; 3] = [[1.0, -0.8, 0.6], [-0.7, 1.0, 0.8], [0.5, 0.9, -1.0]];

/// Constant angular velocity of the full-frame Kalman scenarios.
pub const KALMAN_X: [f64; 3] = [1.2, -0.8, 1.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    Fig4,
    Fig5,
    Fig7,
    Fig8,
    Thm1Rate,
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            "fig7" => Ok(Figure::Fig7),
            "fig8" => Ok(Figure::Fig8),
            "thm1_rate" => Ok(Figure::Thm1Rate),
            other => Err(Error::InvalidConfig(format!("unknown figure {other:?}"))),
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
            Figure::Thm1Rate => "thm1_rate",
        })
    }
}

fn sphere_base(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n: 3,
        k: 1,
        sigma_w: 1.0,
        particles: 500,
        filter: FilterConfig::new(1.0, Prior::centered(2.0)),
        scheme: InterpolationScheme::Linear,
        estimators: vec![Estimator::Particle(None)],
        seed,
        repeats: 20,
        ..Default::default()
    }
}

/// Sphere, stair velocity with known change times, `delta_t = 0.01`.
pub fn stair_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        model: ModelSpec::Stair {
            schedule: STAIR_TIMES
                .iter()
                .zip(STAIR_VALUES)
                .map(|(&time, v)| StairStep { time, value: v.to_vec() })
                .collect(),
        },
        grid: SimulationGrid {
            h_sim: 1e-3,
            delta_t: 0.01,
            horizon: 15.0,
        },
        ..sphere_base(seed)
    }
}

/// Sphere, unit Brownian velocity started at zero. The horizon leaves enough
/// time for `|x|` to grow past the rate a 0.5 s sampling period can follow.
pub fn brownian_config(seed: u64, delta_t: f64) -> ScenarioConfig {
    ScenarioConfig {
        model: ModelSpec::Brownian {
            sigma_b: 1.0,
            drift: None,
        },
        grid: SimulationGrid {
            h_sim: 1e-3,
            delta_t,
            horizon: 20.0,
        },
        ..sphere_base(seed)
    }
}

/// SO(3), constant velocity, Kalman filters fed linear, geodesic and
/// reference increments.
pub fn kalman_config(seed: u64, delta_t: f64) -> ScenarioConfig {
    ScenarioConfig {
        n: 3,
        k: 3,
        model: ModelSpec::Constant,
        x0: KALMAN_X.to_vec(),
        sigma_w: 1.0,
        grid: SimulationGrid {
            h_sim: 1e-3,
            delta_t,
            horizon: 50.0,
        },
        particles: 500,
        filter: FilterConfig::new(1.0, Prior::centered(2.0)),
        scheme: InterpolationScheme::Geodesic,
        estimators: vec![
            Estimator::Kalman(Some(InterpolationScheme::Linear)),
            Estimator::Kalman(Some(InterpolationScheme::Geodesic)),
            Estimator::KalmanReference,
        ],
        seed,
        repeats: 20,
    }
}

/// Per-coordinate check on each constant segment: after `burn_in` seconds,
/// the time-averaged absolute error stays within `factor` times the
/// time-averaged posterior spread.
pub fn tracks_within_spread(record: &RunRecord, change_times: &[f64], burn_in: f64, factor: f64) -> bool {
    let truth = match &record.truth {
        Some(t) => t,
        None => return false,
    };
    let horizon = *record.times.last().unwrap();
    let mut bounds: Vec<f64> = change_times.iter().cloned().filter(|&t| t > 0.0 && t < horizon).collect();
    bounds.insert(0, 0.0);
    bounds.push(f64::INFINITY);
    let d = record.estimates[0].len();
    bounds.windows(2).all(|seg| {
        let (a, b) = (seg[0], seg[1]);
        let idx: Vec<usize> = (0..record.times.len())
            .filter(|&j| record.times[j] >= a + burn_in - 1e-9 && record.times[j] < b - 1e-9)
            .collect();
        if idx.is_empty() {
            return true;
        }
        let m = idx.len() as f64;
        let mut err = DVector::<f64>::zeros(d);
        let mut sd = DVector::<f64>::zeros(d);
        for &j in &idx {
            err += (&record.estimates[j] - &truth[j]).abs();
            sd += &record.sd[j];
        }
        (0..d).all(|c| err[c] / m <= factor * sd[c] / m)
    })
}

/// Time-averaged squared error of always predicting `mean`.
pub fn prior_predictor_mse(record: &RunRecord, mean: &DVector<f64>) -> f64 {
    let truth = record.truth.as_ref().expect("truth");
    let tail = &truth[1..];
    tail.iter().map(|x| (x - mean).norm_squared()).sum::<f64>() / tail.len() as f64
}

/// Whether the repeat-averaged squared error over the second half of the
/// horizon is at least its average over the first half.
pub fn error_non_decreasing(exp: &Experiment, label: &str) -> bool {
    let labels = [label.to_string()];
    let records: Vec<RunRecord> = exp.records_for(label).cloned().collect();
    match mean_squared_error_table(&labels, &records) {
        Some((_, cols)) => {
            let tail = &cols[0][1..];
            let half = tail.len() / 2;
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            half > 0 && mean(&tail[half..]) >= mean(&tail[..half])
        }
        None => false,
    }
}

fn write_summary(out: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn fig4(seed: u64, out: &Path) -> Result<Value> {
    let stair = run_experiment(&stair_config(seed))?;
    let slow = run_experiment(&brownian_config(seed, 0.01))?;
    let fast = run_experiment(&brownian_config(seed, 0.5))?;
    stair.write(&out.join("top"))?;
    slow.write(&out.join("middle"))?;
    fast.write(&out.join("bottom"))?;
    let label = "particle_linear";
    let tracked = stair
        .records_for(label)
        .filter(|r| tracks_within_spread(r, &STAIR_TIMES, 2.5, 3.0))
        .count();
    let prior_mean = DVector::zeros(3);
    let prior_mse = slow.records_for(label).map(|r| prior_predictor_mse(r, &prior_mean)).sum::<f64>()
        / slow.report.config.repeats as f64;
    let slow_mse = slow.aggregate(label).unwrap().mean_time_avg_mse;
    let fast_mse = fast.aggregate(label).unwrap().mean_time_avg_mse;
    let summary = json!({
        "stair_runs_tracked": tracked,
        "stair_runs": stair.report.config.repeats,
        "brownian_mse": slow_mse,
        "brownian_prior_mean_mse": prior_mse,
        "coarse_mse": fast_mse,
        "coarse_over_fine": fast_mse / slow_mse,
        "coarse_error_non_decreasing": error_non_decreasing(&fast, label),
        "tracking_failure": fast_mse >= 3.0 * slow_mse && error_non_decreasing(&fast, label),
    });
    write_summary(out, &summary)?;
    Ok(summary)
}

fn fig5(seed: u64, out: &Path) -> Result<Value> {
    let e = run_ellipse(&EllipseConfig {
        seed,
        ..Default::default()
    })?;
    e.write(out)?;
    Ok(serde_json::to_value(&e.report)?)
}

fn fig7(seed: u64, out: &Path) -> Result<Value> {
    let e = run_experiment(&kalman_config(seed, 0.2))?;
    e.write(out)?;
    Ok(serde_json::to_value(&e.report.aggregate)?)
}

fn fig8(seed: u64, out: &Path) -> Result<Value> {
    let s = run_sweep(&kalman_config(seed, FIG8_DELTAS[0]), &FIG8_DELTAS)?;
    s.write(out)?;
    Ok(serde_json::to_value(&s.report)?)
}

fn thm1(seed: u64, out: &Path) -> Result<Value> {
    let r = riemann_sum_rate(&RateConfig {
        seed,
        ..Default::default()
    })?;
    r.write(out)?;
    Ok(serde_json::to_value(&r.report)?)
}

/// Runs a canned scenario into `out` and returns its headline numbers.
pub fn run_repro(figure: Figure, seed: u64, out: &Path) -> Result<Value> {
    match figure {
        Figure::Fig4 => fig4(seed, out),
        Figure::Fig5 => fig5(seed, out),
        Figure::Fig7 => fig7(seed, out),
        Figure::Fig8 => fig8(seed, out),
        Figure::Thm1Rate => thm1(seed, out),
    }
}
