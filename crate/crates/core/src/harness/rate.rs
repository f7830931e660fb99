//! Mean-square convergence of the Riemann sum `sum_j <x_{t_j}, Int(P_j, P_{j+1})>`
//! to the stochastic integral `int <x_t, dz_t>` as the sampling period shrinks.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::antidev::{antidevelopment, InterpolationScheme};
use crate::csvio::write_table;
use crate::error::{Error, Result};
use crate::geometry::{inner_so, Rotation, SkewMatrix};
use crate::rng::SeedTree;
use crate::simulate::{multiple_of, observe, simulate_truth, SimulationGrid, StateModel};

pub const RATE_FILE: &str = "rate.json";
pub const RATE_TABLE: &str = "rate.csv";
pub const RATE_PATHS: &str = "rate_paths.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub n: usize,
    pub k: usize,
    pub scheme: InterpolationScheme,
    pub sigma_b: f64,
    pub sigma_w: f64,
    pub h_sim: f64,
    pub horizon: f64,
    pub delta_ts: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
}

/// `sigma_b` is small so that the O(delta_t) martingale term dominates the
/// squared O(delta_t) bias of the left-point sum over the tested periods.
impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            n: 3,
            k: 3,
            scheme: InterpolationScheme::Geodesic,
            sigma_b: 0.25,
            sigma_w: 1.0,
            h_sim: 1e-3,
            horizon: 5.0,
            delta_ts: vec![0.025, 0.05, 0.1, 0.2],
            paths: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub config: RateConfig,
    pub mse: Vec<f64>,
    pub std_error: Vec<f64>,
    pub slope: f64,
}

pub struct Rate {
    pub report: RateReport,
    /// `sq_errors[p][i]`: squared error of path `p` at period `i`.
    pub sq_errors: Vec<Vec<f64>>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Mean and standard error over paths for every period.
pub fn mse_from_paths(sq_errors: &[Vec<f64>], periods: usize) -> (Vec<f64>, Vec<f64>) {
    let p = sq_errors.len() as f64;
    (0..periods)
        .map(|i| {
            let mean = sq_errors.iter().map(|e| e[i]).sum::<f64>() / p;
            let var = sq_errors.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / (p - 1.0).max(1.0);
            (mean, (var / p).sqrt())
        })
        .unzip()
}

fn one_path(cfg: &RateConfig, finest: f64, path: u64) -> Result<Vec<f64>> {
    let grid = SimulationGrid::new(cfg.h_sim, finest, cfg.horizon)?;
    let model = StateModel::brownian(cfg.n, cfg.sigma_b)?;
    let seeds = SeedTree::new(cfg.seed).child(path);
    let truth = simulate_truth(
        &model,
        &grid,
        cfg.sigma_w,
        cfg.k,
        &Rotation::identity(cfg.n),
        &SkewMatrix::zeros(cfg.n),
        &seeds,
    )?;
    cfg.delta_ts
        .iter()
        .map(|&dt| {
            let stride = multiple_of(dt, finest).unwrap();
            let stream = observe(&truth, cfg.k, stride as f64 * grid.delta_t)?;
            let anti = antidevelopment(&stream, cfg.scheme)?;
            let mut sum = 0.0;
            for (j, inc) in anti.increments.iter().enumerate() {
                sum += inner_so(&truth.x[j * stride], inc)?;
            }
            let last = (stream.len() - 1) * stride;
            Ok((sum - truth.pairing_ref[last]).powi(2))
        })
        .collect()
}

pub fn riemann_sum_rate(cfg: &RateConfig) -> Result<Rate> {
    if cfg.delta_ts.len() < 2 || cfg.paths < 2 {
        return Err(Error::InvalidConfig("need at least two periods and two paths".into()));
    }
    cfg.scheme.check(cfg.n, cfg.k)?;
    let finest = cfg.delta_ts.iter().cloned().fold(f64::INFINITY, f64::min);
    for &dt in &cfg.delta_ts {
        if multiple_of(dt, finest).is_none() || multiple_of(cfg.horizon, dt).is_none() {
            return Err(Error::GridMismatch(format!(
                "delta_t={dt} must be a multiple of {finest} and divide T={}",
                cfg.horizon
            )));
        }
    }
    let sq_errors = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| one_path(cfg, finest, p))
        .collect::<Result<Vec<_>>>()?;
    let (mse, std_error) = mse_from_paths(&sq_errors, cfg.delta_ts.len());
    let slope = log_log_slope(&cfg.delta_ts, &mse);
    Ok(Rate {
        report: RateReport {
            config: cfg.clone(),
            mse,
            std_error,
            slope,
        },
        sq_errors,
    })
}

impl Rate {
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let r = &self.report;
        let rows: Vec<Vec<f64>> = (0..r.mse.len())
            .map(|i| vec![r.config.delta_ts[i], r.mse[i], r.std_error[i]])
            .collect();
        write_table(
            &out.join(RATE_TABLE),
            &["delta_t".into(), "mse".into(), "std_error".into()],
            &rows,
        )?;
        let mut header = vec!["path".to_string()];
        header.extend(r.config.delta_ts.iter().map(|d| format!("sq_error_{d}")));
        let rows: Vec<Vec<f64>> = self
            .sq_errors
            .iter()
            .enumerate()
            .map(|(p, e)| std::iter::once(p as f64).chain(e.iter().cloned()).collect())
            .collect();
        write_table(&out.join(RATE_PATHS), &header, &rows)?;
        std::fs::write(out.join(RATE_FILE), serde_json::to_string_pretty(r)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_incommensurate_periods() {
        let cfg = RateConfig {
            delta_ts: vec![0.02, 0.03],
            ..Default::default()
        };
        assert!(matches!(riemann_sum_rate(&cfg), Err(Error::GridMismatch(_))));
    }
}
