//! Particle cloud shape under a static observation on the sphere.
//!
//! With `P` fixed, the likelihood penalizes only the horizontal part of each
//! particle, so the cloud keeps diffusing along the vertical direction
//! (rotations about `P`) while its horizontal spread stays bounded.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::antidev::InterpolationScheme;
use crate::csvio::write_table;
use crate::error::Result;
use crate::filters::{pf_init, pf_step, FilterConfig, ParticleEnsemble, Prior};
use crate::geometry::{horizontal_projector, skew_dim, StiefelPoint};
use crate::rng::SeedTree;
use crate::simulate::StateModel;

pub const ELLIPSE_FILE: &str = "ellipse.json";
pub const ELLIPSE_TABLE: &str = "ellipse.csv";
pub const ELLIPSE_FINAL: &str = "ellipse_final.csv";
pub const ELLIPSE_CLOUD: &str = "particles.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseConfig {
    pub particles: usize,
    pub steps: usize,
    pub delta_t: f64,
    pub sigma_b: f64,
    pub sigma_w: f64,
    pub prior_variance: f64,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for EllipseConfig {
    fn default() -> Self {
        EllipseConfig {
            particles: 500,
            steps: 100,
            delta_t: 0.01,
            sigma_b: 1.0,
            sigma_w: 1.0,
            prior_variance: 2.0,
            seeds: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseReport {
    pub config: EllipseConfig,
    pub final_vertical: Vec<f64>,
    pub final_horizontal: Vec<f64>,
    /// Seeds whose final vertical variance exceeds the horizontal one.
    pub vertical_exceeds: usize,
}

pub struct Ellipse {
    pub report: EllipseReport,
    /// `vertical[s][j]`, per-direction variance for seed `s` after step `j`.
    pub vertical: Vec<Vec<f64>>,
    pub horizontal: Vec<Vec<f64>>,
    /// Final ensemble of the first seed.
    pub cloud: ParticleEnsemble,
}

/// `(vertical, horizontal)` weighted variance per direction at `P`.
pub fn split_variance(ens: &ParticleEnsemble, p: &StiefelPoint) -> (f64, f64) {
    let d = skew_dim(ens.n);
    let w = ens.weights();
    let mut mean = DVector::zeros(d);
    for (x, wi) in ens.states.iter().zip(&w) {
        mean += x.coords() * *wi;
    }
    let mut cov = DMatrix::zeros(d, d);
    for (x, wi) in ens.states.iter().zip(&w) {
        let e = x.coords() - &mean;
        cov += &e * e.transpose() * *wi;
    }
    let proj = horizontal_projector(p);
    let dim_h = proj.trace().round();
    let horizontal = (&proj * &cov).trace();
    let vertical = cov.trace() - horizontal;
    (vertical / (d as f64 - dim_h), horizontal / dim_h)
}

fn one_seed(cfg: &EllipseConfig, s: u64) -> Result<(Vec<f64>, Vec<f64>, ParticleEnsemble)> {
    let p = StiefelPoint::new(DMatrix::identity(3, 3).columns(0, 1).into_owned())?;
    let model = StateModel::brownian(3, cfg.sigma_b)?;
    let transition = model.transition(cfg.delta_t)?;
    let filter = FilterConfig::new(cfg.sigma_w, Prior::centered(cfg.prior_variance));
    let mut ens = pf_init(3, cfg.particles, &filter.prior, &SeedTree::new(cfg.seed).child(s))?;
    let mut vertical = Vec::with_capacity(cfg.steps + 1);
    let mut horizontal = Vec::with_capacity(cfg.steps + 1);
    let (v, h) = split_variance(&ens, &p);
    vertical.push(v);
    horizontal.push(h);
    for _ in 0..cfg.steps {
        pf_step(&mut ens, &p, &p, &transition, &filter, cfg.delta_t, InterpolationScheme::Linear)?;
        let (v, h) = split_variance(&ens, &p);
        vertical.push(v);
        horizontal.push(h);
    }
    Ok((vertical, horizontal, ens))
}

pub fn run_ellipse(cfg: &EllipseConfig) -> Result<Ellipse> {
    let per_seed = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| one_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let mut vertical = Vec::new();
    let mut horizontal = Vec::new();
    let mut cloud = None;
    for (v, h, ens) in per_seed {
        vertical.push(v);
        horizontal.push(h);
        cloud.get_or_insert(ens);
    }
    let final_vertical: Vec<f64> = vertical.iter().map(|v| *v.last().unwrap()).collect();
    let final_horizontal: Vec<f64> = horizontal.iter().map(|h| *h.last().unwrap()).collect();
    let vertical_exceeds = final_vertical.iter().zip(&final_horizontal).filter(|(v, h)| v > h).count();
    Ok(Ellipse {
        report: EllipseReport {
            config: cfg.clone(),
            final_vertical,
            final_horizontal,
            vertical_exceeds,
        },
        vertical,
        horizontal,
        cloud: cloud.expect("at least one seed"),
    })
}

impl Ellipse {
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let cfg = &self.report.config;
        let seeds = self.vertical.len() as f64;
        let rows: Vec<Vec<f64>> = (0..=cfg.steps)
            .map(|j| {
                let v = self.vertical.iter().map(|s| s[j]).sum::<f64>() / seeds;
                let h = self.horizontal.iter().map(|s| s[j]).sum::<f64>() / seeds;
                vec![j as f64, j as f64 * cfg.delta_t, v, h]
            })
            .collect();
        let header = ["step", "time", "vertical_var", "horizontal_var"].map(String::from);
        write_table(&out.join(ELLIPSE_TABLE), &header, &rows)?;
        let rows: Vec<Vec<f64>> = (0..self.vertical.len())
            .map(|s| {
                vec![
                    s as f64,
                    self.report.final_vertical[s],
                    self.report.final_horizontal[s],
                ]
            })
            .collect();
        let header = ["seed", "vertical_var", "horizontal_var"].map(String::from);
        write_table(&out.join(ELLIPSE_FINAL), &header, &rows)?;
        let rows: Vec<Vec<f64>> = self
            .cloud
            .states
            .iter()
            .zip(self.cloud.weights())
            .map(|(x, w)| x.coords().iter().cloned().chain(std::iter::once(w)).collect())
            .collect();
        let header = ["x_0", "x_1", "x_2", "weight"].map(String::from);
        write_table(&out.join(ELLIPSE_CLOUD), &header, &rows)?;
        std::fs::write(out.join(ELLIPSE_FILE), serde_json::to_string_pretty(&self.report)? + "\n")?;
        Ok(())
    }
}
