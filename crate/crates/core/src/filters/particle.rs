use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::{FilterConfig, Prior, ResamplePolicy};
use crate::antidev::InterpolationScheme;
use crate::error::{Error, Result};
use crate::geometry::{horizontal_projector, skew_dim, SkewMatrix, StiefelPoint};
use crate::rng::{stream, SeedTree, StreamRng};
use crate::simulate::{ObservationStream, StateModel, Transition, TIME_EPS};

const PAR_CHUNK: usize = 64;
const NORMALIZATION_TOL: f64 = 1e-10;

/// Weighted particle cloud. Each slot owns its random stream, so propagation
/// gives the same numbers whatever the thread count.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub n: usize,
    pub states: Vec<SkewMatrix>,
    pub log_weights: Vec<f64>,
    rngs: Vec<StreamRng>,
    resample_rng: StreamRng,
    steps: usize,
}

impl ParticleEnsemble {
    /// Ensemble with given states and (not necessarily normalized) log-weights.
    pub fn from_parts(n: usize, states: Vec<SkewMatrix>, log_weights: Vec<f64>, seeds: &SeedTree) -> Result<Self> {
        if states.is_empty() || states.len() != log_weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states and {} weights",
                states.len(),
                log_weights.len()
            )));
        }
        if states.iter().any(|s| s.dim() != n) {
            return Err(Error::DimensionMismatch("particle outside so(n)".into()));
        }
        let rngs = (0..states.len()).map(|i| seeds.particle(i)).collect();
        Ok(ParticleEnsemble {
            n,
            states,
            log_weights,
            rngs,
            resample_rng: seeds.stream(stream::RESAMPLING),
            steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Number of completed filter steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Redraws every particle from the prior and resets the weights.
    pub fn reinitialize(&mut self, prior: &Prior) -> Result<()> {
        let n = self.n;
        self.states = self
            .rngs
            .par_iter_mut()
            .with_min_len(PAR_CHUNK)
            .map(|rng| prior.sample(n, rng))
            .collect::<Result<Vec<_>>>()?;
        let uniform = -(self.len() as f64).ln();
        self.log_weights.iter_mut().for_each(|l| *l = uniform);
        Ok(())
    }

    fn propagate(&mut self, transition: &Transition) {
        if transition.is_identity() {
            return;
        }
        self.states
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .with_min_len(PAR_CHUNK)
            .for_each(|(x, rng)| *x = transition.apply(x, rng));
    }

    /// Multinomial resampling; slots keep their own random streams.
    fn resample(&mut self) {
        let counts = multinomial_counts(&self.weights(), &mut self.resample_rng);
        let mut states = Vec::with_capacity(self.len());
        for (i, &c) in counts.iter().enumerate() {
            states.extend(std::iter::repeat_n(&self.states[i], c).cloned());
        }
        self.states = states;
        let uniform = -(self.len() as f64).ln();
        self.log_weights.iter_mut().for_each(|l| *l = uniform);
    }
}

/// N particles drawn i.i.d. from the prior with weights 1/N.
pub fn pf_init(n: usize, particles: usize, prior: &Prior, seeds: &SeedTree) -> Result<ParticleEnsemble> {
    if particles == 0 {
        return Err(Error::InvalidConfig("need at least one particle".into()));
    }
    prior.validate(n)?;
    let zeros = vec![SkewMatrix::zeros(n); particles];
    let mut ens = ParticleEnsemble::from_parts(n, zeros, vec![0.0; particles], seeds)?;
    ens.reinitialize(prior)?;
    Ok(ens)
}

/// Sum in a fixed binary tree over the index, independent of scheduling.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Shifts log-weights so that their exponentials sum to one.
pub fn normalize_log_weights(log_weights: &mut [f64], step: usize) -> Result<()> {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|l| l.is_nan()) {
        return Err(Error::DegenerateEnsemble { step });
    }
    let shifted: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let lse = max + pairwise_sum(&shifted).ln();
    log_weights.iter_mut().for_each(|l| *l -= lse);
    Ok(())
}

/// Effective sample size `1 / sum w_i^2` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    1.0 / pairwise_sum(&sq)
}

/// Multinomial draw of N = `weights.len()` offspring counts.
pub fn multinomial_counts<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * total).collect();
    u.sort_by(f64::total_cmp);
    let mut counts = vec![0usize; n];
    let mut i = 0;
    for x in u {
        while i < last && cdf[i] <= x {
            i += 1;
        }
        counts[i] += 1;
    }
    counts
}

/// `(<omega(chi(X, P)), dz> - |chi(X, P)|^2 delta_t / 2) / sigma_w^2` for each state.
pub fn log_likelihood_increments(
    states: &[SkewMatrix],
    p_prev: &StiefelPoint,
    dz: &SkewMatrix,
    sigma_w: f64,
    delta_t: f64,
) -> Result<Vec<f64>> {
    if dz.dim() != p_prev.n() || states.iter().any(|s| s.dim() != p_prev.n()) {
        return Err(Error::DimensionMismatch("likelihood inputs live on different so(n)".into()));
    }
    let proj = horizontal_projector(p_prev);
    let dzc = dz.coords();
    let inv_var = 1.0 / (sigma_w * sigma_w);
    Ok(states
        .par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|x| {
            let h = &proj * x.coords();
            (h.dot(&dzc) - 0.5 * h.norm_squared() * delta_t) * inv_var
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub ess: f64,
    pub resampled: bool,
}

/// Propagate, weight with the increment over `[t_prev, t_next]`, normalize
/// and resample when the policy says so.
#[allow(clippy::too_many_arguments)]
pub fn pf_step(
    ens: &mut ParticleEnsemble,
    p_prev: &StiefelPoint,
    p_next: &StiefelPoint,
    transition: &Transition,
    cfg: &FilterConfig,
    delta_t: f64,
    scheme: InterpolationScheme,
) -> Result<StepInfo> {
    if !(delta_t > 0.0) {
        return Err(Error::InvalidConfig(format!("delta_t must be > 0, got {delta_t}")));
    }
    let dz = scheme.increment(p_prev, p_next)?;
    ens.propagate(transition);
    let inc = log_likelihood_increments(&ens.states, p_prev, &dz, cfg.sigma_w, delta_t)?;
    for (l, d) in ens.log_weights.iter_mut().zip(inc) {
        *l += d;
    }
    normalize_log_weights(&mut ens.log_weights, ens.steps)?;
    ens.steps += 1;
    let current = ess(&ens.weights());
    let resample = match cfg.resample_policy {
        ResamplePolicy::EssThreshold => current < cfg.ess_fraction * ens.len() as f64,
        ResamplePolicy::EveryMSteps { m } => ens.steps % m == 0,
    };
    if resample {
        ens.resample();
    }
    Ok(StepInfo {
        ess: current,
        resampled: resample,
    })
}

fn check_normalized(ens: &ParticleEnsemble) -> Result<Vec<f64>> {
    let w = ens.weights();
    let total = pairwise_sum(&w);
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized(total));
    }
    Ok(w)
}

/// Weighted mean of the particles.
pub fn pf_estimate(ens: &ParticleEnsemble) -> Result<SkewMatrix> {
    let w = check_normalized(ens)?;
    let mut mean = DVector::zeros(skew_dim(ens.n));
    for (x, wi) in ens.states.iter().zip(&w) {
        mean += x.coords() * *wi;
    }
    SkewMatrix::from_coords(ens.n, mean.as_slice())
}

/// Weighted standard deviation of each coordinate.
pub fn pf_spread(ens: &ParticleEnsemble) -> Result<DVector<f64>> {
    let w = check_normalized(ens)?;
    let mean = pf_estimate(ens)?.coords();
    let mut var = DVector::zeros(mean.len());
    for (x, wi) in ens.states.iter().zip(&w) {
        let e = x.coords() - &mean;
        var += e.component_mul(&e) * *wi;
    }
    Ok(var.map(f64::sqrt))
}

/// Per-sample output of a particle filter run. Entry 0 is the prior.
#[derive(Clone, Debug)]
pub struct ParticleRun {
    pub times: Vec<f64>,
    pub estimates: Vec<DVector<f64>>,
    pub spread: Vec<DVector<f64>>,
    pub ess: Vec<f64>,
    pub resampled: Vec<bool>,
    pub ensemble: ParticleEnsemble,
}

/// The particle filter over a whole stream. Particles are redrawn from the
/// prior at the model's change times.
pub fn run_particle_filter(
    stream: &ObservationStream,
    model: &StateModel,
    cfg: &FilterConfig,
    scheme: InterpolationScheme,
    particles: usize,
    seeds: &SeedTree,
) -> Result<ParticleRun> {
    if model.n() != stream.n {
        return Err(Error::DimensionMismatch(format!(
            "model is on so({}) but observations are in V({}, {})",
            model.n(),
            stream.n,
            stream.k
        )));
    }
    if stream.is_empty() {
        return Err(Error::InvalidConfig("empty observation stream".into()));
    }
    cfg.validate(stream.n, particles)?;
    scheme.check(stream.n, stream.k)?;
    let transition = model.transition(stream.delta_t)?;
    let mut ens = pf_init(stream.n, particles, &cfg.prior, seeds)?;

    let samples = stream.len();
    let mut run = ParticleRun {
        times: stream.times.clone(),
        estimates: Vec::with_capacity(samples),
        spread: Vec::with_capacity(samples),
        ess: Vec::with_capacity(samples),
        resampled: Vec::with_capacity(samples),
        ensemble: ens.clone(),
    };
    run.estimates.push(pf_estimate(&ens)?.coords());
    run.spread.push(pf_spread(&ens)?);
    run.ess.push(particles as f64);
    run.resampled.push(false);

    let changes = model.change_times();
    for j in 1..samples {
        let (t_prev, t_next) = (stream.times[j - 1], stream.times[j]);
        let change = changes
            .iter()
            .any(|&tau| t_prev - TIME_EPS <= tau && tau < t_next - TIME_EPS);
        if change && j > 1 {
            ens.reinitialize(&cfg.prior)?;
        }
        let info = pf_step(
            &mut ens,
            &stream.points[j - 1],
            &stream.points[j],
            &transition,
            cfg,
            stream.delta_t,
            scheme,
        )?;
        run.estimates.push(pf_estimate(&ens)?.coords());
        run.spread.push(pf_spread(&ens)?);
        run.ess.push(info.ess);
        run.resampled.push(info.resampled);
    }
    run.ensemble = ens;
    Ok(run)
}
