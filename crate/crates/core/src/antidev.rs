//! Anti-development of a sampled Stiefel observation.
//!
//! Between two samples the observation is replaced by an interpolation
//! function `Int(P_prev, P_next) in so(n)` that vanishes on the diagonal, has
//! first derivative `omega` there, and zero symmetric second derivative. Sum
//! of these increments converges in mean square to the continuous
//! anti-development, at rate O(delta_t).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::geometry::{exp_so, log_so, project, skew_dim, Rotation, SkewMatrix, StiefelPoint, INPUT_TOL};
use crate::simulate::{ObservationStream, TruthTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationScheme {
    Linear,
    Geodesic,
}

impl InterpolationScheme {
    /// Geodesic interpolation needs full observations (`k = n`).
    pub fn check(&self, n: usize, k: usize) -> Result<()> {
        match self {
            InterpolationScheme::Geodesic if k != n => Err(Error::UnsupportedScheme(format!(
                "geodesic interpolation needs k = n, got n={n}, k={k}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn increment(&self, prev: &StiefelPoint, next: &StiefelPoint) -> Result<SkewMatrix> {
        match self {
            InterpolationScheme::Linear => int_linear(prev, next),
            InterpolationScheme::Geodesic => int_geodesic(prev, next),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InterpolationScheme::Linear => "linear",
            InterpolationScheme::Geodesic => "geodesic",
        }
    }
}

impl fmt::Display for InterpolationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterpolationScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InterpolationScheme::Linear),
            "geodesic" => Ok(InterpolationScheme::Geodesic),
            other => Err(Error::InvalidConfig(format!("unknown interpolation scheme {other:?}"))),
        }
    }
}

fn check_same_shape(prev: &StiefelPoint, next: &StiefelPoint) -> Result<()> {
    if prev.matrix().shape() != next.matrix().shape() {
        return Err(Error::DimensionMismatch(format!(
            "samples are {}x{} and {}x{}",
            prev.n(),
            prev.k(),
            next.n(),
            next.k()
        )));
    }
    Ok(())
}

/// Linear interpolation
/// `(P P'^T - P' P^T) - (P' (P'^T P - P^T P') P'^T) / 2` with `P' = prev`.
///
/// Reduces to `P P'^T - P' P^T` on the sphere (`k = 1`) and to
/// `(P P'^T - P' P^T) / 2` on full frames (`k = n`). For `1 < k < n` the
/// first derivative is still `omega`, but the symmetric second derivative
/// and antisymmetry in the arguments only hold up to O(|P - P'|^2).
pub fn int_linear(prev: &StiefelPoint, next: &StiefelPoint) -> Result<SkewMatrix> {
    check_same_shape(prev, next)?;
    let pp = prev.matrix();
    let p = next.matrix();
    let m = p * pp.transpose() - pp * p.transpose();
    let g = pp.transpose() * p - p.transpose() * pp;
    let correction = pp * g * pp.transpose() * 0.5;
    SkewMatrix::from_matrix(m - correction)
}

/// Geodesic interpolation `log(P P'^T)`, full frames only.
pub fn int_geodesic(prev: &StiefelPoint, next: &StiefelPoint) -> Result<SkewMatrix> {
    check_same_shape(prev, next)?;
    InterpolationScheme::Geodesic.check(prev.n(), prev.k())?;
    let rel = Rotation::from_matrix(next.matrix() * prev.matrix().transpose())?;
    log_so(&rel)
}

/// Increments between consecutive samples and their running sum in so(n)
/// coordinates. Increment `j` covers `[times[j], times[j + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntidevelopmentPath {
    pub n: usize,
    pub times: Vec<f64>,
    pub increments: Vec<SkewMatrix>,
    pub cumulative: Vec<DVector<f64>>,
}

impl AntidevelopmentPath {
    pub fn from_increments(n: usize, times: Vec<f64>, increments: Vec<SkewMatrix>) -> Result<Self> {
        if times.len() != increments.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} times for {} increments",
                times.len(),
                increments.len()
            )));
        }
        if increments.iter().any(|i| i.dim() != n) {
            return Err(Error::DimensionMismatch("increment outside so(n)".into()));
        }
        let mut cumulative = Vec::with_capacity(times.len());
        let mut acc = DVector::zeros(skew_dim(n));
        cumulative.push(acc.clone());
        for inc in &increments {
            acc += inc.coords();
            cumulative.push(acc.clone());
        }
        Ok(AntidevelopmentPath {
            n,
            times,
            increments,
            cumulative,
        })
    }

    /// Reference path from the fine-grid anti-development of a simulated
    /// trajectory, sampled every `delta_t`.
    pub fn from_reference(truth: &TruthTrajectory, delta_t: f64) -> Result<Self> {
        let stride = truth.sample_stride(delta_t)?;
        let idx: Vec<usize> = (0..truth.len()).step_by(stride).collect();
        let times = idx.iter().map(|&j| truth.times[j]).collect();
        let increments = idx
            .windows(2)
            .map(|w| {
                let diff = &truth.z_ref[w[1]] - &truth.z_ref[w[0]];
                SkewMatrix::from_coords(truth.n, diff.as_slice())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_increments(truth.n, times, increments)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `time, z_0, ..., z_{d-1}` of the cumulative path.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = skew_dim(self.n);
        let mut header = vec!["time".to_string()];
        header.extend((0..d).map(|c| format!("z_{c}")));
        let rows: Vec<Vec<f64>> = self
            .times
            .iter()
            .zip(&self.cumulative)
            .map(|(&t, z)| std::iter::once(t).chain(z.iter().cloned()).collect())
            .collect();
        csvio::write_table(path, &header, &rows)
    }
}

/// Increments `Int(P_j, P_{j+1})` for every consecutive pair of samples.
pub fn antidevelopment(stream: &ObservationStream, scheme: InterpolationScheme) -> Result<AntidevelopmentPath> {
    if stream.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "anti-development needs at least 2 samples, got {}",
            stream.len()
        )));
    }
    scheme.check(stream.n, stream.k)?;
    let increments = stream
        .points
        .par_windows(2)
        .map(|w| scheme.increment(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    AntidevelopmentPath::from_increments(stream.n, stream.times.clone(), increments)
}

/// Horizontal lift `R_{j+1} = exp(Int(P_j, P_{j+1})) R_j` from `R_0 = r0`.
pub fn horizontal_lift(
    stream: &ObservationStream,
    scheme: InterpolationScheme,
    r0: &Rotation,
) -> Result<Vec<Rotation>> {
    let first = stream
        .points
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty observation stream".into()))?;
    let residual = (project(r0, stream.k)?.matrix() - first.matrix()).norm();
    if residual > INPUT_TOL {
        return Err(Error::InconsistentFrame(residual));
    }
    let path = antidevelopment(stream, scheme)?;
    let mut out = Vec::with_capacity(stream.len());
    out.push(r0.clone());
    for inc in &path.increments {
        let next = exp_so(inc).compose(out.last().unwrap());
        out.push(next);
    }
    Ok(out)
}

/// `|P_next - exp(Int(P_prev, P_next)) P_prev|_F`: how far one lifted step
/// misses the next sample.
pub fn lift_defect(prev: &StiefelPoint, next: &StiefelPoint, scheme: InterpolationScheme) -> Result<f64> {
    let inc = scheme.increment(prev, next)?;
    let moved: DMatrix<f64> = exp_so(&inc).matrix() * prev.matrix();
    Ok((moved - next.matrix()).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chi, horizontal_part, omega, random_skew, random_stiefel, random_tangent};
    use crate::rng::SeedTree;
    use crate::simulate::{observe, simulate_truth, SimulationGrid, StateModel};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moved(sigma: &SkewMatrix, p: &StiefelPoint) -> StiefelPoint {
        StiefelPoint::new(exp_so(sigma).matrix() * p.matrix()).unwrap()
    }

    #[test]
    fn diagonal_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, k) in [(3, 1), (4, 2), (4, 4)] {
            let p = random_stiefel(n, k, &mut rng);
            assert_eq!(int_linear(&p, &p).unwrap(), SkewMatrix::zeros(n));
        }
        let p = random_stiefel(3, 3, &mut rng);
        assert!(int_geodesic(&p, &p).unwrap().matrix().norm() < 1e-15);
    }

    #[test]
    fn linear_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, k) in [(3, 3), (4, 4), (3, 1), (5, 1)] {
            let a = random_stiefel(n, k, &mut rng);
            let b = random_stiefel(n, k, &mut rng);
            let m = b.matrix() * a.matrix().transpose() - a.matrix() * b.matrix().transpose();
            let expect = if k == n { m * 0.5 } else { m };
            assert_abs_diff_eq!(int_linear(&a, &b).unwrap().matrix(), &expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_derivative_is_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, k) in [(3, 1), (4, 1), (3, 3), (4, 4)] {
            let p = random_stiefel(n, k, &mut rng);
            let v = random_tangent(&p, 1.0, &mut rng);
            let sigma_h = omega(&v);
            let mut errs = Vec::new();
            for t in [1e-3, 1e-4] {
                let fd = int_linear(&p, &moved(&sigma_h.scale(t), &p)).unwrap().scale(1.0 / t);
                errs.push((fd.matrix() - sigma_h.matrix()).norm());
            }
            // second derivative vanishes along horizontal curves: error is O(t^2)
            assert!(errs[0] < 1e-5, "{errs:?}");
            assert!(errs[1] < 1e-7, "{errs:?}");
        }
    }

    #[test]
    fn geodesic_recovers_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_stiefel(3, 3, &mut rng);
            let mut sigma = random_skew(3, 1.0, &mut rng);
            while sigma.norm() > 3.0 {
                sigma = sigma.scale(0.5);
            }
            let q = moved(&sigma, &p);
            let inc = int_geodesic(&p, &q).unwrap();
            assert_abs_diff_eq!(inc.matrix(), sigma.matrix(), epsilon = 1e-10);
            assert!(lift_defect(&p, &q, InterpolationScheme::Geodesic).unwrap() < 1e-9);
        }
    }

    #[test]
    fn geodesic_needs_full_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_stiefel(3, 2, &mut rng);
        assert!(matches!(int_geodesic(&p, &p), Err(Error::UnsupportedScheme(_))));
        let q = random_stiefel(3, 1, &mut rng);
        assert!(matches!(int_linear(&p, &q), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn antisymmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (n, k) in [(3, 1), (4, 1), (3, 3), (4, 4)] {
            let a = random_stiefel(n, k, &mut rng);
            let b = moved(&random_skew(n, 0.5, &mut rng), &a);
            let fwd = int_linear(&a, &b).unwrap();
            let back = int_linear(&b, &a).unwrap();
            assert_abs_diff_eq!(fwd.matrix(), &(-back.matrix()), epsilon = 1e-14);
            if k == n {
                let fwd = int_geodesic(&a, &b).unwrap();
                let back = int_geodesic(&b, &a).unwrap();
                assert_abs_diff_eq!(fwd.matrix(), &(-back.matrix()), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_stream_has_zero_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_stiefel(3, 1, &mut rng);
        let stream = ObservationStream {
            n: 3,
            k: 1,
            delta_t: 0.1,
            times: vec![0.0, 0.1, 0.2],
            points: vec![p.clone(), p.clone(), p],
        };
        let path = antidevelopment(&stream, InterpolationScheme::Linear).unwrap();
        assert!(path.increments.iter().all(|i| *i == SkewMatrix::zeros(3)));
        assert!(path.cumulative.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        assert!(antidevelopment(&stream, InterpolationScheme::Geodesic).is_err());
    }

    fn noiseless(x: &SkewMatrix, k: usize, delta_t: f64, horizon: f64) -> (TruthTrajectory, ObservationStream) {
        let grid = SimulationGrid::new(delta_t / 10.0, delta_t, horizon).unwrap();
        let truth = simulate_truth(
            &StateModel::constant(3),
            &grid,
            0.0,
            k,
            &Rotation::identity(3),
            x,
            &SeedTree::new(0),
        )
        .unwrap();
        let stream = observe(&truth, k, delta_t).unwrap();
        (truth, stream)
    }

    #[test]
    fn geodesic_cumulative_follows_constant_velocity() {
        let x = SkewMatrix::from_coords(3, &[0.4, -1.0, 0.3]).unwrap();
        let (_, stream) = noiseless(&x, 3, 0.1, 2.0);
        let path = antidevelopment(&stream, InterpolationScheme::Geodesic).unwrap();
        for (t, z) in path.times.iter().zip(&path.cumulative) {
            assert_abs_diff_eq!(z, &(x.coords() * *t), epsilon = 1e-9);
        }
    }

    #[test]
    fn cumulative_is_exact_running_sum() {
        let grid = SimulationGrid::new(1e-3, 0.05, 1.0).unwrap();
        let truth = simulate_truth(
            &StateModel::brownian(3, 1.0).unwrap(),
            &grid,
            1.0,
            1,
            &Rotation::identity(3),
            &SkewMatrix::zeros(3),
            &SeedTree::new(3),
        )
        .unwrap();
        let stream = observe(&truth, 1, 0.05).unwrap();
        let path = antidevelopment(&stream, InterpolationScheme::Linear).unwrap();
        let mut acc = DVector::zeros(3);
        for (j, inc) in path.increments.iter().enumerate() {
            assert_eq!(path.cumulative[j], acc);
            acc += inc.coords();
        }
        let reference = AntidevelopmentPath::from_reference(&truth, 0.1).unwrap();
        assert_eq!(reference.len(), 11);
        assert_abs_diff_eq!(reference.cumulative[10], truth.z_ref[20], epsilon = 1e-12);
    }

    #[test]
    fn full_frame_lift_reproduces_stream() {
        let grid = SimulationGrid::new(1e-3, 0.05, 2.0).unwrap();
        let truth = simulate_truth(
            &StateModel::constant(3),
            &grid,
            1.0,
            3,
            &Rotation::identity(3),
            &SkewMatrix::from_coords(3, &[1.0, 0.5, -0.2]).unwrap(),
            &SeedTree::new(9),
        )
        .unwrap();
        let stream = observe(&truth, 3, 0.05).unwrap();
        let lift = horizontal_lift(&stream, InterpolationScheme::Geodesic, &Rotation::identity(3)).unwrap();
        for (r, p) in lift.iter().zip(&stream.points) {
            assert_abs_diff_eq!(r.matrix(), p.matrix(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_increments_give_constant_lift() {
        let p = StiefelPoint::new(DMatrix::identity(3, 3).columns(0, 2).into_owned()).unwrap();
        let stream = ObservationStream {
            n: 3,
            k: 2,
            delta_t: 1.0,
            times: vec![0.0, 1.0, 2.0],
            points: vec![p.clone(), p.clone(), p],
        };
        let lift = horizontal_lift(&stream, InterpolationScheme::Linear, &Rotation::identity(3)).unwrap();
        assert!(lift.iter().all(|r| *r == Rotation::identity(3)));
        let twisted = exp_so(&SkewMatrix::from_coords(3, &[0.1, 0.0, 0.0]).unwrap());
        assert!(matches!(
            horizontal_lift(&stream, InterpolationScheme::Linear, &twisted),
            Err(Error::InconsistentFrame(_))
        ));
    }

    #[test]
    fn sphere_lift_defect_is_higher_order() {
        // velocity with both horizontal and vertical parts at e1
        let x = SkewMatrix::from_coords(3, &[0.8, -0.5, 0.9]).unwrap();
        let defect = |dt: f64| {
            let (_, stream) = noiseless(&x, 1, dt, 1.0);
            stream
                .points
                .windows(2)
                .map(|w| lift_defect(&w[0], &w[1], InterpolationScheme::Linear).unwrap())
                .fold(0.0, f64::max)
        };
        let coarse = defect(0.1);
        let fine = defect(0.05);
        assert!(coarse < 0.1 * 0.1, "{coarse}");
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
    }

    #[test]
    fn reference_increment_is_horizontal_for_partial_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_stiefel(4, 2, &mut rng);
        let s = random_skew(4, 1.0, &mut rng);
        let h = horizontal_part(&s, &p).unwrap();
        assert_abs_diff_eq!(
            chi(&h, &p).unwrap().matrix(),
            chi(&s, &p).unwrap().matrix(),
            epsilon = 1e-12
        );
    }
}
