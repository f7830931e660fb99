//! Linear-algebraic primitives for SO(n), its Lie algebra so(n), and the
//! Stiefel manifold V(n,k) of orthonormal k-frames.
//!
//! Coordinates on so(n) use the basis `E_ij = e_i e_j^T - e_j e_i^T` with
//! `i < j` in lexicographic order, which is orthonormal for the trace inner
//! product `<a, b> = tr(a^T b) / 2`. The coordinate of `E_ij` in a skew
//! matrix `A` is therefore simply `A[(i, j)]`.
//!
//! The Stiefel tangent space at `P` is `{ sigma P : sigma in so(n) }`. The map
//! `chi(sigma, P) = sigma P` is onto but not injective; its kernel is the
//! vertical space `{ sigma : sigma P = 0 }`. [`omega`] returns the unique
//! preimage orthogonal to the vertical space, in closed form and without
//! reference to a completion of `P` to a rotation.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Orthogonality tolerance applied when a rotation or frame is constructed.
pub const CONSTRUCTION_TOL: f64 = 1e-9;
/// Tolerance for user-supplied tangents and initial frames.
pub const INPUT_TOL: f64 = 1e-6;
/// Principal-logarithm inputs with an angle closer than this to pi are rejected.
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

/// Dimension of so(n), `n (n - 1) / 2`.
pub fn skew_dim(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Recover `n` from `d = n (n - 1) / 2`.
pub fn group_dim(d: usize) -> Option<usize> {
    (1..=2 * d + 2).find(|&n| skew_dim(n) == d)
}

/// Element of so(n).
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    /// Antisymmetrizes a square matrix: `(m - m^T) / 2`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "skew matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::antisymmetrize(m))
    }

    pub(crate) fn antisymmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SkewMatrix((m - t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SkewMatrix(DMatrix::zeros(n, n))
    }

    /// Builds `sum_b c_b E_b` from coordinates in the canonical basis.
    pub fn from_coords(n: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != skew_dim(n) {
            return Err(Error::DimensionMismatch(format!(
                "so({n}) has {} coordinates, got {}",
                skew_dim(n),
                coords.len()
            )));
        }
        let mut m = DMatrix::zeros(n, n);
        let mut c = coords.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = *c.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        Ok(SkewMatrix(m))
    }

    /// Coordinates in the canonical basis (the "vee" map).
    pub fn coords(&self) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(skew_dim(n));
        let mut b = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                out[b] = self.0[(i, j)];
                b += 1;
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Norm induced by [`inner_so`].
    pub fn norm(&self) -> f64 {
        (0.5 * self.0.dot(&self.0)).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        SkewMatrix(&self.0 * s)
    }
}

impl Add for &SkewMatrix {
    type Output = SkewMatrix;
    fn add(self, rhs: &SkewMatrix) -> SkewMatrix {
        SkewMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SkewMatrix {
    type Output = SkewMatrix;
    fn sub(self, rhs: &SkewMatrix) -> SkewMatrix {
        SkewMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &SkewMatrix {
    type Output = SkewMatrix;
    fn neg(self) -> SkewMatrix {
        SkewMatrix(-&self.0)
    }
}

impl Mul<f64> for &SkewMatrix {
    type Output = SkewMatrix;
    fn mul(self, rhs: f64) -> SkewMatrix {
        self.scale(rhs)
    }
}

/// Element of SO(n).
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation(DMatrix<f64>);

impl Rotation {
    /// Checks `|R^T R - I|_F <= 1e-9` and `det R > 0`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotRotation(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = orthonormality_residual(&m);
        if residual > CONSTRUCTION_TOL {
            return Err(Error::NotRotation(format!(
                "orthogonality residual {residual:.3e}"
            )));
        }
        let det = m.determinant();
        if det <= 0.0 {
            return Err(Error::NotRotation(format!("determinant {det}")));
        }
        Ok(Rotation(m))
    }

    pub fn identity(n: usize) -> Self {
        Rotation(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self * other`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(&self.0 * &other.0)
    }

    /// `|R^T R - I|_F`.
    pub fn orthogonality_error(&self) -> f64 {
        orthonormality_residual(&self.0)
    }
}

/// Point of V(n,k): an n-by-k matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (n, k) = m.shape();
        if k == 0 || k > n {
            return Err(Error::InvalidDimension(format!(
                "Stiefel point needs 1 <= k <= n, got {n}x{k}"
            )));
        }
        let residual = orthonormality_residual(&m);
        if residual > CONSTRUCTION_TOL {
            return Err(Error::NotStiefel(residual));
        }
        Ok(StiefelPoint(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Tangent vector to V(n,k) at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelTangent {
    base: StiefelPoint,
    v: DMatrix<f64>,
}

impl StiefelTangent {
    /// Rejects `v` when `|P^T v + v^T P|_F` exceeds [`INPUT_TOL`].
    pub fn new(base: StiefelPoint, v: DMatrix<f64>) -> Result<Self> {
        if v.shape() != base.0.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tangent is {}x{} but base is {}x{}",
                v.nrows(),
                v.ncols(),
                base.n(),
                base.k()
            )));
        }
        let residual = tangency_residual(&base.0, &v);
        if residual > INPUT_TOL {
            return Err(Error::InvalidTangent(residual));
        }
        Ok(StiefelTangent { base, v })
    }

    pub fn zero(base: StiefelPoint) -> Self {
        let v = DMatrix::zeros(base.n(), base.k());
        StiefelTangent { base, v }
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }
}

fn orthonormality_residual(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    (m.transpose() * m - DMatrix::<f64>::identity(k, k)).norm()
}

fn tangency_residual(p: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let a = p.transpose() * v;
    (&a + a.transpose()).norm()
}

fn check_same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Canonical orthonormal basis of so(n), ordered lexicographically by `(i, j)`.
pub fn skew_basis(n: usize) -> Result<Vec<SkewMatrix>> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "so(n) basis needs n >= 2, got {n}"
        )));
    }
    let d = skew_dim(n);
    Ok((0..d)
        .map(|b| {
            let mut c = vec![0.0; d];
            c[b] = 1.0;
            SkewMatrix::from_coords(n, &c).unwrap()
        })
        .collect())
}

/// `tr(a^T b) / 2`.
pub fn inner_so(a: &SkewMatrix, b: &SkewMatrix) -> Result<f64> {
    check_same_dim(a.dim(), b.dim(), "inner_so")?;
    Ok(0.5 * a.0.dot(&b.0))
}

/// Matrix exponential of a skew matrix.
///
/// n = 2 and n = 3 use closed forms. Larger n evaluate
/// `I + s(A^2) A + c(A^2) A^2` with `s(-t^2) = sin t / t` and
/// `c(-t^2) = (1 - cos t) / t^2` applied through the eigendecomposition of the
/// symmetric matrix `A^2`. Both functions are entire, so clustered rotation
/// angles cause no trouble.
pub fn exp_so(a: &SkewMatrix) -> Rotation {
    let n = a.dim();
    let m = &a.0;
    match n {
        1 => Rotation::identity(1),
        2 => {
            let t = m[(0, 1)];
            let (s, c) = t.sin_cos();
            Rotation(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]))
        }
        3 => {
            let theta = a.norm();
            let (s, c) = rodrigues_coefficients(theta * theta);
            let m2 = m * m;
            Rotation(DMatrix::identity(3, 3) + m * s + m2 * c)
        }
        _ => {
            let m2 = m * m;
            let eig = SymmetricEigen::new(m2.clone());
            let q = &eig.eigenvectors;
            let (sv, cv): (Vec<f64>, Vec<f64>) = eig
                .eigenvalues
                .iter()
                .map(|&mu| rodrigues_coefficients((-mu).max(0.0)))
                .unzip();
            let fs = q * DMatrix::from_diagonal(&DVector::from_vec(sv)) * q.transpose();
            let fc = q * DMatrix::from_diagonal(&DVector::from_vec(cv)) * q.transpose();
            let mut r = DMatrix::identity(n, n) + &fs * m + &fc * &m2;
            // fs and fc commute with A only up to rounding; average with the
            // transposed ordering to keep the result orthogonal to ~eps.
            let r_alt = DMatrix::identity(n, n) + m * &fs + &m2 * &fc;
            r = (r + r_alt) * 0.5;
            Rotation(r)
        }
    }
}

/// `(sin t / t, (1 - cos t) / t^2)` as functions of `t^2`.
fn rodrigues_coefficients(theta_sq: f64) -> (f64, f64) {
    if theta_sq < 1e-8 {
        let t2 = theta_sq;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        let t = theta_sq.sqrt();
        (t.sin() / t, (1.0 - t.cos()) / theta_sq)
    }
}

/// Principal logarithm.
///
/// Writes `R = C + S` with `C` the symmetric and `S` the skew part. Both are
/// functions of `R` and commute, and `log R = f(C) S` with
/// `f(cos t) = t / sin t`. Rotations whose largest angle is within
/// [`LOG_BRANCH_MARGIN`] of pi are rejected.
pub fn log_so(r: &Rotation) -> Result<SkewMatrix> {
    let n = r.dim();
    let m = &r.0;
    let limit = std::f64::consts::PI - LOG_BRANCH_MARGIN;
    match n {
        1 => Ok(SkewMatrix::zeros(1)),
        2 => {
            let t = m[(0, 1)].atan2(m[(0, 0)]);
            if t.abs() >= limit {
                return Err(Error::BranchAmbiguity {
                    angle: t.abs(),
                    margin: LOG_BRANCH_MARGIN,
                });
            }
            SkewMatrix::from_coords(2, &[t])
        }
        3 => {
            let skew = SkewMatrix::antisymmetrize(m.clone());
            let s = skew.norm();
            let c = 0.5 * (m.trace() - 1.0);
            let theta = s.atan2(c);
            if theta >= limit {
                return Err(Error::BranchAmbiguity {
                    angle: theta,
                    margin: LOG_BRANCH_MARGIN,
                });
            }
            let f = if theta < 1e-4 {
                1.0 + theta * theta / 6.0
            } else {
                theta / s
            };
            Ok(skew.scale(f))
        }
        _ => {
            let sym = (m + m.transpose()) * 0.5;
            let skew = (m - m.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let lowest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let worst = lowest.clamp(-1.0, 1.0).acos();
            if worst >= limit {
                return Err(Error::BranchAmbiguity {
                    angle: worst,
                    margin: LOG_BRANCH_MARGIN,
                });
            }
            let fv: Vec<f64> = eig
                .eigenvalues
                .iter()
                .map(|&lam| angle_over_sine(lam.clamp(-1.0, 1.0)))
                .collect();
            let q = &eig.eigenvectors;
            let f = q * DMatrix::from_diagonal(&DVector::from_vec(fv)) * q.transpose();
            Ok(SkewMatrix::antisymmetrize(f * skew))
        }
    }
}

/// `t / sin t` evaluated at `cos t`.
fn angle_over_sine(c: f64) -> f64 {
    let one_minus = 1.0 - c;
    if one_minus < 1e-8 {
        // t^2 ~ 2 (1 - c)
        1.0 + one_minus / 3.0
    } else {
        let t = c.acos();
        t / (one_minus * (1.0 + c)).sqrt()
    }
}

/// First `k` columns of `R`.
pub fn project(r: &Rotation, k: usize) -> Result<StiefelPoint> {
    let n = r.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidDimension(format!(
            "projection needs 1 <= k <= {n}, got {k}"
        )));
    }
    Ok(StiefelPoint(r.0.columns(0, k).into_owned()))
}

/// A rotation whose first `k` columns are `P`.
///
/// The complement is built by greedy Gram-Schmidt over the standard basis,
/// taking at each step the basis vector with the largest residual. If the
/// completed frame has negative determinant the last column is negated; for
/// `k = n` that column belongs to `P`, which is the sign convention for frames
/// in the other component of O(n).
pub fn complete_preimage(p: &StiefelPoint) -> Rotation {
    let (n, k) = p.0.shape();
    let mut cols: Vec<DVector<f64>> = (0..k).map(|j| p.0.column(j).into_owned()).collect();
    while cols.len() < n {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&e);
                    e -= c * proj;
                }
            }
            let norm = e.norm();
            if best.as_ref().map_or(true, |(b, _)| norm > *b) {
                best = Some((norm, e / norm));
            }
        }
        cols.push(best.unwrap().1);
    }
    let mut m = DMatrix::from_columns(&cols);
    if m.determinant() < 0.0 {
        let mut last = m.column_mut(n - 1);
        last *= -1.0;
    }
    Rotation(m)
}

/// `sigma P`.
pub fn chi(sigma: &SkewMatrix, p: &StiefelPoint) -> Result<StiefelTangent> {
    check_same_dim(sigma.dim(), p.n(), "chi")?;
    Ok(StiefelTangent {
        base: p.clone(),
        v: &sigma.0 * &p.0,
    })
}

/// Horizontal lift of a tangent vector into so(n):
/// `v P^T - P v^T - P (P^T v) P^T`.
pub fn omega(v: &StiefelTangent) -> SkewMatrix {
    SkewMatrix::antisymmetrize(omega_matrix(&v.v, &v.base.0))
}

pub(crate) fn omega_matrix(v: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pt = p.transpose();
    let a = &pt * v;
    v * &pt - p * v.transpose() - p * a * pt
}

/// Component of `sigma` that moves `P`, i.e. `omega(chi(sigma, P))`.
pub fn horizontal_part(sigma: &SkewMatrix, p: &StiefelPoint) -> Result<SkewMatrix> {
    check_same_dim(sigma.dim(), p.n(), "horizontal_part")?;
    let v = &sigma.0 * &p.0;
    Ok(SkewMatrix::antisymmetrize(omega_matrix(&v, &p.0)))
}

/// Metric on V(n,k) pulled back from so(n) through [`omega`].
pub fn metric_stiefel(v1: &StiefelTangent, v2: &StiefelTangent) -> Result<f64> {
    if (&v1.base.0 - &v2.base.0).norm() > CONSTRUCTION_TOL {
        return Err(Error::BaseMismatch);
    }
    inner_so(&omega(v1), &omega(v2))
}

/// Orthogonal projector onto the horizontal subspace at `P`, expressed in
/// so(n) coordinates (a d-by-d symmetric idempotent matrix).
pub fn horizontal_projector(p: &StiefelPoint) -> DMatrix<f64> {
    let n = p.n();
    let d = skew_dim(n);
    let mut out = DMatrix::zeros(d, d);
    if n < 2 {
        return out;
    }
    for (b, e) in skew_basis(n).unwrap().iter().enumerate() {
        let h = horizontal_part(e, p).unwrap().coords();
        out.set_column(b, &h);
    }
    out
}

/// Haar-distributed rotation: QR of a Gaussian matrix with the sign of R's
/// diagonal absorbed into Q, then the last column flipped if needed.
pub fn haar_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Rotation {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..n {
        if rr[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c *= -1.0;
        }
    }
    if q.determinant() < 0.0 {
        let mut c = q.column_mut(n - 1);
        c *= -1.0;
    }
    Rotation(q)
}

/// Skew matrix with i.i.d. normal(0, scale^2) coordinates.
pub fn random_skew<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> SkewMatrix {
    let c: Vec<f64> = (0..skew_dim(n))
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SkewMatrix::from_coords(n, &c).unwrap()
}

/// Uniformly random point of V(n,k).
pub fn random_stiefel<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> StiefelPoint {
    StiefelPoint(haar_rotation(n, rng).0.columns(0, k).into_owned())
}

/// Random tangent vector `sigma P` for a Gaussian `sigma`.
pub fn random_tangent<R: Rng + ?Sized>(p: &StiefelPoint, scale: f64, rng: &mut R) -> StiefelTangent {
    chi(&random_skew(p.n(), scale, rng), p).unwrap()
}
