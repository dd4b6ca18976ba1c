//! Polarization algebra: Jones fields, Stokes vectors on the Poincaré sphere,
//! rotations of the sphere and their SU(2) counterparts, and the tangent-plane
//! geometry used to attach small perturbations to a base SOP.
//!
//! Sign convention: `S = (|ex|²−|ey|², 2Re(ex·ey*), −2Im(ex·ey*)) / P`, so
//! `S3 > 0` is right-circular. The matching Pauli set is
//! `σ1 = diag(1, −1)`, `σ2 = [[0, 1], [1, 0]]`, `σ3 = [[0, −i], [i, 0]]`,
//! which is right-handed (`σ1σ2 = iσ3`), so `exp(−iθ n·σ/2)` acting on a Jones
//! vector rotates its Stokes vector by `+θ` about `n`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type JonesMatrix = Matrix2<Complex64>;

/// Tolerance used when a caller claims a vector is on the unit sphere.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A Stokes vector, normally a point on the unit Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct StokesVector(Vec3);

impl StokesVector {
    pub const HORIZONTAL: StokesVector = StokesVector::new(1.0, 0.0, 0.0);
    pub const VERTICAL: StokesVector = StokesVector::new(-1.0, 0.0, 0.0);
    pub const DIAGONAL: StokesVector = StokesVector::new(0.0, 1.0, 0.0);
    pub const ANTIDIAGONAL: StokesVector = StokesVector::new(0.0, -1.0, 0.0);
    pub const RIGHT_CIRCULAR: StokesVector = StokesVector::new(0.0, 0.0, 1.0);
    pub const LEFT_CIRCULAR: StokesVector = StokesVector::new(0.0, 0.0, -1.0);

    /// Raw constructor; does not normalize.
    pub const fn new(s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector(Vector3::new(s1, s2, s3))
    }

    pub fn from_vector(v: Vec3) -> Self {
        StokesVector(v)
    }

    /// Projects a nonzero vector onto the sphere.
    pub fn normalized(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NotNormalized { norm: n });
        }
        Ok(StokesVector(v / n))
    }

    /// Checks that the vector is already on the sphere.
    pub fn unit(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        let s = StokesVector::new(s1, s2, s3);
        s.ensure_unit()?;
        Ok(s)
    }

    pub fn s1(&self) -> f64 {
        self.0.x
    }

    pub fn s2(&self) -> f64 {
        self.0.y
    }

    pub fn s3(&self) -> f64 {
        self.0.z
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, other: &StokesVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub(crate) fn ensure_unit(&self) -> Result<()> {
        if self.is_unit() {
            Ok(())
        } else {
            Err(Error::NotNormalized { norm: self.norm() })
        }
    }

    /// Great-circle angle to another point on the sphere.
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

impl From<[f64; 3]> for StokesVector {
    fn from(a: [f64; 3]) -> Self {
        StokesVector::new(a[0], a[1], a[2])
    }
}

impl From<StokesVector> for [f64; 3] {
    fn from(s: StokesVector) -> Self {
        [s.0.x, s.0.y, s.0.z]
    }
}

impl Add<Vec3> for StokesVector {
    type Output = StokesVector;
    fn add(self, rhs: Vec3) -> StokesVector {
        StokesVector(self.0 + rhs)
    }
}

impl Sub for StokesVector {
    type Output = Vec3;
    fn sub(self, rhs: StokesVector) -> Vec3 {
        self.0 - rhs.0
    }
}

impl Neg for StokesVector {
    type Output = StokesVector;
    fn neg(self) -> StokesVector {
        StokesVector(-self.0)
    }
}

impl Mul<f64> for StokesVector {
    type Output = StokesVector;
    fn mul(self, rhs: f64) -> StokesVector {
        StokesVector(self.0 * rhs)
    }
}

/// Two-component complex field with the scalar bookkeeping that rides along
/// with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesField {
    pub ex: Complex64,
    pub ey: Complex64,
    /// Angular frequency relative to the optical carrier, rad/s.
    pub carrier_offset: f64,
    /// Polarization-independent phase, rad.
    pub common_phase: f64,
}

impl JonesField {
    pub fn new(ex: Complex64, ey: Complex64) -> Self {
        JonesField {
            ex,
            ey,
            carrier_offset: 0.0,
            common_phase: 0.0,
        }
    }

    pub fn power(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    /// The complex amplitudes with the common phase applied.
    pub fn phased(&self) -> (Complex64, Complex64) {
        let p = Complex64::from_polar(1.0, self.common_phase);
        (self.ex * p, self.ey * p)
    }

    /// Inner product `self† · other` of the bare amplitudes.
    pub fn inner(&self, other: &JonesField) -> Complex64 {
        self.ex.conj() * other.ex + self.ey.conj() * other.ey
    }

    pub fn transformed(&self, u: &JonesMatrix) -> JonesField {
        JonesField {
            ex: u[(0, 0)] * self.ex + u[(0, 1)] * self.ey,
            ey: u[(1, 0)] * self.ex + u[(1, 1)] * self.ey,
            ..*self
        }
    }
}

pub fn jones_to_stokes(j: &JonesField) -> Result<StokesVector> {
    let p = j.power();
    if !(p > 0.0) {
        return Err(Error::DegenerateField);
    }
    let cross = j.ex * j.ey.conj();
    Ok(StokesVector::new(
        (j.ex.norm_sqr() - j.ey.norm_sqr()) / p,
        2.0 * cross.re / p,
        -2.0 * cross.im / p,
    ))
}

/// Unit-power Jones field for a point on the sphere. The global phase is fixed
/// by making `ex` real and non-negative (or `ey`, when `ex` vanishes).
pub fn stokes_to_jones(s: &StokesVector) -> Result<JonesField> {
    s.ensure_unit()?;
    let s = StokesVector::normalized(s.0)?;
    let ax = ((1.0 + s.s1()) / 2.0).max(0.0).sqrt();
    let ay = ((1.0 - s.s1()) / 2.0).max(0.0).sqrt();
    if ax == 0.0 {
        return Ok(JonesField::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)));
    }
    let delta = s.s3().atan2(s.s2());
    Ok(JonesField::new(
        Complex64::new(ax, 0.0),
        Complex64::from_polar(ay, delta),
    ))
}

fn pauli() -> [JonesMatrix; 3] {
    let o = Complex64::new(0.0, 0.0);
    let r = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        Matrix2::new(r, o, o, -r),
        Matrix2::new(o, r, r, o),
        Matrix2::new(o, -i, i, o),
    ]
}

/// A proper rotation of the Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Accepts a matrix only if it is orthogonal with determinant +1 (to 1e-9).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "matrix is not a rotation (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(Rotation3(m))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Rotation3(q.to_rotation_matrix().into_inner())
    }

    /// Rotation for the SU(2) element `w·I − i(x σ1 + y σ2 + z σ3)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Rotation3(q.to_rotation_matrix().into_inner())
    }

    /// Sphere rotation induced by a 2×2 unitary, `R_kj = ½ Re Tr(σ_j U† σ_k U)`.
    pub fn from_unitary(u: &JonesMatrix) -> Self {
        let s = pauli();
        let ud = u.adjoint();
        let m = Matrix3::from_fn(|k, j| 0.5 * (s[j] * ud * s[k] * u).trace().re);
        Rotation3(m)
    }

    /// The SU(2) matrix (up to the irrelevant overall sign) realizing this rotation.
    pub fn to_unitary(&self) -> JonesMatrix {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        let c = Complex64::new;
        Matrix2::new(c(w, -x), c(-z, -y), c(z, -y), c(w, x))
    }

    /// A half-turn about an axis perpendicular to `s`, mapping `s` to `−s`.
    pub fn antipodal(s: &StokesVector) -> Self {
        let (e1, _) = tangent_basis(s);
        Rotation3::from_axis_angle(&e1, std::f64::consts::PI)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        StokesVector(self.0 * s.0)
    }

    pub fn apply_vec(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn then(&self, next: &Rotation3) -> Rotation3 {
        Rotation3(next.0 * self.0)
    }

    pub fn inverse(&self) -> Rotation3 {
        Rotation3(self.0.transpose())
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }
}

/// Haar-uniform rotation from a uniformly distributed unit quaternion.
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if w * w + x * x + y * y + z * z > 1e-12 {
            return Rotation3::from_quaternion(w, x, y, z);
        }
    }
}

/// Linear retarder with retardance `delta` and fast axis at `axis_angle`
/// (both radians, angle measured in the lab x–y frame).
pub fn retarder(delta: f64, axis_angle: f64) -> JonesMatrix {
    let (s, c) = axis_angle.sin_cos();
    let rot = |sgn: f64| {
        Matrix2::new(
            Complex64::new(c, 0.0),
            Complex64::new(sgn * s, 0.0),
            Complex64::new(-sgn * s, 0.0),
            Complex64::new(c, 0.0),
        )
    };
    let phase = Matrix2::new(
        Complex64::from_polar(1.0, -delta / 2.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::from_polar(1.0, delta / 2.0),
    );
    rot(-1.0) * phase * rot(1.0)
}

/// Optical rotator (circular birefringence) turning the polarization ellipse by `angle`.
pub fn rotator(angle: f64) -> JonesMatrix {
    let (s, c) = angle.sin_cos();
    Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(c, 0.0),
    )
}

/// Orthonormal pair spanning the tangent plane at `s0`.
///
/// Built from the coordinate axis least aligned with `s0` (lowest index on
/// ties), so the basis is a deterministic function of `s0`.
pub fn tangent_basis(s0: &StokesVector) -> (Vec3, Vec3) {
    let v = s0.vector();
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() < v[k].abs() {
            k = i;
        }
    }
    let mut axis = Vec3::zeros();
    axis[k] = 1.0;
    let n = v.normalize();
    let e1 = (axis - n * axis.dot(&n)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Exponential map: moves `s0` along the great circle in the direction of
/// `sigma` by the angle `|sigma|`.
pub fn retract(s0: &StokesVector, sigma: &Vec3) -> Result<StokesVector> {
    let dot = s0.vector().dot(sigma);
    if dot.abs() > UNIT_TOLERANCE {
        return Err(Error::NotTangent { dot });
    }
    let theta = sigma.norm();
    if theta == 0.0 {
        return Ok(*s0);
    }
    let (sin, cos) = theta.sin_cos();
    Ok(StokesVector(s0.vector() * cos + sigma * (sin / theta)))
}

/// Sampled SOP trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SopTimeSeries {
    samples: Vec<StokesVector>,
    sample_rate: f64,
}

impl SopTimeSeries {
    pub fn new(samples: Vec<StokesVector>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_unit()) {
            return Err(Error::NotNormalized { norm: bad.norm() });
        }
        Ok(SopTimeSeries {
            samples,
            sample_rate,
        })
    }

    pub fn constant(s: StokesVector, n: usize, sample_rate: f64) -> Result<Self> {
        SopTimeSeries::new(vec![s; n], sample_rate)
    }

    pub fn samples(&self) -> &[StokesVector] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Angular speed (rad/s) between consecutive samples.
pub fn sop_speed(series: &SopTimeSeries) -> Vec<f64> {
    series
        .samples
        .windows(2)
        .map(|w| w[0].angle_to(&w[1]) * series.sample_rate)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &StokesVector, b: &StokesVector, tol: f64) -> bool {
        (*a - *b).norm() <= tol
    }

    #[test]
    fn basis_states() {
        let h = jones_to_stokes(&JonesField::new(c(1.0, 0.0), c(0.0, 0.0))).unwrap();
        let d = jones_to_stokes(&JonesField::new(c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0))).unwrap();
        let r = jones_to_stokes(&JonesField::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2))).unwrap();
        assert!(close(&h, &StokesVector::HORIZONTAL, 1e-15));
        assert!(close(&d, &StokesVector::DIAGONAL, 1e-15));
        assert!(close(&r, &StokesVector::RIGHT_CIRCULAR, 1e-15));
    }

    #[test]
    fn zero_field_is_degenerate() {
        let z = JonesField::new(c(0.0, 0.0), c(0.0, 0.0));
        assert!(matches!(jones_to_stokes(&z), Err(Error::DegenerateField)));
    }

    #[test]
    fn phase_convention() {
        let j = stokes_to_jones(&StokesVector::HORIZONTAL).unwrap();
        assert_eq!((j.ex, j.ey), (c(1.0, 0.0), c(0.0, 0.0)));
        let j = stokes_to_jones(&StokesVector::VERTICAL).unwrap();
        assert_eq!((j.ex, j.ey), (c(0.0, 0.0), c(1.0, 0.0)));
        assert!(matches!(
            stokes_to_jones(&StokesVector::new(0.5, 0.0, 0.0)),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn tangent_basis_pole() {
        let (e1, e2) = tangent_basis(&StokesVector::RIGHT_CIRCULAR);
        assert_eq!(e1, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(e2, Vec3::new(0.0, 1.0, 0.0));
        let (e1, e2) = tangent_basis(&StokesVector::HORIZONTAL);
        assert!(e1.x.abs() < 1e-15 && e2.x.abs() < 1e-15);
    }

    #[test]
    fn retract_quarter_arc() {
        let s = retract(&StokesVector::RIGHT_CIRCULAR, &Vec3::new(FRAC_PI_2, 0.0, 0.0)).unwrap();
        assert!(close(&s, &StokesVector::HORIZONTAL, 1e-12));
        let s0 = StokesVector::DIAGONAL;
        assert_eq!(retract(&s0, &Vec3::zeros()).unwrap(), s0);
        assert!(matches!(
            retract(&s0, &Vec3::new(0.0, 0.1, 0.0)),
            Err(Error::NotTangent { .. })
        ));
    }

    #[test]
    fn speed_of_constructed_rotation() {
        let fs = 100e6;
        let axis = Vec3::new(0.0, 0.0, 1.0);
        let samples = (0..100)
            .map(|k| Rotation3::from_axis_angle(&axis, 0.01 * k as f64).apply(&StokesVector::HORIZONTAL))
            .collect();
        let series = SopTimeSeries::new(samples, fs).unwrap();
        for v in sop_speed(&series) {
            assert!((v - 1e6).abs() < 1e-3, "{v}");
        }
        let still = SopTimeSeries::constant(StokesVector::DIAGONAL, 10, fs).unwrap();
        assert!(sop_speed(&still).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn antipodal_maps_to_opposite() {
        let s = StokesVector::normalized(Vec3::new(0.3, -0.5, 0.8)).unwrap();
        let r = Rotation3::antipodal(&s);
        assert!(close(&r.apply(&s), &-s, 1e-12));
    }

    #[test]
    fn non_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(Rotation3::from_matrix(m).is_err());
    }
}
