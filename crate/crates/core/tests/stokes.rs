use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::Matrix3;
use num_complex::Complex64;
use proptest::prelude::*;
use psi_core::rng::seeded;
use psi_core::stokes::{
    haar_rotation, jones_to_stokes, retarder, retract, rotator, sop_speed, stokes_to_jones, tangent_basis,
    JonesField, JonesMatrix, Rotation3, SopTimeSeries, StokesVector, Vec3,
};

fn field(a: f64, b: f64, c: f64, d: f64) -> JonesField {
    let n = (a * a + b * b + c * c + d * d).sqrt();
    JonesField::new(Complex64::new(a / n, b / n), Complex64::new(c / n, d / n))
}

fn unit_field() -> impl Strategy<Value = JonesField> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
        .prop_map(|(a, b, c, d)| field(a, b, c, d))
}

fn unit_stokes() -> impl Strategy<Value = StokesVector> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(a, b, c)| a * a + b * b + c * c > 1e-3)
        .prop_map(|(a, b, c)| StokesVector::normalized(Vec3::new(a, b, c)).unwrap())
}

/// Sphere map of a unitary, read off from the images of three basis states.
fn induced_rotation(u: &JonesMatrix) -> Matrix3<f64> {
    let basis = [StokesVector::HORIZONTAL, StokesVector::DIAGONAL, StokesVector::RIGHT_CIRCULAR];
    let mut m = Matrix3::zeros();
    for (j, s) in basis.iter().enumerate() {
        let img = jones_to_stokes(&stokes_to_jones(s).unwrap().transformed(u)).unwrap();
        m.set_column(j, img.vector());
    }
    m
}

fn waveplates() -> Vec<(&'static str, JonesMatrix)> {
    vec![
        ("half-wave at 0", retarder(PI, 0.0)),
        ("half-wave at 22.5 deg", retarder(PI, PI / 8.0)),
        ("half-wave at 45 deg", retarder(PI, FRAC_PI_4)),
        ("quarter-wave at 0", retarder(FRAC_PI_2, 0.0)),
        ("quarter-wave at 45 deg", retarder(FRAC_PI_2, FRAC_PI_4)),
        ("quarter-wave at 30 deg", retarder(FRAC_PI_2, PI / 6.0)),
        ("eighth-wave at 10 deg", retarder(FRAC_PI_4, 10f64.to_radians())),
        ("0.3 rad retarder at 70 deg", retarder(0.3, 70f64.to_radians())),
        ("rotator 30 deg", rotator(PI / 6.0)),
        ("rotator 90 deg", rotator(FRAC_PI_2)),
    ]
}

#[test]
fn basis_states() {
    let r = 0.5f64.sqrt();
    let c = Complex64::new;
    let cases = [
        (JonesField::new(c(1.0, 0.0), c(0.0, 0.0)), StokesVector::HORIZONTAL),
        (JonesField::new(c(r, 0.0), c(r, 0.0)), StokesVector::DIAGONAL),
        (JonesField::new(c(r, 0.0), c(0.0, r)), StokesVector::RIGHT_CIRCULAR),
    ];
    for (j, s) in cases {
        assert!((jones_to_stokes(&j).unwrap() - s).norm() < 1e-12);
    }
    let v = stokes_to_jones(&StokesVector::VERTICAL).unwrap();
    assert_eq!((v.ex, v.ey), (c(0.0, 0.0), c(1.0, 0.0)));
}

#[test]
fn interference_identity_over_1000_pairs() {
    use rand::Rng;
    let mut rng = seeded(11);
    for _ in 0..1000 {
        let mut f = || field(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (a, b) = (f(), f());
        let lhs = a.inner(&b).norm_sqr();
        let sa = jones_to_stokes(&a).unwrap();
        let sb = jones_to_stokes(&b).unwrap();
        assert!((lhs - (1.0 + sa.dot(&sb)) / 2.0).abs() <= 1e-12);
    }
}

#[test]
fn waveplate_equivariance() {
    let mut rng = seeded(12);
    for (name, u) in waveplates() {
        let expected = induced_rotation(&u);
        let r = Rotation3::from_unitary(&u);
        assert!((r.matrix() - expected).abs().max() <= 1e-9, "{name}");
        assert!(r.orthogonality_error() <= 1e-9 && (r.determinant() - 1.0).abs() <= 1e-9, "{name}");
        for _ in 0..50 {
            let s = StokesVector::normalized(haar_rotation(&mut rng).apply_vec(&Vec3::x())).unwrap();
            let j = stokes_to_jones(&s).unwrap();
            let img = jones_to_stokes(&j.transformed(&u)).unwrap();
            assert!((img - r.apply(&s)).norm() <= 1e-9, "{name}");
        }
    }
}

#[test]
fn half_wave_at_zero_flips_diagonal_and_circular() {
    let r = Rotation3::from_unitary(&retarder(PI, 0.0));
    assert!((r.apply(&StokesVector::HORIZONTAL) - StokesVector::HORIZONTAL).norm() < 1e-12);
    assert!((r.apply(&StokesVector::DIAGONAL) - StokesVector::ANTIDIAGONAL).norm() < 1e-12);
    assert!((r.apply(&StokesVector::RIGHT_CIRCULAR) - StokesVector::LEFT_CIRCULAR).norm() < 1e-12);
}

#[test]
fn to_unitary_round_trips() {
    let mut rng = seeded(13);
    for _ in 0..100 {
        let r = haar_rotation(&mut rng);
        let back = Rotation3::from_unitary(&r.to_unitary());
        assert!((back.matrix() - r.matrix()).abs().max() < 1e-12);
    }
}

#[test]
fn haar_moments() {
    let n = 1_000_000;
    let mut rng = seeded(14);
    let mut mean = Vec3::zeros();
    let mut second = Matrix3::zeros();
    for _ in 0..n {
        let r = haar_rotation(&mut rng);
        let v = r.apply_vec(&Vec3::x());
        mean += v;
        second += v * v.transpose();
    }
    mean /= n as f64;
    second /= n as f64;
    let limit = 3.0 / (n as f64).sqrt();
    assert!(mean.iter().all(|m| m.abs() <= limit), "{mean}");
    assert!((second - Matrix3::identity() / 3.0).abs().max() <= 0.01, "{second}");
}

#[test]
fn tangent_basis_pole_case() {
    let (e1, e2) = tangent_basis(&StokesVector::RIGHT_CIRCULAR);
    assert!((e1 - Vec3::x()).norm() < 1e-15);
    assert!((e2 - Vec3::y()).norm() < 1e-15);
    let (e1, e2) = tangent_basis(&StokesVector::HORIZONTAL);
    assert!(e1.x.abs() < 1e-15 && e2.x.abs() < 1e-15);
}

#[test]
fn quarter_arc_retraction() {
    let s = retract(&StokesVector::RIGHT_CIRCULAR, &Vec3::new(FRAC_PI_2, 0.0, 0.0)).unwrap();
    assert!((s - StokesVector::HORIZONTAL).norm() <= 1e-12);
    assert!(retract(&StokesVector::RIGHT_CIRCULAR, &Vec3::new(0.0, 0.0, 0.1)).is_err());
}

#[test]
fn sop_speed_of_constructed_rotation() {
    let fs = 100e6;
    let axis = Vec3::z();
    let samples: Vec<StokesVector> = (0..100)
        .map(|k| Rotation3::from_axis_angle(&axis, 0.01 * k as f64).apply(&StokesVector::HORIZONTAL))
        .collect();
    let speed = sop_speed(&SopTimeSeries::new(samples, fs).unwrap());
    assert!(speed.iter().all(|v| (v - 1e6).abs() < 1e-3));
    let still = SopTimeSeries::constant(StokesVector::DIAGONAL, 10, fs).unwrap();
    assert!(sop_speed(&still).iter().all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn interference_identity(a in unit_field(), b in unit_field()) {
        let sa = jones_to_stokes(&a).unwrap();
        let sb = jones_to_stokes(&b).unwrap();
        prop_assert!((a.inner(&b).norm_sqr() - (1.0 + sa.dot(&sb)) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn stokes_jones_round_trip(s in unit_stokes()) {
        let j = stokes_to_jones(&s).unwrap();
        prop_assert!((j.power() - 1.0).abs() < 1e-12);
        prop_assert!((jones_to_stokes(&j).unwrap() - s).norm() <= 1e-9);
        prop_assert!(j.ex.im == 0.0 && j.ex.re >= 0.0);
    }

    #[test]
    fn jones_to_stokes_is_unit_and_phase_blind(f in unit_field(), phase in -PI..PI, scale in 0.1..10.0f64) {
        let s = jones_to_stokes(&f).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        let p = Complex64::from_polar(scale, phase);
        let g = JonesField::new(f.ex * p, f.ey * p);
        prop_assert!((jones_to_stokes(&g).unwrap() - s).norm() < 1e-12);
    }

    #[test]
    fn tangent_basis_is_orthonormal(s in unit_stokes()) {
        let (e1, e2) = tangent_basis(&s);
        let v = s.vector();
        prop_assert!(e1.dot(v).abs() <= 1e-12 && e2.dot(v).abs() <= 1e-12 && e1.dot(&e2).abs() <= 1e-12);
        prop_assert!((e1.norm() - 1.0).abs() <= 1e-12 && (e2.norm() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(tangent_basis(&s), (e1, e2));
    }

    #[test]
    fn retract_stays_on_sphere(s in unit_stokes(), a in -1.0..1.0f64, b in -1.0..1.0f64, len in 0.0..1.0f64) {
        let (e1, e2) = tangent_basis(&s);
        let dir = e1 * a + e2 * b;
        prop_assume!(dir.norm() > 1e-6);
        let sigma = dir.normalize() * len;
        let r = retract(&s, &sigma).unwrap();
        prop_assert!((r.norm() - 1.0).abs() <= 1e-12);
        prop_assert!((s.angle_to(&r) - len).abs() <= 1e-9);
    }

    #[test]
    fn retract_taylor_remainder(s in unit_stokes(), a in -1.0..1.0f64, b in -1.0..1.0f64, len in 0.0..0.1f64) {
        let (e1, e2) = tangent_basis(&s);
        let dir = e1 * a + e2 * b;
        prop_assume!(dir.norm() > 1e-6);
        let sigma = dir.normalize() * len;
        let r = retract(&s, &sigma).unwrap();
        prop_assert!((r.vector() - (s.vector() + sigma)).norm() <= len * len + 1e-15);
    }

    #[test]
    fn haar_draws_are_rotations(seed in any::<u64>()) {
        let r = haar_rotation(&mut seeded(seed));
        prop_assert!(r.orthogonality_error() <= 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-9);
    }
}
