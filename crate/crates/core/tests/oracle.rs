use psi_core::instrument::{draw_scrambler, synthesize_beat, PsiConfig};
use psi_core::nldp::{compose_probe, ou_tangent_process, SopDecomposition, TangentNoiseParams};
use psi_core::oracle::{
    capped_baseline, capped_mean_amplitude, exclusion_sensitivity, first_order_validity, mc_sphere_acf, ArmCoupling,
    OracleOptions,
};
use psi_core::rng::seeded;
use psi_core::spectral::acf;
use psi_core::stokes::{haar_rotation, StokesVector};

const FS: f64 = 100e6;

fn opts(rotations: usize, epsilon: f64) -> OracleOptions {
    OracleOptions {
        rotation_count: rotations,
        epsilon,
        seed: 7,
        ..OracleOptions::default()
    }
}

fn realization(rho: f64, base: StokesVector, o: &OracleOptions, seed: u64) -> SopDecomposition {
    let p = TangentNoiseParams::with_fwhm(rho, 2e6).unwrap();
    let len = o.time_span + o.lags.iter().copied().max().unwrap();
    ou_tangent_process(base, &p, FS, len, seed).unwrap()
}

/// First-order slope of the scaled envelope against `⟨σ(t)·σ(t+τ)⟩`:
/// `E[e'(x)²·|P(R+Rᵀ)S₀|²] / (4·E[(1+x)/2])` over rotations with `1+x ≥ ε`,
/// where `x = S₀·R·S₀`, `e = √((1+x)/2)` and `P` projects onto the tangent plane.
fn first_order_slope(base: StokesVector, epsilon: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let s0 = *base.vector();
    let (mut num, mut den, mut n) = (0.0, 0.0, 0usize);
    while n < draws {
        let r = haar_rotation(&mut rng);
        let m = r.matrix();
        let x = s0.dot(&(m * s0));
        if 1.0 + x < epsilon {
            continue;
        }
        let u = (m + m.transpose()) * s0;
        let pu = u - s0 * s0.dot(&u);
        if 1.0 + x > 1e-12 {
            num += pu.norm_squared() / (8.0 * (1.0 + x));
        }
        den += (1.0 + x) / 2.0;
        n += 1;
    }
    num / (4.0 * den)
}

#[test]
fn first_order_slope_is_one_eighth_without_exclusion() {
    let s = first_order_slope(StokesVector::HORIZONTAL, 0.0, 1_000_000, 1);
    assert!((s - 0.125).abs() < 0.002, "{s}");
}

#[test]
fn envelope_matches_first_order_form_at_default_settings() {
    let o = opts(20_000, 0.1);
    let sigma = realization(0.05, StokesVector::HORIZONTAL, &o, 3);
    let r = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &o).unwrap();
    assert!(r.within_tolerance, "{}", r.max_relative_error);
    assert_eq!(r.sample_count, 20_000);
    assert!(r.mc_stderr.iter().all(|s| *s > 0.0));
    assert!((r.sigma_acf[0] / 0.0025 - 1.0).abs() < 0.3);
    for (k, e) in r.empirical_envelope.iter().enumerate() {
        assert!((e - r.predicted_envelope[k]).abs() / r.predicted_envelope[k] <= r.tolerance[k]);
    }
}

#[test]
fn zero_perturbation_gives_exactly_one_half() {
    let o = opts(5000, 0.1);
    let sigma = SopDecomposition::zero(StokesVector::RIGHT_CIRCULAR, 5000, FS).unwrap();
    let r = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &o).unwrap();
    for (e, p) in r.empirical_envelope.iter().zip(&r.predicted_envelope) {
        assert!((e - 0.5).abs() < 1e-12);
        assert_eq!(*p, 0.5);
    }
}

#[test]
fn unexcluded_coefficients_match_first_order_theory() {
    let o = OracleOptions {
        lags: (0..=160).step_by(8).collect(),
        ..opts(40_000, 0.0)
    };
    let sigma = realization(0.05, StokesVector::DIAGONAL, &o, 4);
    let r = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &o).unwrap();
    assert!((r.raw_baseline - 0.5).abs() < 4.0 * r.baseline_stderr, "{} ± {}", r.raw_baseline, r.baseline_stderr);
    let predicted = first_order_slope(StokesVector::DIAGONAL, 0.0, 400_000, 5);
    assert!((r.effective_slope / predicted - 1.0).abs() < 0.05, "{} vs {predicted}", r.effective_slope);
    assert!((r.effective_slope - 1.0 / 3.0).abs() > 0.1);
}

#[test]
fn slope_falls_as_the_excluded_cap_grows() {
    let o = OracleOptions {
        lags: (0..=160).step_by(8).collect(),
        ..opts(20_000, 0.0)
    };
    let sigma = realization(0.05, StokesVector::HORIZONTAL, &o, 6);
    let eps = [0.0, 0.1, 0.3, 0.5];
    let rows = exclusion_sensitivity(&sigma, &eps, &o).unwrap();
    for (row, e) in rows.iter().zip(eps) {
        assert!((row.raw_baseline - capped_baseline(e)).abs() < 4.0 * row.baseline_stderr, "{row:?}");
        assert!((row.mean_amplitude / capped_mean_amplitude(e) - 1.0).abs() < 0.01, "{row:?}");
        let predicted = first_order_slope(StokesVector::HORIZONTAL, e, 200_000, 8);
        assert!((row.effective_slope / predicted - 1.0).abs() < 0.08, "{row:?} vs {predicted}");
    }
    assert!(rows.windows(2).all(|w| w[1].effective_slope < w[0].effective_slope));
}

#[test]
fn capped_closed_forms_against_quadrature() {
    for e in [0.0, 0.01, 0.1, 0.3, 0.5, 1.5] {
        let n = 200_000;
        let lo = -1.0 + e;
        let h = (1.0 - lo) / n as f64;
        let (mut b, mut a) = (0.0, 0.0);
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            b += (1.0 + x) / 2.0 * h;
            a += (1.0 + x).sqrt() * h;
        }
        let w = 1.0 - lo;
        assert!((capped_baseline(e) - b / w).abs() < 1e-9);
        assert!((capped_mean_amplitude(e) - a / w).abs() < 1e-6);
    }
}

#[test]
fn first_order_error_grows_with_amplitude() {
    let o = opts(10_000, 0.1);
    let rhos = [0.01, 0.025, 0.05, 0.1, 0.2];
    let rows = first_order_validity(StokesVector::HORIZONTAL, &rhos, 2.0 * std::f64::consts::PI * 1e6, FS, &o).unwrap();
    assert_eq!(rows.len(), rhos.len());
    for w in rows[1..].windows(2) {
        assert!(w[1].max_relative_error > w[0].max_relative_error, "{rows:?}");
    }
    let ratio = rows[3].max_relative_error / rows[2].max_relative_error;
    assert!(ratio > 2.0, "{ratio}");
    assert!(first_order_validity(StokesVector::HORIZONTAL, &[0.0], 1e7, FS, &o).is_err());
}

#[test]
fn independent_arm_realizations() {
    let o = opts(10_000, 0.1);
    let a = realization(0.05, StokesVector::HORIZONTAL, &o, 9);
    let b = realization(0.05, StokesVector::HORIZONTAL, &o, 10);
    let r = mc_sphere_acf(&a, ArmCoupling::Independent(&b), &o).unwrap();
    assert!(r.within_tolerance, "{}", r.max_relative_error);
    let other_base = realization(0.05, StokesVector::DIAGONAL, &o, 10);
    assert!(mc_sphere_acf(&a, ArmCoupling::Independent(&other_base), &o).is_err());
}

#[test]
fn options_are_validated() {
    let sigma = SopDecomposition::zero(StokesVector::HORIZONTAL, 5000, FS).unwrap();
    for bad in [
        OracleOptions { epsilon: 2.0, ..opts(100, 0.0) },
        OracleOptions { rotation_count: 1, ..opts(100, 0.0) },
        OracleOptions { lags: vec![], ..opts(100, 0.0) },
        OracleOptions { time_span: 0, ..opts(100, 0.0) },
    ] {
        assert!(mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &bad).is_err());
    }
    let short = SopDecomposition::zero(StokesVector::HORIZONTAL, 100, FS).unwrap();
    assert!(mc_sphere_acf(&short, ArmCoupling::SameProbe, &opts(100, 0.0)).is_err());
}

#[test]
fn beat_trace_acf_envelope_agrees_with_oracle() {
    let o = OracleOptions {
        lags: (0..=64).step_by(4).collect(),
        ..opts(4000, 0.1)
    };
    let sigma = realization(0.05, StokesVector::HORIZONTAL, &o, 11);
    let report = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &o).unwrap();

    let probe = compose_probe(&sigma).unwrap();
    let cfg = PsiConfig::default();
    let g2 = cfg.beat_gain().powi(2);
    let s0 = StokesVector::HORIZONTAL;
    let mut rng = seeded(12);
    let max_lag = 64;
    let mut sum = vec![0.0; max_lag + 1];
    let mut base = 0.0;
    let traces = 4000;
    for _ in 0..traces {
        let (r, _) = draw_scrambler(&s0, 0.1, &mut rng).unwrap();
        let t = synthesize_beat(&probe, &r, &cfg, &mut rng).unwrap();
        let a = acf(&t, max_lag).unwrap();
        for (s, v) in sum.iter_mut().zip(&a.values) {
            *s += v;
        }
        base += (1.0 + s0.dot(&r.apply(&s0))) / 2.0;
    }
    let n = probe.len() as f64;
    let avg = psi_core::spectral::AcfEstimate {
        lag_step: 1.0 / FS,
        values: sum.iter().enumerate().map(|(l, v)| v / traces as f64 * n / (n - l as f64)).collect(),
    };
    let base = base / traces as f64;
    let mut compared = 0;
    for (tau, env) in avg.carrier_envelope(cfg.aom_frequency) {
        let lag = (tau * FS).round() as usize;
        let Some(k) = o.lags.iter().position(|&l| l == lag) else { continue };
        let scaled = env / (g2 * 2.0 * base) * 0.5;
        let rel = (scaled / report.empirical_envelope[k] - 1.0).abs();
        assert!(rel < 0.05, "lag {lag}: {scaled} vs {}", report.empirical_envelope[k]);
        compared += 1;
    }
    assert!(compared >= 5);
}
