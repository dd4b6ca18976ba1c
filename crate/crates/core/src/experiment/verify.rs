use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::instrument::{beat_envelope, full_field_beat, synthesize_beat, BeatTrace, PsiConfig};
use crate::nldp::{compose_probe, ou_tangent_process, TangentNoiseParams};
use crate::oracle::{mc_sphere_acf, ArmCoupling, OracleOptions};
use crate::rng::{seeded, stream, Purpose, Role};
use crate::spectral::{acf, periodogram, CarrierMask, Welch};
use crate::stokes::{haar_rotation, StokesVector, Vec3};

/// Outcome of one self-check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn random_sop<R: Rng>(rng: &mut R) -> StokesVector {
    let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    StokesVector::normalized(v).unwrap_or(StokesVector::HORIZONTAL)
}

/// Envelope of the reduced beat model against the full-field beat over random
/// configurations, and immunity to a common laser phase with matched paths.
pub fn field_equivalence(configs: usize, seed: u64) -> Result<Check> {
    const FS: f64 = 100e6;
    let mut rng = seeded(seed);
    let mut worst_env: f64 = 0.0;
    let mut worst_phase: f64 = 0.0;
    for i in 0..configs {
        let base = random_sop(&mut rng);
        let rho = rng.random_range(0.0..0.1);
        let params = TangentNoiseParams::new(rho, rng.random_range(1e6..2e7))?;
        let sigma = ou_tangent_process(base, &params, FS, 600, seed.wrapping_add(i as u64))?;
        let probe = compose_probe(&sigma)?;
        let r = haar_rotation(&mut rng);
        let cfg = PsiConfig {
            static_phase: rng.random_range(0.0..2.0 * PI),
            arm_power_imbalance_db: rng.random_range(-3.0..3.0),
            path_delay_mismatch: rng.random_range(0..8) as f64 / FS,
            ..PsiConfig::default()
        };
        let phase: Vec<f64> = (0..probe.len()).map(|_| rng.random_range(-PI..PI)).collect();
        let env = beat_envelope(&probe, &r, &cfg)?;
        let field = full_field_beat(&probe, &phase, &r, &cfg)?.envelope();
        let scale = env.iter().copied().fold(0.0, f64::max).max(1e-300);
        for (a, b) in env.iter().zip(&field) {
            worst_env = worst_env.max((a - b).abs() / scale);
        }

        let matched = PsiConfig {
            path_delay_mismatch: 0.0,
            ..cfg
        };
        let still = vec![0.0; probe.len()];
        let with = full_field_beat(&probe, &phase, &r, &matched)?.trace;
        let without = full_field_beat(&probe, &still, &r, &matched)?.trace;
        for (a, b) in with.samples().iter().zip(without.samples()) {
            worst_phase = worst_phase.max((a - b).abs());
        }
    }
    Ok(Check {
        name: "field-level beat equivalence".into(),
        passed: worst_env <= 1e-9 && worst_phase <= 1e-12,
        detail: format!(
            "{configs} configurations: envelope deviation {worst_env:.2e} (limit 1e-9), common-phase leakage {worst_phase:.2e} (limit 1e-12)"
        ),
    })
}

/// Tone power, white-noise density and Parseval checks of the Welch estimator.
pub fn estimator_calibration(seed: u64) -> Result<Check> {
    const FS: f64 = 100e6;
    const RBW: f64 = 30e3;
    let n = 500_000;
    let tone: Vec<f64> = (0..n).map(|k| 2f64.sqrt() * (2.0 * PI * 27.1e6 * k as f64 / FS).cos()).collect();
    let s = periodogram(&BeatTrace::new(tone, FS)?, RBW)?;
    let mask = CarrierMask::at(27.1e6, &s, 3.0);
    let tone_power: f64 = (0..s.len())
        .filter(|&i| mask.contains(s.frequency(i)))
        .map(|i| s.power()[i])
        .sum::<f64>()
        * s.bin_hz();
    let tone_db = 10.0 * tone_power.log10();

    let eta = 1e-9;
    let sd = (eta * FS / 2.0).sqrt();
    let mut rng = stream(seed, 0, Role::Measurement, Purpose::Detector);
    let noise: Vec<f64> = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let var = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let s = periodogram(&BeatTrace::new(noise, FS)?, RBW)?;
    let inner: Vec<f64> = s.power()[1..s.len() - 1].to_vec();
    let level_db = 10.0 * (inner.iter().sum::<f64>() / inner.len() as f64 / eta).log10();
    let parseval = s.integrated_power() / var - 1.0;
    Ok(Check {
        name: "spectrum estimator calibration".into(),
        passed: tone_db.abs() <= 0.1 && level_db.abs() <= 0.2 && parseval.abs() <= 0.005,
        detail: format!(
            "tone {tone_db:+.4} dB (limit 0.1), white level {level_db:+.4} dB (limit 0.2), Parseval {:+.3}% (limit 0.5%)",
            parseval * 100.0
        ),
    })
}

fn worst_wk_gap_db(x: Vec<f64>, keep: impl Fn(f64) -> bool) -> Result<f64> {
    let welch = Welch::new(100e6, 30e3)?;
    let direct = welch.estimate(&x)?;
    let wk = acf(&BeatTrace::new(x, 100e6)?, welch.segment_len())?.to_spectrum(&welch)?;
    Ok((0..direct.len())
        .filter(|&i| keep(direct.frequency(i)))
        .map(|i| (10.0 * (wk.power()[i] / direct.power()[i]).log10()).abs())
        .fold(0.0, f64::max))
}

/// Correlogram of the ACF against the direct Welch estimate, for a bare OU
/// component over the whole band and for a beat trace on the pedestal.
pub fn wiener_khinchin(seed: u64) -> Result<Check> {
    const FS: f64 = 100e6;
    let n = 1_000_000;
    let p = TangentNoiseParams::with_fwhm(0.05, 2e6)?;
    let d = ou_tangent_process(StokesVector::HORIZONTAL, &p, FS, n, seed)?;
    let ou = worst_wk_gap_db(d.sigma().iter().map(|s| s.y).collect(), |f| f > 50e3 && f < 49e6)?;

    let p = TangentNoiseParams::with_fwhm(0.1, 2e6)?;
    let probe = compose_probe(&ou_tangent_process(StokesVector::DIAGONAL, &p, FS, n, seed)?)?;
    let mut rng = stream(seed, 0, Role::Measurement, Purpose::Scrambler);
    let r = haar_rotation(&mut rng);
    let cfg = PsiConfig {
        detector_noise_density: 1e-11,
        ..PsiConfig::default()
    };
    let carrier = cfg.aom_frequency;
    let t = synthesize_beat(&probe, &r, &cfg, &mut rng)?;
    let beat = worst_wk_gap_db(t.samples().to_vec(), |f| {
        let off = (f - carrier).abs();
        (0.5e6..=5e6).contains(&off)
    })?;
    Ok(Check {
        name: "Wiener-Khinchin consistency".into(),
        passed: ou <= 1.0 && beat <= 1.0,
        detail: format!(
            "OU component {ou:.3} dB over 50 kHz-49 MHz, beat pedestal {beat:.3} dB at 0.5-5 MHz offsets (limit 1 dB)"
        ),
    })
}

/// Sphere-averaged envelope ACF at ρ = 0.05, 2 MHz FWHM and ε = 0.1.
pub fn oracle(rotations: usize, seed: u64, workers: Option<usize>) -> Result<Check> {
    let params = TangentNoiseParams::with_fwhm(0.05, 2e6)?;
    let opts = OracleOptions {
        rotation_count: rotations,
        epsilon: 0.1,
        seed,
        workers,
        ..OracleOptions::default()
    };
    let len = opts.time_span + opts.lags.iter().copied().max().unwrap_or(0);
    let sigma = ou_tangent_process(StokesVector::HORIZONTAL, &params, 100e6, len, seed)?;
    let r = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &opts)?;
    Ok(Check {
        name: "sphere-averaged envelope ACF".into(),
        passed: r.within_tolerance,
        detail: format!(
            "{} rotations, max relative error {:.3e} against 1/2 + C/3",
            r.sample_count, r.max_relative_error
        ),
    })
}

/// Self-checks of the simulator against independent references. `quick`
/// trims the Monte Carlo and configuration counts.
pub fn run_checks(quick: bool, seed: u64, workers: Option<usize>) -> Result<Vec<Check>> {
    Ok(vec![
        field_equivalence(if quick { 20 } else { 100 }, seed)?,
        estimator_calibration(seed)?,
        wiener_khinchin(seed)?,
        oracle(if quick { 10_000 } else { 100_000 }, seed, workers)?,
    ])
}
