//! The virtual polarization scrambling interferometer: two arms, a frequency
//! shifter in one of them, a slow scrambler modeled as one uniformly random
//! sphere rotation per scan, square-law detection and a scan-averaging
//! spectrum analyzer.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nldp::{compose_probe, PerturbationModel};
use crate::rng::{stream, Purpose, Role};
use crate::spectral::{RfSpectrum, Welch};
use crate::stokes::{haar_rotation, stokes_to_jones, Rotation3, SopTimeSeries, StokesVector};

/// Upper bound on consecutive rejected scrambler draws.
pub const MAX_SCRAMBLER_DRAWS: usize = 10_000;

/// Bandwidth kept free above the carrier when checking the sample rate.
pub const PEDESTAL_MARGIN_HZ: f64 = 10e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiConfig {
    /// Frequency shift in arm B, Hz.
    pub aom_frequency: f64,
    /// Static phase of arm B, rad.
    pub static_phase: f64,
    /// Power of arm A over arm B, dB.
    pub arm_power_imbalance_db: f64,
    /// Extra propagation delay of arm B, s.
    pub path_delay_mismatch: f64,
    /// Nominal scrambler speed, rad/s. Only recorded; each scan sees a
    /// quasi-static rotation.
    pub scrambler_rate: f64,
    /// Scrambler settings with `1 + S₀·R·S₀ < ε` are rejected.
    pub antipodal_epsilon: f64,
    /// One-sided density of the white detector noise, power units per Hz.
    pub detector_noise_density: f64,
}

impl Default for PsiConfig {
    fn default() -> Self {
        PsiConfig {
            aom_frequency: 27.1e6,
            static_phase: 0.0,
            arm_power_imbalance_db: 0.0,
            path_delay_mismatch: 0.0,
            scrambler_rate: 10.0,
            antipodal_epsilon: 0.1,
            detector_noise_density: 0.0,
        }
    }
}

impl PsiConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("psi.aom_frequency", self.aom_frequency),
            ("psi.static_phase", self.static_phase),
            ("psi.arm_power_imbalance_db", self.arm_power_imbalance_db),
            ("psi.path_delay_mismatch", self.path_delay_mismatch),
            ("psi.scrambler_rate", self.scrambler_rate),
            ("psi.antipodal_epsilon", self.antipodal_epsilon),
            ("psi.detector_noise_density", self.detector_noise_density),
        ];
        if let Some((path, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(*path, format!("must be finite, got {v}")));
        }
        if self.aom_frequency <= 0.0 {
            return Err(Error::validation("psi.aom_frequency", "must be > 0"));
        }
        if !(self.antipodal_epsilon > 0.0 && self.antipodal_epsilon < 2.0) {
            return Err(Error::validation(
                "psi.antipodal_epsilon",
                format!("must lie in (0, 2), got {}", self.antipodal_epsilon),
            ));
        }
        if self.path_delay_mismatch < 0.0 {
            return Err(Error::validation("psi.path_delay_mismatch", "must be >= 0"));
        }
        if self.scrambler_rate < 0.0 {
            return Err(Error::validation("psi.scrambler_rate", "must be >= 0"));
        }
        if self.detector_noise_density < 0.0 {
            return Err(Error::validation("psi.detector_noise_density", "must be >= 0"));
        }
        Ok(())
    }

    /// Arm B power relative to arm A.
    pub fn arm_b_power(&self) -> f64 {
        10f64.powf(-self.arm_power_imbalance_db / 10.0)
    }

    /// Beat prefactor `g`, chosen so that `g·√(1 + S_A·S_B)` is the envelope
    /// of `|E_A + E_B|²` for a unit-power arm A.
    pub fn beat_gain(&self) -> f64 {
        (2.0 * self.arm_b_power()).sqrt()
    }

    pub fn delay_samples(&self, sample_rate: f64) -> usize {
        (self.path_delay_mismatch * sample_rate).round() as usize
    }

    pub fn detector_noise_std(&self, sample_rate: f64) -> f64 {
        (self.detector_noise_density * sample_rate / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub sample_rate: f64,
    pub samples_per_scan: usize,
    pub scan_count: usize,
    /// Target resolution bandwidth, Hz.
    pub rbw: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            sample_rate: 100e6,
            samples_per_scan: 65_536,
            scan_count: 8000,
            rbw: 30e3,
        }
    }
}

impl ScanConfig {
    /// The reduced-averaging setup used for quick runs and tests.
    pub fn ci() -> Self {
        ScanConfig {
            scan_count: 512,
            ..ScanConfig::default()
        }
    }

    pub fn validate(&self, psi: &PsiConfig) -> Result<()> {
        if !(self.rbw > 0.0 && self.rbw.is_finite()) {
            return Err(Error::validation("scan.rbw", "must be > 0"));
        }
        let min_rate = 2.0 * (psi.aom_frequency + PEDESTAL_MARGIN_HZ);
        if !(self.sample_rate > min_rate && self.sample_rate.is_finite()) {
            return Err(Error::validation(
                "scan.sample_rate",
                format!("must exceed {min_rate} Hz for a {} Hz carrier", psi.aom_frequency),
            ));
        }
        if self.scan_count == 0 {
            return Err(Error::validation("scan.scan_count", "must be >= 1"));
        }
        let welch = Welch::new(self.sample_rate, self.rbw).map_err(|e| Error::validation("scan.rbw", e.to_string()))?;
        let required = welch.min_samples() + psi.delay_samples(self.sample_rate);
        if self.samples_per_scan < required {
            return Err(Error::validation(
                "scan.samples_per_scan",
                format!("{} samples cannot resolve {} Hz (needs {required})", self.samples_per_scan, self.rbw),
            ));
        }
        Ok(())
    }
}

/// Sampled photocurrent.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatTrace {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl BeatTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite photocurrent at sample {i}")));
        }
        Ok(BeatTrace { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
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

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// `√(1 + S_A·S_B)`.
pub fn beat_amplitude(a: &StokesVector, b: &StokesVector) -> f64 {
    (1.0 + a.dot(b)).max(0.0).sqrt()
}

fn check_probe(probe: &SopTimeSeries, cfg: &PsiConfig) -> Result<usize> {
    if probe.sample_rate() <= 2.0 * cfg.aom_frequency {
        return Err(Error::Aliasing {
            sample_rate: probe.sample_rate(),
            rate: 2.0 * PI * cfg.aom_frequency,
        });
    }
    let d = cfg.delay_samples(probe.sample_rate());
    if d >= probe.len() {
        return Err(Error::InsufficientLength {
            required: d + 1,
            available: probe.len(),
        });
    }
    Ok(d)
}

/// Beat envelope `g·√(1 + S(t)·R·S(t−d))` for output samples `d..n`.
pub fn beat_envelope(probe: &SopTimeSeries, scramble: &Rotation3, cfg: &PsiConfig) -> Result<Vec<f64>> {
    let d = check_probe(probe, cfg)?;
    let g = cfg.beat_gain();
    let s = probe.samples();
    Ok((d..s.len())
        .map(|k| g * beat_amplitude(&s[k], &scramble.apply(&s[k - d])))
        .collect())
}

/// Photocurrent `g·√(1 + S(t)·R·S(t−d))·cos(2π·f_AOM·t + θ)` plus white detector
/// noise. The first `d` samples, where the delayed arm has no history, are
/// dropped.
pub fn synthesize_beat<R: Rng + ?Sized>(
    probe: &SopTimeSeries,
    scramble: &Rotation3,
    cfg: &PsiConfig,
    rng: &mut R,
) -> Result<BeatTrace> {
    let env = beat_envelope(probe, scramble, cfg)?;
    let fs = probe.sample_rate();
    let d = cfg.delay_samples(fs);
    let w = 2.0 * PI * cfg.aom_frequency / fs;
    let noise = cfg.detector_noise_std(fs);
    let samples = env
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let carrier = (w * (i + d) as f64 + cfg.static_phase).cos();
            let n: f64 = if noise > 0.0 { rng.sample::<f64, _>(StandardNormal) * noise } else { 0.0 };
            e * carrier + n
        })
        .collect();
    BeatTrace::new(samples, fs)
}

/// Output of the field-level interferometer model.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBeat {
    /// `|E_A + E_B|²` with its constant part removed.
    pub trace: BeatTrace,
    /// `E_A†·E_B` with the frequency shift taken out, so that
    /// `trace = 2·Re(phasor·e^{−i2πf_AOM·t})`.
    pub phasor: Vec<Complex64>,
}

impl FieldBeat {
    pub fn envelope(&self) -> Vec<f64> {
        self.phasor.iter().map(|z| 2.0 * z.norm()).collect()
    }
}

/// Builds both arm fields sample by sample and detects their sum. Arm A is the
/// unit-power probe; arm B is the probe delayed, passed through the scrambler,
/// attenuated, phase shifted by θ and frequency shifted. `common_phase` is
/// applied to the probe before the split, so it reaches arm B delayed too.
pub fn full_field_beat(
    probe: &SopTimeSeries,
    common_phase: &[f64],
    scramble: &Rotation3,
    cfg: &PsiConfig,
) -> Result<FieldBeat> {
    let d = check_probe(probe, cfg)?;
    if common_phase.len() != probe.len() {
        return Err(Error::InsufficientLength {
            required: probe.len(),
            available: common_phase.len(),
        });
    }
    let fs = probe.sample_rate();
    let u = scramble.to_unitary();
    let b_amp = cfg.arm_b_power().sqrt();
    let fields = probe
        .samples()
        .iter()
        .zip(common_phase)
        .map(|(s, phi)| {
            let mut j = stokes_to_jones(s)?;
            j.common_phase = *phi;
            Ok(j)
        })
        .collect::<Result<Vec<_>>>()?;
    let dc = 1.0 + cfg.arm_b_power();
    let mut trace = Vec::with_capacity(fields.len() - d);
    let mut phasor = Vec::with_capacity(fields.len() - d);
    for k in d..fields.len() {
        let t = k as f64 / fs;
        let (ax, ay) = fields[k].phased();
        let b = fields[k - d].transformed(&u);
        let (bx, by) = b.phased();
        let shift = Complex64::from_polar(b_amp, cfg.static_phase - 2.0 * PI * cfg.aom_frequency * t);
        let (bx, by) = (bx * shift, by * shift);
        let intensity = (ax + bx).norm_sqr() + (ay + by).norm_sqr();
        trace.push(intensity - dc);
        let z = ax.conj() * bx + ay.conj() * by;
        phasor.push(z * Complex64::from_polar(1.0, 2.0 * PI * cfg.aom_frequency * t));
    }
    Ok(FieldBeat {
        trace: BeatTrace::new(trace, fs)?,
        phasor,
    })
}

/// Draws a uniformly random rotation, redrawing while `1 + S₀·R·S₀ < ε`.
/// Returns the accepted rotation and the number of rejected draws.
pub fn draw_scrambler<R: Rng + ?Sized>(s0: &StokesVector, epsilon: f64, rng: &mut R) -> Result<(Rotation3, usize)> {
    for rejected in 0..MAX_SCRAMBLER_DRAWS {
        let r = haar_rotation(rng);
        if 1.0 + s0.dot(&r.apply(s0)) >= epsilon {
            return Ok((r, rejected));
        }
    }
    Err(Error::RejectionSaturated {
        draws: MAX_SCRAMBLER_DRAWS,
        epsilon,
    })
}

/// Synthesizes one scan's photocurrent: scrambler draw, fresh perturbation,
/// beat with detector noise. Every random draw is keyed by `(seed, index, role)`.
pub fn scan_trace(
    model: &PerturbationModel,
    psi: &PsiConfig,
    scan: &ScanConfig,
    index: u64,
    seed: u64,
    role: Role,
) -> Result<BeatTrace> {
    let fs = scan.sample_rate;
    let base = model.base();
    let (r, _) = draw_scrambler(&base, psi.antipodal_epsilon, &mut stream(seed, index, role, Purpose::Scrambler))?;
    let n = scan.samples_per_scan + psi.delay_samples(fs);
    let decomp = model.realize(fs, n, &mut stream(seed, index, role, Purpose::Perturbation))?;
    let probe = compose_probe(&decomp)?;
    synthesize_beat(&probe, &r, psi, &mut stream(seed, index, role, Purpose::Detector))
}

/// Single-scan periodogram at the configured RBW.
pub fn run_scan(
    model: &PerturbationModel,
    psi: &PsiConfig,
    scan: &ScanConfig,
    index: u64,
    seed: u64,
    role: Role,
) -> Result<RfSpectrum> {
    let welch = Welch::new(scan.sample_rate, scan.rbw)?;
    welch.estimate(scan_trace(model, psi, scan, index, seed, role)?.samples())
}

/// Running linear-power sum of scans on a common grid.
#[derive(Debug, Clone)]
pub struct EsaAccumulator {
    template: Option<RfSpectrum>,
    sum: Vec<f64>,
    count: usize,
}

impl Default for EsaAccumulator {
    fn default() -> Self {
        EsaAccumulator::new()
    }
}

impl EsaAccumulator {
    pub fn new() -> Self {
        EsaAccumulator {
            template: None,
            sum: Vec::new(),
            count: 0,
        }
    }

    pub fn add(&mut self, scan: &RfSpectrum) -> Result<()> {
        match &self.template {
            None => {
                self.sum = scan.power().to_vec();
                self.template = Some(scan.clone());
            }
            Some(t) => {
                if !t.same_grid(scan) {
                    return Err(Error::GridMismatch);
                }
                self.sum.iter_mut().zip(scan.power()).for_each(|(a, p)| *a += p);
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Result<RfSpectrum> {
        let t = self.template.ok_or(Error::InsufficientLength {
            required: 1,
            available: 0,
        })?;
        let n = self.count as f64;
        RfSpectrum::new(
            t.start_hz(),
            t.bin_hz(),
            self.sum.into_iter().map(|p| p / n).collect(),
            t.rbw(),
            self.count,
        )
    }
}

/// Pointwise linear-power mean of scans.
pub fn esa_average(scans: &[RfSpectrum]) -> Result<RfSpectrum> {
    let mut acc = EsaAccumulator::new();
    for s in scans {
        acc.add(s)?;
    }
    acc.finish()
}

const SCAN_CHUNK: usize = 64;

/// Averages `count` scans produced by `scan(index)`. Scans are generated in
/// parallel on `workers` threads (all cores when `None`) but summed in index
/// order, so the result does not depend on the thread count.
pub fn average_scans<F>(count: usize, workers: Option<usize>, scan: F) -> Result<RfSpectrum>
where
    F: Fn(u64) -> Result<RfSpectrum> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let mut acc = EsaAccumulator::new();
        for start in (0..count).step_by(SCAN_CHUNK) {
            let end = (start + SCAN_CHUNK).min(count);
            let chunk = (start..end)
                .into_par_iter()
                .map(|i| scan(i as u64))
                .collect::<Result<Vec<_>>>()?;
            for s in &chunk {
                acc.add(s)?;
            }
        }
        acc.finish()
    })
}

/// Scan-averaged spectrum of the interferometer for a perturbation model.
pub fn acquire(
    model: &PerturbationModel,
    psi: &PsiConfig,
    scan: &ScanConfig,
    seed: u64,
    role: Role,
    workers: Option<usize>,
) -> Result<RfSpectrum> {
    psi.validate()?;
    scan.validate(psi)?;
    let welch = Welch::new(scan.sample_rate, scan.rbw)?;
    average_scans(scan.scan_count, workers, |i| {
        welch.estimate(scan_trace(model, psi, scan, i, seed, role)?.samples())
    })
}

/// Intensity-modulated probe: a null-biased Mach-Zehnder driven by a sine,
/// detected directly with arm A blocked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmProbe {
    pub mod_frequency: f64,
    pub mod_depth: f64,
    /// Level of the spurious tones relative to the `2·f_m` line, dB (negative).
    pub spur_level_db: f64,
    /// Frequencies of spurious tones, Hz. Empty disables them.
    pub spur_frequencies: Vec<f64>,
}

impl Default for AmProbe {
    fn default() -> Self {
        AmProbe {
            mod_frequency: 13.55e6,
            mod_depth: 0.3,
            spur_level_db: -50.0,
            spur_frequencies: Vec::new(),
        }
    }
}

impl AmProbe {
    pub fn validate(&self) -> Result<()> {
        if !(self.mod_frequency > 0.0 && self.mod_frequency.is_finite()) {
            return Err(Error::validation("am.mod_frequency", "must be > 0"));
        }
        if !(self.mod_depth >= 0.0 && self.mod_depth.is_finite()) {
            return Err(Error::validation("am.mod_depth", "must be >= 0"));
        }
        if !self.spur_level_db.is_finite() {
            return Err(Error::validation("am.spur_level_db", "must be finite"));
        }
        if self.spur_frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::validation("am.spur_frequencies", "must all be > 0"));
        }
        Ok(())
    }

    /// Normalized intensity `sin²(m·sin(2π·f_m·t))`.
    pub fn intensity(&self, t: f64) -> f64 {
        (self.mod_depth * (2.0 * PI * self.mod_frequency * t).sin()).sin().powi(2)
    }

    /// Amplitude of the `k·f_m` harmonic of the intensity, by numerical
    /// quadrature over one modulation period.
    pub fn harmonic_amplitude(&self, k: u32) -> f64 {
        const POINTS: usize = 4096;
        let period = 1.0 / self.mod_frequency;
        let (mut c, mut s) = (0.0, 0.0);
        for i in 0..POINTS {
            let t = period * i as f64 / POINTS as f64;
            let x = 2.0 * PI * k as f64 * self.mod_frequency * t;
            let v = self.intensity(t);
            c += v * x.cos();
            s += v * x.sin();
        }
        2.0 * (c * c + s * s).sqrt() / POINTS as f64
    }
}

/// Direct-detection photocurrent of the AM probe with detector noise and the
/// optional spurious tones.
pub fn am_probe_trace<R: Rng + ?Sized>(am: &AmProbe, psi: &PsiConfig, scan: &ScanConfig, rng: &mut R) -> Result<BeatTrace> {
    am.validate()?;
    let fs = scan.sample_rate;
    let noise = psi.detector_noise_std(fs);
    let spur = if am.spur_frequencies.is_empty() {
        0.0
    } else {
        am.harmonic_amplitude(2) * 10f64.powf(am.spur_level_db / 20.0)
    };
    let samples = (0..scan.samples_per_scan)
        .map(|k| {
            let t = k as f64 / fs;
            let tones: f64 = am.spur_frequencies.iter().map(|f| (2.0 * PI * f * t).cos()).sum();
            let n: f64 = if noise > 0.0 { rng.sample::<f64, _>(StandardNormal) * noise } else { 0.0 };
            am.intensity(t) + spur * tones + n
        })
        .collect();
    BeatTrace::new(samples, fs)
}

/// Scan-averaged spectrum of the AM probe.
pub fn acquire_am(am: &AmProbe, psi: &PsiConfig, scan: &ScanConfig, seed: u64, workers: Option<usize>) -> Result<RfSpectrum> {
    psi.validate()?;
    scan.validate(psi)?;
    let welch = Welch::new(scan.sample_rate, scan.rbw)?;
    average_scans(scan.scan_count, workers, |i| {
        let trace = am_probe_trace(am, psi, scan, &mut stream(seed, i, Role::Measurement, Purpose::Detector))?;
        welch.estimate(trace.samples())
    })
}
