//! Generators for the fast SOP perturbation `σ(t)` riding on a slowly varying
//! base SOP `S₀`.
//!
//! Three load scenarios are modeled phenomenologically:
//!
//! * broadband ASE loading: a two-component Ornstein-Uhlenbeck process in the
//!   tangent plane, whose spectrum is exactly Lorentzian;
//! * multi-span accumulation: delayed copies of a single-span perturbation
//!   summed coherently, which multiplies the spectrum by a Dirichlet kernel
//!   and narrows it;
//! * WDM data loads: periodic ±1 chip patterns per channel, low-pass filtered
//!   to mimic walk-off averaging, either shared between channels (correlated)
//!   or independent and delayed (decorrelated).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stokes::{retract, tangent_basis, SopTimeSeries, StokesVector, Vec3, UNIT_TOLERANCE};

/// Statistics of the tangent-plane OU process: total rms `ρ` (radians on the
/// sphere) and relaxation rate `γ` (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TangentNoiseParams {
    pub rms_amplitude: f64,
    pub correlation_rate: f64,
}

impl Default for TangentNoiseParams {
    fn default() -> Self {
        TangentNoiseParams {
            rms_amplitude: 0.05,
            correlation_rate: 1e7,
        }
    }
}

impl TangentNoiseParams {
    pub fn new(rms_amplitude: f64, correlation_rate: f64) -> Result<Self> {
        let p = TangentNoiseParams {
            rms_amplitude,
            correlation_rate,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose Lorentzian spectrum has the given FWHM in Hz.
    pub fn with_fwhm(rms_amplitude: f64, fwhm_hz: f64) -> Result<Self> {
        TangentNoiseParams::new(rms_amplitude, PI * fwhm_hz)
    }

    /// FWHM of the Lorentzian spectrum, `γ/π` Hz.
    pub fn fwhm_hz(&self) -> f64 {
        self.correlation_rate / PI
    }

    pub fn validate(&self) -> Result<()> {
        // ρ = 0 is accepted as the degenerate no-perturbation limit.
        if !(0.0..=0.3).contains(&self.rms_amplitude) {
            return Err(Error::validation(
                "rms_amplitude",
                format!("must lie in [0, 0.3], got {}", self.rms_amplitude),
            ));
        }
        if !(self.correlation_rate > 0.0) {
            return Err(Error::validation(
                "correlation_rate",
                format!("must be positive, got {}", self.correlation_rate),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanChainParams {
    pub span_count: usize,
    /// Delay between consecutive span contributions, seconds. Rounded to whole samples.
    pub walkoff_delay: f64,
    pub per_span_weight: f64,
}

impl Default for SpanChainParams {
    fn default() -> Self {
        SpanChainParams {
            span_count: 1,
            walkoff_delay: 2e-8,
            per_span_weight: 1.0,
        }
    }
}

impl SpanChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.span_count < 1 {
            return Err(Error::validation("span_count", "must be at least 1"));
        }
        if !(self.walkoff_delay >= 0.0) {
            return Err(Error::validation("walkoff_delay", "must be non-negative"));
        }
        if !self.per_span_weight.is_finite() {
            return Err(Error::validation("per_span_weight", "must be finite"));
        }
        Ok(())
    }

    pub fn delay_samples(&self, sample_rate: f64) -> usize {
        (self.walkoff_delay * sample_rate).round() as usize
    }
}

/// How the dummy WDM channels relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    /// Every channel carries the same data pattern.
    Correlated,
    /// Independent, mutually orthogonal patterns with per-channel delays.
    Decorrelated,
    /// Unpolarized ASE in place of data.
    Ase,
}

impl LoadMode {
    pub const ALL: [LoadMode; 3] = [LoadMode::Correlated, LoadMode::Decorrelated, LoadMode::Ase];

    pub fn label(&self) -> &'static str {
        match self {
            LoadMode::Correlated => "correlated",
            LoadMode::Decorrelated => "decorrelated",
            LoadMode::Ase => "ase",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WdmLoadSpec {
    pub channel_count: usize,
    /// Frame period of the data signals, seconds (5 µs ↔ 200 kHz).
    pub frame_period: f64,
    /// Nominal line rate; recorded only, the pattern runs at `chip_rate`.
    pub symbol_rate: f64,
    /// Rate of the decimated ±1 pattern, chips/s.
    pub chip_rate: f64,
    pub mode: LoadMode,
    /// Single-pole corner of the walk-off low-pass, Hz.
    pub walkoff_cutoff: f64,
    /// Delay step between channels in decorrelated mode, seconds.
    pub per_channel_delay: f64,
    /// Draw an independent tangent direction per channel instead of one shared direction.
    pub random_directions: bool,
}

impl Default for WdmLoadSpec {
    fn default() -> Self {
        WdmLoadSpec {
            channel_count: 10,
            frame_period: 5e-6,
            symbol_rate: 56e9,
            chip_rate: 50e6,
            mode: LoadMode::Correlated,
            walkoff_cutoff: 1e6,
            per_channel_delay: 1e-7,
            random_directions: false,
        }
    }
}

impl WdmLoadSpec {
    pub fn frame_rate(&self) -> f64 {
        1.0 / self.frame_period
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_count < 1 {
            return Err(Error::validation("channel_count", "must be at least 1"));
        }
        if !(self.frame_period > 0.0) {
            return Err(Error::validation("frame_period", "must be positive"));
        }
        if !(self.chip_rate > 0.0) {
            return Err(Error::validation("chip_rate", "must be positive"));
        }
        if !(self.walkoff_cutoff > 0.0) {
            return Err(Error::validation("walkoff_cutoff", "must be positive"));
        }
        if !(self.per_channel_delay >= 0.0) {
            return Err(Error::validation("per_channel_delay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Base SOP plus the tangent perturbation series.
#[derive(Debug, Clone, PartialEq)]
pub struct SopDecomposition {
    base: StokesVector,
    sigma: Vec<Vec3>,
    sample_rate: f64,
}

impl SopDecomposition {
    pub fn new(base: StokesVector, sigma: Vec<Vec3>, sample_rate: f64) -> Result<Self> {
        base.ensure_unit()?;
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        for s in &sigma {
            let dot = base.vector().dot(s);
            if dot.abs() > UNIT_TOLERANCE {
                return Err(Error::NotTangent { dot });
            }
        }
        Ok(SopDecomposition {
            base,
            sigma,
            sample_rate,
        })
    }

    pub fn zero(base: StokesVector, n: usize, sample_rate: f64) -> Result<Self> {
        SopDecomposition::new(base, vec![Vec3::zeros(); n], sample_rate)
    }

    pub fn base(&self) -> StokesVector {
        self.base
    }

    pub fn sigma(&self) -> &[Vec3] {
        &self.sigma
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Root-mean-square of `|σ|`.
    pub fn rms(&self) -> f64 {
        if self.sigma.is_empty() {
            return 0.0;
        }
        (self.sigma.iter().map(|s| s.norm_squared()).sum::<f64>() / self.sigma.len() as f64).sqrt()
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.sigma {
            *s *= factor;
        }
        self
    }

    /// Time-averaged `σ(t)·σ(t+τ)` for each lag (in samples) over the first `span` start times.
    pub fn autocorrelation(&self, lags: &[usize], span: usize) -> Vec<f64> {
        lags.iter()
            .map(|&l| {
                let acc: f64 = (0..span).map(|t| self.sigma[t].dot(&self.sigma[t + l])).sum();
                acc / span as f64
            })
            .collect()
    }
}

pub fn ou_tangent_process(
    s0: StokesVector,
    params: &TangentNoiseParams,
    sample_rate: f64,
    n: usize,
    seed: u64,
) -> Result<SopDecomposition> {
    ou_tangent_process_with(s0, params, sample_rate, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two independent stationary OU components along the tangent basis of `s0`,
/// each with variance `ρ²/2` and autocorrelation `(ρ²/2)·exp(−γ|τ|)`, using the
/// exact AR(1) update.
pub fn ou_tangent_process_with<R: Rng + ?Sized>(
    s0: StokesVector,
    params: &TangentNoiseParams,
    sample_rate: f64,
    n: usize,
    rng: &mut R,
) -> Result<SopDecomposition> {
    params.validate()?;
    s0.ensure_unit()?;
    let gamma = params.correlation_rate;
    if !(sample_rate > 10.0 * gamma / (2.0 * PI)) {
        return Err(Error::Aliasing {
            sample_rate,
            rate: gamma,
        });
    }
    if n < 2 {
        return Err(Error::InsufficientLength {
            required: 2,
            available: n,
        });
    }
    let (e1, e2) = tangent_basis(&s0);
    let var = params.rms_amplitude * params.rms_amplitude / 2.0;
    let phi = (-gamma / sample_rate).exp();
    let sd0 = var.sqrt();
    let sd = (var * (1.0 - phi * phi)).sqrt();

    let mut a = sd0 * rng.sample::<f64, _>(StandardNormal);
    let mut b = sd0 * rng.sample::<f64, _>(StandardNormal);
    let mut sigma = Vec::with_capacity(n);
    sigma.push(e1 * a + e2 * b);
    for _ in 1..n {
        a = phi * a + sd * rng.sample::<f64, _>(StandardNormal);
        b = phi * b + sd * rng.sample::<f64, _>(StandardNormal);
        sigma.push(e1 * a + e2 * b);
    }
    SopDecomposition::new(s0, sigma, sample_rate)
}

/// Coherent sum of `N` copies of the single-span perturbation, each delayed by
/// a further walk-off step: `σ(t) = w·Σₖ σ_base(t − kΔ)`.
///
/// The output covers only the region where every delayed copy exists, so it
/// is `(N−1)·Δ` samples shorter than the input. With `normalize_to`, the
/// result is rescaled to that rms.
pub fn span_accumulate(
    base: &SopDecomposition,
    chain: &SpanChainParams,
    normalize_to: Option<f64>,
) -> Result<SopDecomposition> {
    chain.validate()?;
    let d = chain.delay_samples(base.sample_rate);
    let shift = (chain.span_count - 1) * d;
    if base.len() <= shift {
        return Err(Error::InsufficientLength {
            required: shift + 1,
            available: base.len(),
        });
    }
    let out_len = base.len() - shift;
    let w = chain.per_span_weight;
    let sigma: Vec<Vec3> = (0..out_len)
        .map(|i| {
            let t = i + shift;
            (0..chain.span_count).fold(Vec3::zeros(), |acc, k| acc + base.sigma[t - k * d]) * w
        })
        .collect();
    let out = SopDecomposition::new(base.base, sigma, base.sample_rate)?;
    match normalize_to {
        Some(target) => {
            let rms = out.rms();
            Ok(if rms > 0.0 { out.scaled(target / rms) } else { out })
        }
        None => Ok(out),
    }
}

pub fn wdm_perturbation(
    s0: StokesVector,
    spec: &WdmLoadSpec,
    amplitudes: &[f64],
    sample_rate: f64,
    n: usize,
    seed: u64,
) -> Result<SopDecomposition> {
    wdm_perturbation_with(s0, spec, amplitudes, sample_rate, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Perturbation from `M` dummy channels: `σ(t) = Σₘ aₘ·pₘ(t)·ûₘ`.
///
/// `amplitudes` holds one value per channel, or a single value applied to all.
/// Each `pₘ` is a frame-periodic ±1 chip pattern passed through a single-pole
/// low-pass at the walk-off cutoff, then scaled to zero mean and unit variance.
/// Decorrelated patterns are delayed and then made mutually orthogonal over a frame.
/// In ASE mode the patterns are replaced by an OU process with the same total
/// rms as the independent-channel sum and a corner at the walk-off cutoff.
pub fn wdm_perturbation_with<R: Rng + ?Sized>(
    s0: StokesVector,
    spec: &WdmLoadSpec,
    amplitudes: &[f64],
    sample_rate: f64,
    n: usize,
    rng: &mut R,
) -> Result<SopDecomposition> {
    spec.validate()?;
    s0.ensure_unit()?;
    let m = spec.channel_count;
    let amps: Vec<f64> = match amplitudes.len() {
        1 => vec![amplitudes[0]; m],
        len if len == m => amplitudes.to_vec(),
        len => {
            return Err(Error::Config(format!(
                "expected 1 or {m} channel amplitudes, got {len}"
            )))
        }
    };
    if spec.walkoff_cutoff > sample_rate / 2.0 {
        return Err(Error::Config(format!(
            "walk-off cutoff {} Hz exceeds Nyquist ({} Hz)",
            spec.walkoff_cutoff,
            sample_rate / 2.0
        )));
    }
    let frame_exact = spec.frame_period * sample_rate;
    let frame_len = frame_exact.round() as usize;
    if frame_len < 2 || (frame_exact - frame_len as f64).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "frame period must span a whole number of samples (got {frame_exact})"
        )));
    }
    let chips = (spec.frame_period * spec.chip_rate).round() as usize;
    if chips < 2 || chips > frame_len {
        return Err(Error::Config(format!(
            "frame must hold between 2 and {frame_len} chips (got {chips})"
        )));
    }
    if n < 10 * frame_len {
        return Err(Error::InsufficientLength {
            required: 10 * frame_len,
            available: n,
        });
    }

    if spec.mode == LoadMode::Ase {
        let rms = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        let params = TangentNoiseParams::new(rms, 2.0 * PI * spec.walkoff_cutoff)?;
        return ou_tangent_process_with(s0, &params, sample_rate, n, rng);
    }

    let (e1, e2) = tangent_basis(&s0);
    let mut direction = || {
        let psi = rng.random::<f64>() * 2.0 * PI;
        e1 * psi.cos() + e2 * psi.sin()
    };
    let shared = direction();
    let directions: Vec<Vec3> = (0..m)
        .map(|_| if spec.random_directions { direction() } else { shared })
        .collect();

    let alpha = (-2.0 * PI * spec.walkoff_cutoff / sample_rate).exp();
    let shared_pattern = match spec.mode {
        LoadMode::Correlated => Some(frame_pattern(frame_len, chips, alpha, rng)),
        _ => None,
    };
    let mut patterns: Vec<Vec<f64>> = (0..m)
        .map(|ch| match &shared_pattern {
            Some(p) => p.clone(),
            None => {
                let delay = (ch as f64 * spec.per_channel_delay * sample_rate).round() as usize;
                let p = frame_pattern(frame_len, chips, alpha, rng);
                let shift = delay % frame_len;
                (0..frame_len).map(|k| p[(k + frame_len - shift) % frame_len]).collect()
            }
        })
        .collect();
    if shared_pattern.is_none() {
        orthonormalize(&mut patterns);
    }
    let mut sigma = vec![Vec3::zeros(); n];
    for (ch, pattern) in patterns.iter().enumerate() {
        let v = directions[ch] * amps[ch];
        for (t, s) in sigma.iter_mut().enumerate() {
            *s += v * pattern[t % frame_len];
        }
    }
    SopDecomposition::new(s0, sigma, sample_rate)
}

/// Modified Gram-Schmidt over one frame with the mean-product inner product,
/// so independent channels have exactly zero sample cross-correlation.
/// Patterns that collapse are left as drawn.
fn orthonormalize(patterns: &mut [Vec<f64>]) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
    for i in 0..patterns.len() {
        let mut v = patterns[i].clone();
        for prev in &patterns[..i] {
            let c = dot(&v, prev);
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            patterns[i] = v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// One frame of a filtered ±1 chip pattern in periodic steady state, scaled
/// to zero mean and unit variance.
fn frame_pattern<R: Rng + ?Sized>(frame_len: usize, chips: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let symbols: Vec<f64> = (0..chips)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let raw: Vec<f64> = (0..frame_len).map(|k| symbols[k * chips / frame_len]).collect();

        let run = |y0: f64| {
            let mut y = y0;
            raw.iter()
                .map(|&u| {
                    y = alpha * y + (1.0 - alpha) * u;
                    y
                })
                .collect::<Vec<f64>>()
        };
        // Initial state of the periodic steady state: y0 = forced / (1 − α^P).
        let forced = *run(0.0).last().unwrap();
        let y0 = forced / (1.0 - alpha.powi(frame_len as i32));
        let mut y = run(y0);

        let mean = y.iter().sum::<f64>() / frame_len as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frame_len as f64;
        if var > 1e-12 {
            let sd = var.sqrt();
            y.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            return y;
        }
    }
}

/// Maps each `σ` sample back onto the sphere with the exponential map.
pub fn compose_probe(decomp: &SopDecomposition) -> Result<SopTimeSeries> {
    let samples = decomp
        .sigma
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let amplitude = s.norm();
            if amplitude >= 1.0 {
                return Err(Error::Amplitude { index, amplitude });
            }
            retract(&decomp.base, s)
        })
        .collect::<Result<Vec<_>>>()?;
    SopTimeSeries::new(samples, decomp.sample_rate)
}

/// A perturbation scenario that can produce fresh realizations on demand.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationModel {
    /// No NLDP: the probe SOP stays at `base`.
    Unperturbed { base: StokesVector },
    Ou {
        base: StokesVector,
        params: TangentNoiseParams,
    },
    SpanChain {
        base: StokesVector,
        params: TangentNoiseParams,
        chain: SpanChainParams,
        normalize_to: Option<f64>,
    },
    Wdm {
        base: StokesVector,
        spec: WdmLoadSpec,
        amplitudes: Vec<f64>,
    },
}

impl PerturbationModel {
    pub fn base(&self) -> StokesVector {
        match self {
            PerturbationModel::Unperturbed { base }
            | PerturbationModel::Ou { base, .. }
            | PerturbationModel::SpanChain { base, .. }
            | PerturbationModel::Wdm { base, .. } => *base,
        }
    }

    pub fn realize<R: Rng + ?Sized>(&self, sample_rate: f64, n: usize, rng: &mut R) -> Result<SopDecomposition> {
        match self {
            PerturbationModel::Unperturbed { base } => SopDecomposition::zero(*base, n, sample_rate),
            PerturbationModel::Ou { base, params } => ou_tangent_process_with(*base, params, sample_rate, n, rng),
            PerturbationModel::SpanChain {
                base,
                params,
                chain,
                normalize_to,
            } => {
                let extra = (chain.span_count.max(1) - 1) * chain.delay_samples(sample_rate);
                let single = ou_tangent_process_with(*base, params, sample_rate, n + extra, rng)?;
                span_accumulate(&single, chain, *normalize_to)
            }
            PerturbationModel::Wdm {
                base,
                spec,
                amplitudes,
            } => wdm_perturbation_with(*base, spec, amplitudes, sample_rate, n, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 100e6;

    #[test]
    fn zero_rms_gives_zero_perturbation() {
        let p = TangentNoiseParams::new(0.0, 1e7).unwrap();
        let d = ou_tangent_process(StokesVector::HORIZONTAL, &p, FS, 1000, 1).unwrap();
        assert!(d.sigma().iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn undersampled_request_is_aliasing() {
        let p = TangentNoiseParams::new(0.05, 2.0 * PI * 20e6).unwrap();
        assert!(matches!(
            ou_tangent_process(StokesVector::HORIZONTAL, &p, FS, 1000, 1),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn ou_is_tangent_and_reproducible() {
        let p = TangentNoiseParams::default();
        let s0 = StokesVector::normalized(Vec3::new(0.2, -0.4, 0.7)).unwrap();
        let a = ou_tangent_process(s0, &p, FS, 4096, 9).unwrap();
        let b = ou_tangent_process(s0, &p, FS, 4096, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma().iter().all(|s| s.dot(s0.vector()).abs() < 1e-12));
    }

    #[test]
    fn single_span_is_identity() {
        let p = TangentNoiseParams::default();
        let base = ou_tangent_process(StokesVector::HORIZONTAL, &p, FS, 2000, 3).unwrap();
        let chain = SpanChainParams {
            span_count: 1,
            ..Default::default()
        };
        assert_eq!(span_accumulate(&base, &chain, None).unwrap(), base);
    }

    #[test]
    fn zero_delay_is_scaled_copy() {
        let p = TangentNoiseParams::default();
        let base = ou_tangent_process(StokesVector::HORIZONTAL, &p, FS, 2000, 3).unwrap();
        let chain = SpanChainParams {
            span_count: 10,
            walkoff_delay: 0.0,
            per_span_weight: 0.3,
        };
        let out = span_accumulate(&base, &chain, None).unwrap();
        for (a, b) in out.sigma().iter().zip(base.sigma()) {
            assert!((a - b * 3.0).norm() < 1e-15);
        }
    }

    #[test]
    fn span_chain_needs_enough_samples() {
        let base = SopDecomposition::zero(StokesVector::HORIZONTAL, 10, FS).unwrap();
        let chain = SpanChainParams {
            span_count: 10,
            walkoff_delay: 2e-8,
            per_span_weight: 1.0,
        };
        assert!(matches!(
            span_accumulate(&base, &chain, None),
            Err(Error::InsufficientLength { .. })
        ));
    }

    #[test]
    fn compose_rejects_large_sigma() {
        let d = SopDecomposition::new(StokesVector::RIGHT_CIRCULAR, vec![Vec3::new(1.2, 0.0, 0.0)], FS).unwrap();
        assert!(matches!(compose_probe(&d), Err(Error::Amplitude { .. })));
    }

    #[test]
    fn compose_single_sample_angle() {
        let d = SopDecomposition::new(StokesVector::RIGHT_CIRCULAR, vec![Vec3::new(0.1, 0.0, 0.0)], FS).unwrap();
        let s = compose_probe(&d).unwrap().samples()[0];
        assert!((s.angle_to(&StokesVector::RIGHT_CIRCULAR) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn wdm_cutoff_above_nyquist() {
        let spec = WdmLoadSpec {
            walkoff_cutoff: 60e6,
            ..Default::default()
        };
        assert!(matches!(
            wdm_perturbation(StokesVector::HORIZONTAL, &spec, &[0.01], FS, 10_000, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wdm_patterns_are_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = frame_pattern(500, 250, 0.94, &mut rng);
        let mean = p.iter().sum::<f64>() / 500.0;
        let var = p.iter().map(|v| v * v).sum::<f64>() / 500.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
