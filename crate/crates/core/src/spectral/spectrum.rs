use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::BeatTrace;

/// Equivalent noise bandwidth of the periodic Hann window, in bins.
pub const HANN_ENBW_BINS: f64 = 1.5;

/// One-sided power spectral density on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfSpectrum {
    start_hz: f64,
    bin_hz: f64,
    power: Vec<f64>,
    rbw: f64,
    scan_count: usize,
}

impl RfSpectrum {
    pub fn new(start_hz: f64, bin_hz: f64, power: Vec<f64>, rbw: f64, scan_count: usize) -> Result<Self> {
        if !(bin_hz > 0.0) || !(rbw > 0.0) {
            return Err(Error::Config(format!(
                "bin width and RBW must be positive (got {bin_hz}, {rbw})"
            )));
        }
        if let Some(p) = power.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Config(format!("spectral power must be finite and >= 0, got {p}")));
        }
        Ok(RfSpectrum {
            start_hz,
            bin_hz,
            power,
            rbw,
            scan_count,
        })
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn rbw(&self) -> f64 {
        self.rbw
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn start_hz(&self) -> f64 {
        self.start_hz
    }

    pub fn scan_count(&self) -> usize {
        self.scan_count
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.start_hz + i as f64 * self.bin_hz
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.frequency(i)).collect()
    }

    /// Nearest bin to `f`, clamped to the grid.
    pub fn bin_of(&self, f: f64) -> usize {
        let i = ((f - self.start_hz) / self.bin_hz).round();
        i.clamp(0.0, (self.len().max(1) - 1) as f64) as usize
    }

    pub fn peak_index(&self) -> usize {
        self.power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    pub fn peak_frequency(&self) -> f64 {
        self.frequency(self.peak_index())
    }

    pub fn max_power(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_grid(&self, other: &RfSpectrum) -> bool {
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        self.len() == other.len()
            && rel(self.start_hz, other.start_hz)
            && rel(self.bin_hz, other.bin_hz)
            && rel(self.rbw, other.rbw)
    }

    pub fn with_scan_count(mut self, scan_count: usize) -> Self {
        self.scan_count = scan_count;
        self
    }

    pub fn scaled(&self, factor: f64) -> RfSpectrum {
        RfSpectrum {
            power: self.power.iter().map(|p| p * factor).collect(),
            ..self.clone()
        }
    }

    pub fn power_db(&self) -> Vec<f64> {
        self.power.iter().map(|p| 10.0 * p.log10()).collect()
    }

    /// Sum of PSD times bin width.
    pub fn integrated_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_hz
    }

    /// CSV with columns `freq_hz,psd_linear,psd_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,psd_linear,psd_db\n");
        for (i, p) in self.power.iter().enumerate() {
            let _ = writeln!(out, "{},{:e},{:.6}", self.frequency(i), p, 10.0 * p.log10());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV layout written by [`RfSpectrum::to_csv`]; RBW and scan
    /// count are not stored there and must be supplied.
    pub fn from_csv(text: &str, rbw: f64, scan_count: usize) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut power = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("malformed spectrum CSV at line {}", n + 1)))
            };
            freqs.push(parse(cols.next())?);
            power.push(parse(cols.next())?);
        }
        if freqs.len() < 2 {
            return Err(Error::Config("spectrum CSV needs at least two rows".into()));
        }
        RfSpectrum::new(freqs[0], freqs[1] - freqs[0], power, rbw, scan_count)
    }

    pub fn read_csv(path: &Path, rbw: f64, scan_count: usize) -> Result<Self> {
        RfSpectrum::from_csv(&std::fs::read_to_string(path)?, rbw, scan_count)
    }
}

/// Hann-windowed Welch estimator whose segment length is chosen so the
/// window's equivalent noise bandwidth equals the requested RBW. Segments
/// overlap by 75%, which makes the summed squared window flat and keeps the
/// integrated PSD equal to the trace variance.
#[derive(Clone)]
pub struct Welch {
    sample_rate: f64,
    segment_len: usize,
    hop: usize,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch")
            .field("sample_rate", &self.sample_rate)
            .field("segment_len", &self.segment_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Welch {
    pub fn new(sample_rate: f64, target_rbw: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !(target_rbw > 0.0) {
            return Err(Error::Config("sample rate and RBW must be positive".into()));
        }
        let segment_len = (HANN_ENBW_BINS * sample_rate / target_rbw).round() as usize;
        if segment_len < 8 {
            return Err(Error::Config(format!(
                "RBW {target_rbw} Hz is too coarse for sample rate {sample_rate} Hz"
            )));
        }
        let window: Vec<f64> = (0..segment_len)
            .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / segment_len as f64).cos()))
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(segment_len);
        Ok(Welch {
            sample_rate,
            segment_len,
            hop: (segment_len / 4).max(1),
            window,
            window_power,
            fft,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Realized RBW, `1.5·fs/N`.
    pub fn rbw(&self) -> f64 {
        HANN_ENBW_BINS * self.sample_rate / self.segment_len as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.segment_len as f64
    }

    pub fn min_samples(&self) -> usize {
        (2.0 * self.sample_rate / self.rbw()).ceil() as usize
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn estimate(&self, samples: &[f64]) -> Result<RfSpectrum> {
        let required = self.min_samples().max(self.segment_len);
        if samples.len() < required {
            return Err(Error::Resolution {
                rbw: self.rbw(),
                required,
                available: samples.len(),
            });
        }
        let n = self.segment_len;
        let bins = n / 2 + 1;
        let segments = (samples.len() - n) / self.hop + 1;
        let mut acc = vec![0.0; bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for s in 0..segments {
            let seg = &samples[s * self.hop..s * self.hop + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new((x - mean) * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        let scale = 1.0 / (self.sample_rate * self.window_power * segments as f64);
        let power = acc
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
                a * scale * one_sided
            })
            .collect();
        RfSpectrum::new(0.0, self.bin_hz(), power, self.rbw(), 1)
    }
}

pub fn periodogram(trace: &BeatTrace, target_rbw: f64) -> Result<RfSpectrum> {
    Welch::new(trace.sample_rate(), target_rbw)?.estimate(trace.samples())
}

/// Biased autocorrelation estimate at uniformly spaced lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfEstimate {
    pub lag_step: f64,
    pub values: Vec<f64>,
}

impl AcfEstimate {
    pub fn lags(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| i as f64 * self.lag_step).collect()
    }

    /// Divides the `½·cos(2πfτ)` carrier factor out of the ACF of a modulated
    /// carrier, returning `(τ, R_env(τ))` at lags where `|cos| ≥ 0.5`.
    pub fn carrier_envelope(&self, carrier_hz: f64) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let tau = i as f64 * self.lag_step;
                let c = (2.0 * PI * carrier_hz * tau).cos();
                (c.abs() >= 0.5).then(|| (tau, 2.0 * r / c))
            })
            .collect()
    }

    /// Wiener-Khinchin transform with the lag window implied by a Hann
    /// segment of the estimator's length, so the result is directly
    /// comparable to [`Welch::estimate`] on the same grid.
    pub fn to_spectrum(&self, welch: &Welch) -> Result<RfSpectrum> {
        let n = welch.segment_len();
        if self.values.len() < n {
            return Err(Error::InsufficientLength {
                required: n,
                available: self.values.len(),
            });
        }
        let w = welch.window();
        let wp: f64 = w.iter().map(|x| x * x).sum();
        let lag_window = |tau: usize| (0..n - tau).map(|i| w[i] * w[i + tau]).sum::<f64>() / wp;
        let weighted: Vec<f64> = (0..n).map(|t| self.values[t] * lag_window(t)).collect();
        let mut buf: Vec<Complex64> = (0..n)
            .map(|m| {
                let v = if m == 0 { weighted[0] } else { weighted[m] + weighted[n - m] };
                Complex64::new(v, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let fs = welch.sample_rate();
        let power = buf[..n / 2 + 1]
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
                (one_sided * z.re / fs).max(0.0)
            })
            .collect();
        RfSpectrum::new(0.0, welch.bin_hz(), power, welch.rbw(), 1)
    }
}

/// Mean-removed autocorrelation normalized by the trace length, lags `0..=max_lag` samples.
pub fn acf(trace: &BeatTrace, max_lag: usize) -> Result<AcfEstimate> {
    let x = trace.samples();
    let n = x.len();
    if n == 0 || max_lag * 10 >= n {
        return Err(Error::InsufficientLength {
            required: 10 * max_lag + 1,
            available: n,
        });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = x
        .iter()
        .map(|v| Complex64::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for b in &mut buf {
        *b = Complex64::new(b.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let norm = 1.0 / (size as f64 * n as f64);
    Ok(AcfEstimate {
        lag_step: 1.0 / trace.sample_rate(),
        values: buf[..=max_lag].iter().map(|z| z.re * norm).collect(),
    })
}

pub fn normalize_peak(s: &RfSpectrum) -> Result<RfSpectrum> {
    let peak = s.max_power();
    if !(peak > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    Ok(s.scaled(1.0 / peak))
}

/// Default clamp level for subtraction residuals, relative to the measured peak.
pub const DEFAULT_CLAMP_FRACTION: f64 = 1e-12;

/// Linear-power `measured − reference`, with negative bins clamped to
/// `clamp_fraction` of the measured peak.
pub fn subtract_reference(measured: &RfSpectrum, reference: &RfSpectrum, clamp_fraction: f64) -> Result<RfSpectrum> {
    if !measured.same_grid(reference) {
        return Err(Error::GridMismatch);
    }
    let floor = clamp_fraction * measured.max_power();
    let power = measured
        .power
        .iter()
        .zip(&reference.power)
        .map(|(m, r)| (m - r).max(floor))
        .collect();
    RfSpectrum::new(measured.start_hz, measured.bin_hz, power, measured.rbw, measured.scan_count)
}

/// Frequency interval excluded around the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierMask {
    pub center: f64,
    pub half_width: f64,
}

impl CarrierMask {
    pub const DEFAULT_RBW_MULTIPLE: f64 = 2.0;

    /// Mask of `± rbw_multiple·RBW` around the spectrum's peak bin.
    pub fn around_peak(s: &RfSpectrum, rbw_multiple: f64) -> Self {
        CarrierMask {
            center: s.peak_frequency(),
            half_width: rbw_multiple * s.rbw(),
        }
    }

    pub fn at(center: f64, s: &RfSpectrum, rbw_multiple: f64) -> Self {
        CarrierMask {
            center,
            half_width: rbw_multiple * s.rbw(),
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        (f - self.center).abs() <= self.half_width
    }
}

/// Trapezoidal integral of the PSD over `[f1, f2]`, skipping masked bins.
pub fn pedestal_power(s: &RfSpectrum, band: (f64, f64), mask: Option<&CarrierMask>) -> f64 {
    let (lo, hi) = if band.0 <= band.1 { band } else { (band.1, band.0) };
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for (i, &p) in s.power.iter().enumerate() {
        let f = s.frequency(i);
        let inside = f >= lo - 1e-9 * s.bin_hz && f <= hi + 1e-9 * s.bin_hz && !mask.is_some_and(|m| m.contains(f));
        if inside {
            if let Some(q) = prev {
                total += 0.5 * (p + q) * s.bin_hz;
            }
            prev = Some(p);
        } else {
            prev = None;
        }
    }
    total
}
