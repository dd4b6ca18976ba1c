use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::spectrum::{CarrierMask, RfSpectrum};
use crate::error::{Error, Result};

/// Least bins a fit window must contain after masking.
pub const MIN_FIT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Bins farther than this from the window center are ignored, Hz.
    /// `None` uses the whole spectrum.
    pub half_span: Option<f64>,
    pub max_iterations: usize,
    /// Relative parameter change below which the iteration stops.
    pub tolerance: f64,
    /// Fit `ln(PSD)` instead of the linear PSD.
    pub log_space: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            half_span: Some(10e6),
            max_iterations: 200,
            tolerance: 1e-6,
            log_space: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    IterationLimit,
    WidthAtBound,
    /// The pedestal is indistinguishable from the residual noise.
    Degenerate,
}

/// `A / (1 + ((f − f₀)/(Γ/2))²) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center_hz: f64,
    pub fwhm_hz: f64,
    pub floor: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn eval(&self, f: f64) -> f64 {
        lorentzian(self.amplitude, self.center_hz, self.fwhm_hz, self.floor, f)
    }

    pub fn record(&self, scan_count: usize) -> FitRecord {
        FitRecord {
            amplitude: self.amplitude,
            center_hz: self.center_hz,
            fwhm_hz: self.fwhm_hz,
            floor: self.floor,
            residual_rms: self.residual_rms,
            converged: self.converged,
            scan_count,
        }
    }
}

/// Serialized form of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub amplitude: f64,
    pub center_hz: f64,
    pub fwhm_hz: f64,
    pub floor: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub scan_count: usize,
}

pub fn lorentzian(amplitude: f64, center: f64, fwhm: f64, floor: f64, f: f64) -> f64 {
    let u = (f - center) / (fwhm / 2.0);
    amplitude / (1.0 + u * u) + floor
}

/// Parameters are compared against this when judging relative change, so a
/// floor or amplitude that sits at zero does not demand an exact zero step.
const PARAM_FLOOR: f64 = 1e-3;

/// Parameters in normalized units: frequency offset over `scale`, power over `norm`.
#[derive(Clone, Copy)]
struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    log_space: bool,
}

impl Problem<'_> {
    fn model_and_jacobian(p: &Vector4<f64>, x: f64) -> (f64, Vector4<f64>) {
        let (a, f0, g, _) = (p[0], p[1], p[2], p[3]);
        let u = (x - f0) / (g / 2.0);
        let d = 1.0 + u * u;
        let m = a / d + p[3];
        let j = Vector4::new(1.0 / d, a * 2.0 * u / (d * d * g / 2.0), a * 2.0 * u * u / (g * d * d), 1.0);
        (m, j)
    }

    fn residual(&self, i: usize, m: f64) -> f64 {
        if self.log_space {
            self.y[i].ln() - m.max(f64::MIN_POSITIVE).ln()
        } else {
            self.y[i] - m
        }
    }

    fn cost(&self, p: &Vector4<f64>) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let (m, _) = Self::model_and_jacobian(p, self.x[i]);
                self.residual(i, m).powi(2)
            })
            .sum()
    }

    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for i in 0..self.x.len() {
            let (m, mut j) = Self::model_and_jacobian(p, self.x[i]);
            if self.log_space {
                j /= m.max(f64::MIN_POSITIVE);
            }
            let r = self.residual(i, m);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        (jtj, jtr)
    }
}

struct Bounds {
    width: (f64, f64),
    center: (f64, f64),
}

impl Bounds {
    fn limits(&self) -> [(f64, f64); 4] {
        [
            (0.0, f64::INFINITY),
            self.center,
            self.width,
            (0.0, f64::INFINITY),
        ]
    }

    fn project(&self, p: &mut Vector4<f64>) {
        for (k, (lo, hi)) in self.limits().into_iter().enumerate() {
            p[k] = p[k].clamp(lo, hi);
        }
    }

    /// Parameters sitting on a bound that `step` would push them through.
    fn blocked(&self, p: &Vector4<f64>, step: &Vector4<f64>) -> [bool; 4] {
        let mut out = [false; 4];
        for (k, (lo, hi)) in self.limits().into_iter().enumerate() {
            out[k] = (p[k] <= lo && step[k] < 0.0) || (p[k] >= hi && step[k] > 0.0);
        }
        out
    }
}

/// Solves the damped normal equations with the `frozen` parameters held fixed.
fn solve_step(damped: &Matrix4<f64>, rhs: &Vector4<f64>, frozen: &[bool; 4]) -> Option<Vector4<f64>> {
    let mut m = *damped;
    let mut r = *rhs;
    for k in (0..4).filter(|&k| frozen[k]) {
        for j in 0..4 {
            m[(k, j)] = 0.0;
            m[(j, k)] = 0.0;
        }
        m[(k, k)] = 1.0;
        r[k] = 0.0;
    }
    m.cholesky().map(|c| c.solve(&r))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares Lorentzian fit over the unmasked bins of the fit window,
/// by Levenberg-Marquardt with projection onto `A ≥ 0`, `c ≥ 0` and
/// `bin ≤ Γ ≤ 10·window`.
pub fn fit_lorentzian(s: &RfSpectrum, mask: Option<&CarrierMask>, opts: &FitOptions) -> Result<LorentzianFit> {
    let window_center = mask.map_or_else(|| s.peak_frequency(), |m| m.center);
    let (freqs, power): (Vec<f64>, Vec<f64>) = (0..s.len())
        .map(|i| (s.frequency(i), s.power()[i]))
        .filter(|(f, _)| opts.half_span.is_none_or(|h| (f - window_center).abs() <= h))
        .filter(|(f, _)| !mask.is_some_and(|m| m.contains(*f)))
        .unzip();
    if freqs.len() < MIN_FIT_BINS {
        return Err(Error::InsufficientLength {
            required: MIN_FIT_BINS,
            available: freqs.len(),
        });
    }
    let lo = freqs[0];
    let hi = freqs[freqs.len() - 1];
    let scale = ((hi - lo) / 2.0).max(s.bin_hz());
    let mid = (hi + lo) / 2.0;
    let norm = power.iter().copied().fold(0.0, f64::max);
    if !(norm > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    let x: Vec<f64> = freqs.iter().map(|f| (f - mid) / scale).collect();
    let y: Vec<f64> = power.iter().map(|p| p / norm).collect();
    let bin = s.bin_hz() / scale;

    let edge = (y.len() / 10).max(3);
    let c0 = 0.5 * (median(y[..edge].to_vec()) + median(y[y.len() - edge..].to_vec()));
    let excess: Vec<f64> = y.iter().map(|v| (v - c0).max(0.0)).collect();
    let total: f64 = excess.iter().sum();
    let (imax, a0) = excess
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (i, &e)| if e > best.1 { (i, e) } else { best });
    let f0 = if total > 0.0 {
        excess.iter().zip(&x).map(|(e, x)| e * x).sum::<f64>() / total
    } else {
        (window_center - mid) / scale
    };
    let left = (0..imax).rev().find(|&i| excess[i] < a0 / 2.0).map_or(x[0], |i| x[i]);
    let right = (imax..x.len()).find(|&i| excess[i] < a0 / 2.0).map_or(x[x.len() - 1], |i| x[i]);
    let bounds = Bounds {
        width: (bin, 20.0),
        center: (-1.0, 1.0),
    };
    let mut p = Vector4::new(a0, f0, (right - left).max(2.0 * bin), c0);
    bounds.project(&mut p);

    let problem = Problem {
        x: &x,
        y: &y,
        log_space: opts.log_space,
    };
    if opts.log_space && y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Config("log-space fit needs strictly positive power".into()));
    }
    let mut cost = problem.cost(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&p);
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(free_step) = solve_step(&damped, &jtr, &[false; 4]) else {
                lambda *= 4.0;
                continue;
            };
            let frozen = bounds.blocked(&p, &free_step);
            let step = if frozen.contains(&true) {
                match solve_step(&damped, &jtr, &frozen) {
                    Some(s) => s,
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                }
            } else {
                free_step
            };
            let mut trial = p + step;
            bounds.project(&mut trial);
            let trial_cost = problem.cost(&trial);
            if trial_cost <= cost {
                let change = trial - p;
                let small = (0..4).all(|k| change[k].abs() <= opts.tolerance * (p[k].abs() + PARAM_FLOOR));
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                converged = small;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No downhill step exists at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let amplitude = p[0] * norm;
    let center_hz = mid + p[1] * scale;
    let fwhm_hz = p[2] * scale;
    let floor = p[3] * norm;
    let residual_rms = (freqs
        .iter()
        .zip(&power)
        .map(|(f, y)| (y - lorentzian(amplitude, center_hz, fwhm_hz, floor, *f)).powi(2))
        .sum::<f64>()
        / freqs.len() as f64)
        .sqrt();
    let at_bound = (p[2] - bounds.width.0).abs() <= 1e-6 * bounds.width.0 || (p[2] - bounds.width.1).abs() <= 1e-6 * bounds.width.1;
    let status = if amplitude < 3.0 * residual_rms || fwhm_hz < 2.0 * s.bin_hz() {
        FitStatus::Degenerate
    } else if at_bound {
        FitStatus::WidthAtBound
    } else if !converged {
        FitStatus::IterationLimit
    } else {
        FitStatus::Converged
    };
    Ok(LorentzianFit {
        amplitude,
        center_hz,
        fwhm_hz,
        floor,
        residual_rms,
        converged: status == FitStatus::Converged,
        status,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub distance_km: f64,
    pub fwhm_hz: f64,
    pub amplitude: f64,
    pub residual_rms: f64,
    pub converged: bool,
}

/// Fitted widths ordered by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub rows: Vec<DistanceRow>,
    /// Row indices whose width does not drop below the previous row's.
    pub non_monotonic: Vec<usize>,
}

impl DistanceTable {
    pub fn is_strictly_decreasing(&self) -> bool {
        self.non_monotonic.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance_km,fwhm_hz,amplitude,residual_rms,converged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{}\n",
                r.distance_km, r.fwhm_hz, r.amplitude, r.residual_rms, r.converged
            ));
        }
        out
    }
}

pub fn fwhm_vs_distance(fits: &[(f64, LorentzianFit)]) -> DistanceTable {
    let mut rows: Vec<DistanceRow> = fits
        .iter()
        .map(|(d, f)| DistanceRow {
            distance_km: *d,
            fwhm_hz: f.fwhm_hz,
            amplitude: f.amplitude,
            residual_rms: f.residual_rms,
            converged: f.converged,
        })
        .collect();
    rows.sort_by(|a, b| a.distance_km.total_cmp(&b.distance_km));
    let non_monotonic = (1..rows.len())
        .filter(|&i| rows[i].fwhm_hz >= rows[i - 1].fwhm_hz)
        .collect();
    DistanceTable { rows, non_monotonic }
}
