//! Brute-force reference for the sphere-averaged beat autocorrelation.
//!
//! For a fixed perturbation realization the exact envelope product
//! `e(t)·e(t+τ)`, with `e = √((1 + S_A·R·S_B)/2)`, is averaged over time and
//! over uniformly random scrambler rotations, then compared with the
//! first-order form `½ + ⅓·⟨σ(t)·σ(t+τ)⟩`. The overall scale is fixed by the
//! unperturbed baseline `(1 + S₀·R·S₀)/2` averaged over the same rotations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::MAX_SCRAMBLER_DRAWS;
use crate::nldp::{ou_tangent_process, SopDecomposition, TangentNoiseParams};
use crate::rng::{stream, Purpose, Role};
use crate::stokes::{haar_rotation, retract, StokesVector};

/// Relative tolerance floor of the envelope comparison.
pub const RELATIVE_TOLERANCE: f64 = 0.02;

const CHUNK: usize = 2048;

/// How arm B's perturbation relates to arm A's.
#[derive(Debug, Clone, Copy)]
pub enum ArmCoupling<'a> {
    /// Both arms carry the same probe; matched paths.
    SameProbe,
    /// Arm B carries an independent realization.
    Independent(&'a SopDecomposition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub rotation_count: usize,
    /// Rotations with `1 + S₀·R·S₀ < ε` are redrawn. Zero disables the cap.
    pub epsilon: f64,
    pub seed: u64,
    /// Lags in samples.
    pub lags: Vec<usize>,
    /// Number of time origins averaged per lag.
    pub time_span: usize,
    pub workers: Option<usize>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            rotation_count: 100_000,
            epsilon: 0.1,
            seed: 0,
            lags: (0..=64).step_by(4).collect(),
            time_span: 4096,
            workers: None,
        }
    }
}

impl OracleOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..2.0).contains(&self.epsilon) {
            return Err(Error::validation(
                "oracle.epsilon",
                format!("must lie in [0, 2), got {}", self.epsilon),
            ));
        }
        if self.rotation_count < 2 {
            return Err(Error::validation("oracle.rotation_count", "must be >= 2"));
        }
        if self.lags.is_empty() {
            return Err(Error::validation("oracle.lags", "must not be empty"));
        }
        if self.time_span == 0 {
            return Err(Error::validation("oracle.time_span", "must be >= 1"));
        }
        Ok(())
    }

    fn required_len(&self) -> usize {
        self.time_span + self.lags.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Lags, seconds.
    pub lag_grid: Vec<f64>,
    /// Sphere-averaged envelope ACF scaled so that its unperturbed value is ½.
    pub empirical_envelope: Vec<f64>,
    /// `½ + ⅓·C_σ(τ)`.
    pub predicted_envelope: Vec<f64>,
    /// Time-averaged `σ(t)·σ(t+τ)` of the realization.
    pub sigma_acf: Vec<f64>,
    /// Standard error of the unscaled rotation mean.
    pub mc_stderr: Vec<f64>,
    /// Standard error of the scaled envelope.
    pub envelope_stderr: Vec<f64>,
    /// Allowed relative deviation per lag: `max(2%, 3·stderr/predicted)`.
    pub tolerance: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub max_relative_error: f64,
    pub within_tolerance: bool,
    pub sample_count: usize,
    pub rejected_count: usize,
    pub epsilon_used: f64,
    /// Mean of `(1 + S₀·R·S₀)/2` over accepted rotations.
    pub raw_baseline: f64,
    pub baseline_stderr: f64,
    /// Mean of `√(1 + S₀·R·S₀)` over accepted rotations.
    pub mean_amplitude: f64,
    /// Least-squares intercept and slope of the envelope against `C_σ`.
    pub effective_offset: f64,
    pub effective_slope: f64,
}

#[derive(Clone)]
struct Partial {
    sum_y: Vec<f64>,
    sum_y2: Vec<f64>,
    sum_yb: Vec<f64>,
    sum_b: f64,
    sum_b2: f64,
    sum_amp: f64,
    count: usize,
    rejected: usize,
}

impl Partial {
    fn new(lags: usize) -> Self {
        Partial {
            sum_y: vec![0.0; lags],
            sum_y2: vec![0.0; lags],
            sum_yb: vec![0.0; lags],
            sum_b: 0.0,
            sum_b2: 0.0,
            sum_amp: 0.0,
            count: 0,
            rejected: 0,
        }
    }

    fn merge(&mut self, o: &Partial) {
        for k in 0..self.sum_y.len() {
            self.sum_y[k] += o.sum_y[k];
            self.sum_y2[k] += o.sum_y2[k];
            self.sum_yb[k] += o.sum_yb[k];
        }
        self.sum_b += o.sum_b;
        self.sum_b2 += o.sum_b2;
        self.sum_amp += o.sum_amp;
        self.count += o.count;
        self.rejected += o.rejected;
    }
}

fn on_sphere(d: &SopDecomposition, n: usize) -> Result<Vec<[f64; 3]>> {
    d.sigma()[..n]
        .iter()
        .map(|s| retract(&d.base(), s).map(|v| [v.s1(), v.s2(), v.s3()]))
        .collect()
}

fn time_acf(d: &SopDecomposition, lags: &[usize], span: usize) -> Vec<f64> {
    let s = d.sigma();
    lags.iter()
        .map(|&l| (0..span).map(|t| s[t].dot(&s[t + l])).sum::<f64>() / span as f64)
        .collect()
}

/// Sphere-averaged envelope ACF of one perturbation realization.
pub fn mc_sphere_acf(sigma: &SopDecomposition, coupling: ArmCoupling<'_>, opts: &OracleOptions) -> Result<OracleReport> {
    opts.validate()?;
    let n = opts.required_len();
    let b_decomp = match coupling {
        ArmCoupling::SameProbe => sigma,
        ArmCoupling::Independent(b) => b,
    };
    for d in [sigma, b_decomp] {
        if d.len() < n {
            return Err(Error::InsufficientLength {
                required: n,
                available: d.len(),
            });
        }
    }
    if (b_decomp.base().vector() - sigma.base().vector()).norm() > 1e-12 {
        return Err(Error::Config("both arms must share the base SOP".into()));
    }
    let s0 = sigma.base();
    let a = on_sphere(sigma, n)?;
    let b = on_sphere(b_decomp, n)?;
    let lags = &opts.lags;
    let span = opts.time_span;

    let chunks = opts.rotation_count.div_ceil(CHUNK);
    let run_chunk = |c: usize| -> Result<Partial> {
        let mut rng = stream(opts.seed, c as u64, Role::Measurement, Purpose::Oracle);
        let todo = CHUNK.min(opts.rotation_count - c * CHUNK);
        let mut part = Partial::new(lags.len());
        let mut e = vec![0.0; n];
        for _ in 0..todo {
            let mut draws = 0;
            let r = loop {
                let r = haar_rotation(&mut rng);
                if 1.0 + s0.dot(&r.apply(&s0)) >= opts.epsilon {
                    break r;
                }
                draws += 1;
                if draws >= MAX_SCRAMBLER_DRAWS {
                    return Err(Error::RejectionSaturated {
                        draws,
                        epsilon: opts.epsilon,
                    });
                }
            };
            part.rejected += draws;
            let m = r.matrix();
            for t in 0..n {
                let (sa, sb) = (&a[t], &b[t]);
                let rb = [
                    m[(0, 0)] * sb[0] + m[(0, 1)] * sb[1] + m[(0, 2)] * sb[2],
                    m[(1, 0)] * sb[0] + m[(1, 1)] * sb[1] + m[(1, 2)] * sb[2],
                    m[(2, 0)] * sb[0] + m[(2, 1)] * sb[1] + m[(2, 2)] * sb[2],
                ];
                let x = sa[0] * rb[0] + sa[1] * rb[1] + sa[2] * rb[2];
                e[t] = ((1.0 + x) / 2.0).max(0.0).sqrt();
            }
            let base = (1.0 + s0.dot(&r.apply(&s0))) / 2.0;
            for (k, &l) in lags.iter().enumerate() {
                let y = e[..span].iter().zip(&e[l..l + span]).map(|(u, v)| u * v).sum::<f64>() / span as f64;
                part.sum_y[k] += y;
                part.sum_y2[k] += y * y;
                part.sum_yb[k] += y * base;
            }
            part.sum_b += base;
            part.sum_b2 += base * base;
            part.sum_amp += (2.0 * base).sqrt();
            part.count += 1;
        }
        Ok(part)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let parts = pool.install(|| (0..chunks).into_par_iter().map(run_chunk).collect::<Result<Vec<_>>>())?;
    let mut total = Partial::new(lags.len());
    for p in &parts {
        total.merge(p);
    }

    let count = total.count as f64;
    let mean_b = total.sum_b / count;
    let var_b = ((total.sum_b2 / count - mean_b * mean_b) * count / (count - 1.0)).max(0.0);
    let sigma_acf = time_acf(sigma, lags, span);
    let sigma_acf = match coupling {
        ArmCoupling::SameProbe => sigma_acf,
        ArmCoupling::Independent(other) => sigma_acf
            .iter()
            .zip(time_acf(other, lags, span))
            .map(|(x, y)| 0.5 * (x + y))
            .collect(),
    };
    let mut report = OracleReport {
        lag_grid: lags.iter().map(|&l| l as f64 / sigma.sample_rate()).collect(),
        empirical_envelope: Vec::new(),
        predicted_envelope: sigma_acf.iter().map(|c| 0.5 + c / 3.0).collect(),
        sigma_acf,
        mc_stderr: Vec::new(),
        envelope_stderr: Vec::new(),
        tolerance: Vec::new(),
        relative_error: Vec::new(),
        max_relative_error: 0.0,
        within_tolerance: true,
        sample_count: total.count,
        rejected_count: total.rejected,
        epsilon_used: opts.epsilon,
        raw_baseline: mean_b,
        baseline_stderr: (var_b / count).sqrt(),
        mean_amplitude: total.sum_amp / count,
        effective_offset: 0.0,
        effective_slope: 0.0,
    };
    for k in 0..lags.len() {
        let mean_y = total.sum_y[k] / count;
        let var_y = ((total.sum_y2[k] / count - mean_y * mean_y) * count / (count - 1.0)).max(0.0);
        let cov = (total.sum_yb[k] / count - mean_y * mean_b) * count / (count - 1.0);
        let ratio = mean_y / mean_b;
        let var_lin = (var_y - 2.0 * ratio * cov + ratio * ratio * var_b).max(0.0);
        let envelope = 0.5 * ratio;
        let env_se = 0.5 * (var_lin / count).sqrt() / mean_b;
        let predicted = report.predicted_envelope[k];
        let tol = RELATIVE_TOLERANCE.max(3.0 * env_se / predicted);
        let rel = (envelope - predicted).abs() / predicted;
        report.empirical_envelope.push(envelope);
        report.mc_stderr.push((var_y / count).sqrt());
        report.envelope_stderr.push(env_se);
        report.tolerance.push(tol);
        report.relative_error.push(rel);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.within_tolerance &= rel <= tol;
    }
    let (c0, c1) = linear_fit(&report.sigma_acf, &report.empirical_envelope);
    report.effective_offset = c0;
    report.effective_slope = c1;
    Ok(report)
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1e-300) || sxx == 0.0 {
        return (my, 0.0);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Closed-form mean of `(1 + x)/2` for `x` uniform on `[−1 + ε, 1]`.
pub fn capped_baseline(epsilon: f64) -> f64 {
    0.5 + epsilon / 4.0
}

/// Closed-form mean of `√(1 + x)` for `x` uniform on `[−1 + ε, 1]`.
pub fn capped_mean_amplitude(epsilon: f64) -> f64 {
    (2.0 / 3.0) * (2f64.powf(1.5) - epsilon.powf(1.5)) / (2.0 - epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub rms_amplitude: f64,
    pub max_relative_error: f64,
    pub effective_slope: f64,
}

/// Oracle error as a function of perturbation strength. Every row uses the
/// same random numbers, so the perturbations differ only by scale.
pub fn first_order_validity(
    base: StokesVector,
    rms_amplitudes: &[f64],
    correlation_rate: f64,
    sample_rate: f64,
    opts: &OracleOptions,
) -> Result<Vec<ValidityRow>> {
    rms_amplitudes
        .iter()
        .map(|&rho| {
            if !(rho > 0.0 && rho <= 0.3) {
                return Err(Error::validation("oracle.rms_amplitudes", format!("{rho} is outside (0, 0.3]")));
            }
            let params = TangentNoiseParams::new(rho, correlation_rate)?;
            let sigma = ou_tangent_process(base, &params, sample_rate, opts.required_len(), opts.seed)?;
            let r = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, opts)?;
            Ok(ValidityRow {
                rms_amplitude: rho,
                max_relative_error: r.max_relative_error,
                effective_slope: r.effective_slope,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub epsilon: f64,
    pub raw_baseline: f64,
    pub baseline_stderr: f64,
    pub closed_form_baseline: f64,
    pub mean_amplitude: f64,
    pub closed_form_amplitude: f64,
    pub effective_offset: f64,
    pub effective_slope: f64,
}

/// Effective envelope coefficients as the excluded cap grows.
pub fn exclusion_sensitivity(sigma: &SopDecomposition, epsilons: &[f64], opts: &OracleOptions) -> Result<Vec<ExclusionRow>> {
    epsilons
        .iter()
        .map(|&eps| {
            let o = OracleOptions {
                epsilon: eps,
                ..opts.clone()
            };
            let r = mc_sphere_acf(sigma, ArmCoupling::SameProbe, &o)?;
            Ok(ExclusionRow {
                epsilon: eps,
                raw_baseline: r.raw_baseline,
                baseline_stderr: r.baseline_stderr,
                closed_form_baseline: capped_baseline(eps),
                mean_amplitude: r.mean_amplitude,
                closed_form_amplitude: capped_mean_amplitude(eps),
                effective_offset: r.effective_offset,
                effective_slope: r.effective_slope,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts() -> OracleOptions {
        OracleOptions {
            rotation_count: 4000,
            lags: vec![0, 8, 32],
            time_span: 512,
            ..OracleOptions::default()
        }
    }

    #[test]
    fn zero_perturbation_sits_on_the_baseline() {
        let d = SopDecomposition::zero(StokesVector::DIAGONAL, 600, 100e6).unwrap();
        let r = mc_sphere_acf(&d, ArmCoupling::SameProbe, &small_opts()).unwrap();
        for e in &r.empirical_envelope {
            assert!((e - 0.5).abs() < 1e-12);
        }
        assert!(r.mc_stderr.iter().all(|s| *s > 0.0));
        assert!((r.raw_baseline - capped_baseline(0.1)).abs() < 3.0 * r.baseline_stderr);
    }

    #[test]
    fn epsilon_two_is_rejected() {
        let d = SopDecomposition::zero(StokesVector::DIAGONAL, 600, 100e6).unwrap();
        let opts = OracleOptions {
            epsilon: 2.0,
            ..small_opts()
        };
        assert!(mc_sphere_acf(&d, ArmCoupling::SameProbe, &opts).unwrap_err().is_validation());
    }

    #[test]
    fn report_is_reproducible_across_worker_counts() {
        let p = TangentNoiseParams::default();
        let d = ou_tangent_process(StokesVector::HORIZONTAL, &p, 100e6, 600, 5).unwrap();
        let one = mc_sphere_acf(&d, ArmCoupling::SameProbe, &OracleOptions { workers: Some(1), ..small_opts() }).unwrap();
        let two = mc_sphere_acf(&d, ArmCoupling::SameProbe, &OracleOptions { workers: Some(2), ..small_opts() }).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn closed_forms_at_no_exclusion() {
        assert_eq!(capped_baseline(0.0), 0.5);
        assert!((capped_mean_amplitude(0.0) - 2f64.sqrt() * 2.0 / 3.0).abs() < 1e-15);
    }
}
