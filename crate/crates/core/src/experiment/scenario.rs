use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{AnalysisConfig, ScenarioConfig, ScenarioKind};
use super::manifest::{require_present, sha256_hex, Artifact, ArtifactKind, Manifest, MANIFEST_FILE};
use super::plot::plot_outputs;
use crate::error::{Error, Result};
use crate::instrument::{acquire, acquire_am};
use crate::nldp::{ou_tangent_process, LoadMode, PerturbationModel, TangentNoiseParams, WdmLoadSpec};
use crate::oracle::{exclusion_sensitivity, first_order_validity, mc_sphere_acf, ArmCoupling, OracleOptions};
use crate::rng::Role;
use crate::spectral::{
    detect_spikes, fit_lorentzian, fwhm_vs_distance, normalize_peak, pedestal_power, subtract_reference, CarrierMask,
    LorentzianFit, RfSpectrum, Spike,
};

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub summary: Value,
}

/// Writes artifacts into the output directory and remembers them, so a failed
/// run can remove what it wrote.
struct Output {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    artifacts: Vec<Artifact>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8], kind: ArtifactKind, label: &str) -> Result<&mut Artifact> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        std::fs::write(&path, bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            kind,
            label: label.to_string(),
            sha256: sha256_hex(bytes),
            rbw: None,
            scan_count: None,
            distance_km: None,
        });
        Ok(self.artifacts.last_mut().expect("just pushed"))
    }

    fn spectrum(&mut self, name: &str, s: &RfSpectrum, kind: ArtifactKind, label: &str) -> Result<&mut Artifact> {
        let a = self.write(name, s.to_csv().as_bytes(), kind, label)?;
        a.rbw = Some(s.rbw());
        a.scan_count = Some(s.scan_count());
        Ok(a)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T, kind: ArtifactKind, label: &str) -> Result<&mut Artifact> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, text.as_bytes(), kind, label)
    }

    fn cleanup(&self) {
        for p in self.written.iter().chain(std::iter::once(&self.dir.join(MANIFEST_FILE))) {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

/// Reference-subtracted spectrum and what is derived from it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub residual: RfSpectrum,
    pub mask: CarrierMask,
    pub fit: LorentzianFit,
    pub pedestal_power: f64,
}

/// Peak-normalizes both spectra, subtracts, masks the carrier, fits and
/// integrates the pedestal.
pub fn analyze_pair(
    measured: &RfSpectrum,
    reference: &RfSpectrum,
    carrier_hz: f64,
    analysis: &AnalysisConfig,
) -> Result<Analysis> {
    let residual = subtract_reference(&normalize_peak(measured)?, &normalize_peak(reference)?, analysis.clamp_fraction)?;
    analyze_residual(residual, carrier_hz, analysis)
}

fn analyze_residual(residual: RfSpectrum, carrier_hz: f64, analysis: &AnalysisConfig) -> Result<Analysis> {
    let mask = CarrierMask::at(carrier_hz, &residual, analysis.mask_rbw_multiple);
    let fit = fit_lorentzian(&residual, Some(&mask), &analysis.fit)?;
    let band = (carrier_hz - analysis.pedestal_half_band, carrier_hz + analysis.pedestal_half_band);
    let pedestal = pedestal_power(&residual, band, Some(&mask));
    Ok(Analysis {
        residual,
        mask,
        fit,
        pedestal_power: pedestal,
    })
}

fn fit_summary(a: &Analysis) -> Value {
    json!({
        "fwhm_hz": a.fit.fwhm_hz,
        "center_hz": a.fit.center_hz,
        "amplitude": a.fit.amplitude,
        "floor": a.fit.floor,
        "residual_rms": a.fit.residual_rms,
        "converged": a.fit.converged,
        "status": a.fit.status,
        "pedestal_power": a.pedestal_power,
    })
}

/// Runs a scenario end to end and writes its artifacts, summary, plots and
/// manifest into `cfg.output_dir`. On failure every file written by this run
/// is removed again.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut out = Output::create(&cfg.output_dir)?;
    match execute(cfg, &mut out) {
        Ok(report) => Ok(report),
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn execute(cfg: &ScenarioConfig, out: &mut Output) -> Result<RunReport> {
    out.write("config.toml", cfg.to_toml().as_bytes(), ArtifactKind::Config, "config")?;
    let summary = match cfg.kind {
        ScenarioKind::DistanceSweep => distance_sweep(cfg, out)?,
        ScenarioKind::Btb => btb(cfg, out)?,
        ScenarioKind::AmControl => am_control(cfg, out)?,
        ScenarioKind::LoadComparison => load_comparison(cfg, out)?,
        ScenarioKind::OracleSuite => oracle_suite(cfg, out)?,
    };
    out.json("summary.json", &summary, ArtifactKind::Summary, "summary")?;
    let mut manifest = Manifest {
        kind: cfg.kind,
        seed: cfg.seed,
        carrier_hz: cfg.psi.aom_frequency,
        plot_half_span_hz: cfg.analysis.pedestal_half_band,
        artifacts: out.artifacts.clone(),
    };
    let manifest_path = manifest.save(&out.dir)?;
    out.written.push(manifest_path.clone());
    for p in plot_outputs(&manifest, &out.dir)? {
        out.written.push(out.dir.join(&p.path));
        manifest.upsert(p);
    }
    manifest.save(&out.dir)?;
    Ok(RunReport {
        output_dir: out.dir.clone(),
        manifest_path,
        manifest,
        summary,
    })
}

fn reference(cfg: &ScenarioConfig) -> Result<RfSpectrum> {
    let model = PerturbationModel::Unperturbed {
        base: cfg.noise.base()?,
    };
    acquire(&model, &cfg.psi, &cfg.scan, cfg.seed, Role::Reference, cfg.workers)
}

fn measure(cfg: &ScenarioConfig, model: &PerturbationModel) -> Result<RfSpectrum> {
    acquire(model, &cfg.psi, &cfg.scan, cfg.seed, Role::Measurement, cfg.workers)
}

fn distance_sweep(cfg: &ScenarioConfig, out: &mut Output) -> Result<Value> {
    let base = cfg.noise.base()?;
    let params = cfg.noise.params();
    let carrier = cfg.psi.aom_frequency;
    let btb = reference(cfg)?;
    out.spectrum("btb.csv", &btb, ArtifactKind::Reference, "btb")?;
    let mut counts = cfg.spans.span_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let mut fits = Vec::new();
    let mut rows = Vec::new();
    for &n in &counts {
        let model = PerturbationModel::SpanChain {
            base,
            params,
            chain: cfg.spans.chain(n),
            normalize_to: cfg.spans.normalize.then_some(params.rms_amplitude),
        };
        let measured = measure(cfg, &model)?;
        let a = analyze_pair(&measured, &btb, carrier, &cfg.analysis)?;
        let km = n as f64 * cfg.spans.km_per_span;
        let label = format!("N={n}");
        out.spectrum(&format!("spectrum_n{n:02}.csv"), &measured, ArtifactKind::Spectrum, &label)?
            .distance_km = Some(km);
        out.spectrum(&format!("residual_n{n:02}.csv"), &a.residual, ArtifactKind::Residual, &label)?
            .distance_km = Some(km);
        out.json(&format!("fit_n{n:02}.json"), &a.fit.record(measured.scan_count()), ArtifactKind::Fit, &label)?
            .distance_km = Some(km);
        let mut row = fit_summary(&a);
        row["span_count"] = json!(n);
        row["distance_km"] = json!(km);
        rows.push(row);
        fits.push((km, a.fit));
    }
    let table = fwhm_vs_distance(&fits);
    out.write("fwhm_vs_distance.csv", table.to_csv().as_bytes(), ArtifactKind::Table, "fwhm_vs_distance")?;
    Ok(json!({
        "kind": cfg.kind.label(),
        "seed": cfg.seed,
        "scan_count": cfg.scan.scan_count,
        "walkoff_delay_s": cfg.spans.walkoff_delay,
        "spans": rows,
        "strictly_decreasing": table.is_strictly_decreasing(),
        "non_monotonic_rows": table.non_monotonic,
    }))
}

fn btb(cfg: &ScenarioConfig, out: &mut Output) -> Result<Value> {
    let model = PerturbationModel::Unperturbed {
        base: cfg.noise.base()?,
    };
    let measured = measure(cfg, &model)?;
    let btb = reference(cfg)?;
    let a = analyze_pair(&measured, &btb, cfg.psi.aom_frequency, &cfg.analysis)?;
    out.spectrum("measured.csv", &measured, ArtifactKind::Spectrum, "btb")?;
    out.spectrum("btb.csv", &btb, ArtifactKind::Reference, "btb")?;
    out.spectrum("residual.csv", &a.residual, ArtifactKind::Residual, "btb")?;
    out.json("fit.json", &a.fit.record(measured.scan_count()), ArtifactKind::Fit, "btb")?;
    Ok(json!({
        "kind": cfg.kind.label(),
        "seed": cfg.seed,
        "scan_count": cfg.scan.scan_count,
        "fit": fit_summary(&a),
        "degenerate": !a.fit.converged,
    }))
}

/// Largest and mean `|10·log10(a/b)|` over `[f₁, f₂]` outside the mask.
pub fn floor_deviation_db(a: &RfSpectrum, b: &RfSpectrum, band: (f64, f64), mask: &CarrierMask) -> Result<(f64, f64)> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let devs: Vec<f64> = (0..a.len())
        .filter(|&i| {
            let f = a.frequency(i);
            f >= band.0 && f <= band.1 && !mask.contains(f)
        })
        .map(|i| (10.0 * (a.power()[i] / b.power()[i]).log10()).abs())
        .collect();
    if devs.is_empty() {
        return Err(Error::InsufficientLength {
            required: 1,
            available: 0,
        });
    }
    let max = devs.iter().copied().fold(0.0, f64::max);
    Ok((max, devs.iter().sum::<f64>() / devs.len() as f64))
}

fn am_control(cfg: &ScenarioConfig, out: &mut Output) -> Result<Value> {
    let carrier = cfg.psi.aom_frequency;
    let am = acquire_am(&cfg.am, &cfg.psi, &cfg.scan, cfg.seed, cfg.workers)?;
    let btb = reference(cfg)?;
    let residual = subtract_reference(&am, &btb, cfg.analysis.clamp_fraction)?;
    out.spectrum("am.csv", &am, ArtifactKind::Spectrum, "am")?;
    out.spectrum("btb.csv", &btb, ArtifactKind::Reference, "am")?;
    out.spectrum("residual.csv", &residual, ArtifactKind::Residual, "am")?;
    let mask = CarrierMask::at(carrier, &am, cfg.analysis.mask_rbw_multiple);
    let half = cfg.analysis.floor_half_band;
    let (max_dev, mean_dev) = floor_deviation_db(&am, &btb, (carrier - half, carrier + half), &mask)?;
    let a = analyze_residual(residual, carrier, &cfg.analysis)?;
    out.json("fit.json", &a.fit.record(am.scan_count()), ArtifactKind::Fit, "am")?;
    Ok(json!({
        "kind": cfg.kind.label(),
        "seed": cfg.seed,
        "scan_count": cfg.scan.scan_count,
        "tone_hz": am.peak_frequency(),
        "second_harmonic_amplitude": cfg.am.harmonic_amplitude(2),
        "floor_band_hz": [carrier - half, carrier + half],
        "floor_deviation_db_max": max_dev,
        "floor_deviation_db_mean": mean_dev,
        "fit": fit_summary(&a),
    }))
}

/// Perturbation model of one WDM load mode.
pub fn load_model(cfg: &ScenarioConfig, mode: LoadMode) -> Result<PerturbationModel> {
    let base = cfg.noise.base()?;
    let spec = WdmLoadSpec {
        mode,
        ..cfg.wdm.load.clone()
    };
    Ok(PerturbationModel::Wdm {
        base,
        spec,
        amplitudes: vec![cfg.wdm.amplitude_per_channel],
    })
}

fn load_comparison(cfg: &ScenarioConfig, out: &mut Output) -> Result<Value> {
    let carrier = cfg.psi.aom_frequency;
    let frame_rate = cfg.wdm.load.frame_rate();
    let btb = reference(cfg)?;
    out.spectrum("btb.csv", &btb, ArtifactKind::Reference, "btb")?;
    let mut modes = Vec::new();
    let mut spikes_out: Vec<(String, Vec<Spike>)> = Vec::new();
    let mut power = std::collections::BTreeMap::new();
    for &mode in &cfg.wdm.modes {
        let label = mode.label();
        let measured = measure(cfg, &load_model(cfg, mode)?)?;
        let a = analyze_pair(&measured, &btb, carrier, &cfg.analysis)?;
        let spikes = detect_spikes(
            &a.residual,
            carrier,
            frame_rate,
            cfg.analysis.spike_orders,
            cfg.analysis.spike_threshold_db,
        )?;
        out.spectrum(&format!("load_{label}.csv"), &measured, ArtifactKind::Spectrum, label)?;
        out.spectrum(&format!("residual_{label}.csv"), &a.residual, ArtifactKind::Residual, label)?;
        out.json(&format!("fit_{label}.json"), &a.fit.record(measured.scan_count()), ArtifactKind::Fit, label)?;
        let mut row = fit_summary(&a);
        row["mode"] = json!(label);
        row["first_order_spikes"] = json!(spikes.iter().filter(|s| s.order.abs() == 1 && s.detected).count());
        modes.push(row);
        power.insert(label, a.pedestal_power);
        spikes_out.push((label.to_string(), spikes));
    }
    out.json("spikes.json", &spikes_out, ArtifactKind::Spikes, "spikes")?;
    let ratio = |a: &str, b: &str| match (power.get(a), power.get(b)) {
        (Some(x), Some(y)) if *y > 0.0 => Some(x / y),
        _ => None,
    };
    Ok(json!({
        "kind": cfg.kind.label(),
        "seed": cfg.seed,
        "scan_count": cfg.scan.scan_count,
        "channel_count": cfg.wdm.load.channel_count,
        "channel_spacing_hz": cfg.wdm.channel_spacing_hz,
        "probe_gap_hz": cfg.wdm.probe_gap_hz,
        "frame_rate_hz": frame_rate,
        "modes": modes,
        "correlated_over_decorrelated": ratio("correlated", "decorrelated"),
        "decorrelated_over_ase_db": ratio("decorrelated", "ase").map(|r| 10.0 * r.log10()),
    }))
}

fn oracle_suite(cfg: &ScenarioConfig, out: &mut Output) -> Result<Value> {
    let base = cfg.noise.base()?;
    let o = &cfg.oracle;
    let opts = o.options(cfg.seed, cfg.workers);
    let fs = cfg.scan.sample_rate;
    let params = TangentNoiseParams::with_fwhm(o.rms_amplitude, o.fwhm_hz)?;
    let len = opts.time_span + opts.lags.iter().copied().max().unwrap_or(0);
    let sigma = ou_tangent_process(base, &params, fs, len, cfg.seed)?;
    let report = mc_sphere_acf(&sigma, ArmCoupling::SameProbe, &opts)?;
    out.json("oracle_report.json", &report, ArtifactKind::Report, "oracle")?;
    let mut csv = String::from("lag_s,empirical,predicted,sigma_acf,envelope_stderr,tolerance\n");
    for k in 0..report.lag_grid.len() {
        csv.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e}\n",
            report.lag_grid[k],
            report.empirical_envelope[k],
            report.predicted_envelope[k],
            report.sigma_acf[k],
            report.envelope_stderr[k],
            report.tolerance[k]
        ));
    }
    out.write("oracle_envelope.csv", csv.as_bytes(), ArtifactKind::Table, "oracle_envelope")?;

    let side = OracleOptions {
        rotation_count: o.validity_rotations,
        ..opts.clone()
    };
    let validity = first_order_validity(base, &o.validity_rms, params.correlation_rate, fs, &side)?;
    let mut csv = String::from("rms_amplitude,max_relative_error,effective_slope\n");
    for r in &validity {
        csv.push_str(&format!("{},{:e},{:e}\n", r.rms_amplitude, r.max_relative_error, r.effective_slope));
    }
    out.write("first_order_validity.csv", csv.as_bytes(), ArtifactKind::Table, "first_order_validity")?;

    let exclusion = exclusion_sensitivity(&sigma, &o.epsilons, &side)?;
    let mut csv = String::from(
        "epsilon,raw_baseline,baseline_stderr,closed_form_baseline,mean_amplitude,closed_form_amplitude,effective_offset,effective_slope\n",
    );
    for r in &exclusion {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.epsilon,
            r.raw_baseline,
            r.baseline_stderr,
            r.closed_form_baseline,
            r.mean_amplitude,
            r.closed_form_amplitude,
            r.effective_offset,
            r.effective_slope
        ));
    }
    out.write("exclusion_sensitivity.csv", csv.as_bytes(), ArtifactKind::Table, "exclusion_sensitivity")?;
    Ok(json!({
        "kind": cfg.kind.label(),
        "seed": cfg.seed,
        "rotation_count": report.sample_count,
        "rejected_count": report.rejected_count,
        "epsilon": report.epsilon_used,
        "max_relative_error": report.max_relative_error,
        "within_tolerance": report.within_tolerance,
        "effective_offset": report.effective_offset,
        "effective_slope": report.effective_slope,
    }))
}

/// Fit results recomputed from an existing run directory.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRow {
    pub label: String,
    pub fwhm_hz: f64,
    pub converged: bool,
    pub pedestal_power: f64,
}

/// Re-runs subtraction, fitting and pedestal integration on the spectra of
/// a finished run, using the analysis settings stored with it, and adds
/// `analysis.json` to its manifest.
pub fn analyze_dir(dir: &Path) -> Result<Vec<AnalysisRow>> {
    let mut manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    require_present(&manifest, dir)?;
    let analysis = match manifest.find(ArtifactKind::Config, "config") {
        Some(a) => ScenarioConfig::from_toml(&std::fs::read_to_string(dir.join(&a.path))?)?.analysis,
        None => AnalysisConfig::default(),
    };
    let read = |a: &Artifact| RfSpectrum::read_csv(&dir.join(&a.path), a.rbw.unwrap_or(1.0), a.scan_count.unwrap_or(1));
    let reference = manifest
        .of_kind(ArtifactKind::Reference)
        .next()
        .ok_or_else(|| Error::Config("run has no reference spectrum to subtract".into()))?;
    let btb = read(reference)?;
    let mut rows = Vec::new();
    for s in manifest.of_kind(ArtifactKind::Spectrum) {
        let measured = read(s)?;
        let a = if manifest.kind == ScenarioKind::AmControl {
            analyze_residual(subtract_reference(&measured, &btb, analysis.clamp_fraction)?, manifest.carrier_hz, &analysis)?
        } else {
            analyze_pair(&measured, &btb, manifest.carrier_hz, &analysis)?
        };
        rows.push(AnalysisRow {
            label: s.label.clone(),
            fwhm_hz: a.fit.fwhm_hz,
            converged: a.fit.converged,
            pedestal_power: a.pedestal_power,
        });
    }
    let text = serde_json::to_string_pretty(&rows)? + "\n";
    std::fs::write(dir.join("analysis.json"), &text)?;
    manifest.upsert(Artifact {
        path: "analysis.json".into(),
        kind: ArtifactKind::Report,
        label: "analysis".into(),
        sha256: sha256_hex(text.as_bytes()),
        rbw: None,
        scan_count: None,
        distance_km: None,
    });
    manifest.save(dir)?;
    Ok(rows)
}
