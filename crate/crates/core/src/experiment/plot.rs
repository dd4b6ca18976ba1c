use std::path::Path;

use plotters::prelude::*;

use super::config::ScenarioKind;
use super::manifest::{require_present, sha256_hex, Artifact, ArtifactKind, Manifest};
use crate::error::{Error, Result};
use crate::spectral::{lorentzian, normalize_peak, FitRecord, RfSpectrum, Spike};

const SIZE: (u32, u32) = (960, 600);
const DB_RANGE: f64 = 90.0;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

struct Trace {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Marker {
    x: f64,
    y: f64,
}

fn db(p: f64) -> f64 {
    10.0 * p.max(1e-30).log10()
}

fn read_spectrum(dir: &Path, a: &Artifact) -> Result<RfSpectrum> {
    RfSpectrum::read_csv(&dir.join(&a.path), a.rbw.unwrap_or(1.0), a.scan_count.unwrap_or(1))
}

fn read_fit(dir: &Path, manifest: &Manifest, label: &str) -> Result<Option<FitRecord>> {
    match manifest.find(ArtifactKind::Fit, label) {
        Some(a) => Ok(Some(serde_json::from_str(&std::fs::read_to_string(dir.join(&a.path))?)?)),
        None => Ok(None),
    }
}

fn windowed(s: &RfSpectrum, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    (0..s.len())
        .map(|i| (s.frequency(i), s.power()[i]))
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .map(|(f, p)| (f / 1e6, db(p)))
        .collect()
}

fn fit_curve(fit: &FitRecord, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    (0..=400)
        .map(|k| {
            let f = lo + (hi - lo) * k as f64 / 400.0;
            (f / 1e6, db(lorentzian(fit.amplitude, fit.center_hz, fit.fwhm_hz, fit.floor, f)))
        })
        .collect()
}

fn spectrum_panel(path: &Path, title: &str, traces: &[Trace], markers: &[Marker]) -> Result<()> {
    let (mut x0, mut x1, mut top) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in traces.iter().flat_map(|t| &t.points) {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        top = top.max(*y);
    }
    if !x0.is_finite() || x1 <= x0 {
        return Err(Error::Plot(format!("nothing to draw for {title}")));
    }
    let top = (top / 10.0).ceil() * 10.0 + 5.0;
    let bottom = top - DB_RANGE;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, bottom..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Frequency (MHz)")
        .y_desc("Relative PSD (dB)")
        .draw()
        .map_err(plot_err)?;
    for (i, t) in traces.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts = t.points.iter().map(|&(x, y)| (x, y.max(bottom)));
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(1)))
            .map_err(plot_err)?
            .label(t.label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if !markers.is_empty() {
        chart
            .draw_series(markers.iter().map(|m| Circle::new((m.x, m.y.max(bottom)), 5, BLACK.stroke_width(2))))
            .map_err(plot_err)?
            .label("frame spikes")
            .legend(|(x, y)| Circle::new((x + 10, y), 5, BLACK.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn xy_panel(path: &Path, title: &str, x_desc: &str, y_desc: &str, traces: &[Trace], log_axes: bool) -> Result<()> {
    let all: Vec<(f64, f64)> = traces.iter().flat_map(|t| t.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::Plot(format!("nothing to draw for {title}")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(70);
    macro_rules! finish {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
            for (i, t) in traces.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(t.points.iter().copied(), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(t.label.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
                chart
                    .draw_series(t.points.iter().map(|&p| Circle::new(p, 4, color.filled())))
                    .map_err(plot_err)?;
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }};
    }
    if log_axes {
        finish!(builder
            .build_cartesian_2d((x0 / 1.5..x1 * 1.5).log_scale(), (y0 / 1.5..y1 * 1.5).log_scale())
            .map_err(plot_err)?);
    } else {
        let pad = 0.05 * (y1 - y0).max(1e-12);
        finish!(builder.build_cartesian_2d(x0..x1, y0 - pad..y1 + pad).map_err(plot_err)?);
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_artifact(dir: &Path, name: &str, label: &str) -> Result<Artifact> {
    let bytes = std::fs::read(dir.join(name))?;
    Ok(Artifact {
        path: name.to_string(),
        kind: ArtifactKind::Plot,
        label: label.to_string(),
        sha256: sha256_hex(&bytes),
        rbw: None,
        scan_count: None,
        distance_km: None,
    })
}

/// Residual spectra with their fits, in dB relative to the carrier.
fn residual_traces(dir: &Path, manifest: &Manifest, lo: f64, hi: f64) -> Result<Vec<Trace>> {
    let mut traces = Vec::new();
    for a in manifest.of_kind(ArtifactKind::Residual) {
        let s = read_spectrum(dir, a)?;
        traces.push(Trace {
            label: a.label.clone(),
            points: windowed(&s, lo, hi),
        });
        if let Some(fit) = read_fit(dir, manifest, &a.label)? {
            if fit.converged {
                traces.push(Trace {
                    label: format!("{} fit, FWHM {:.2} MHz", a.label, fit.fwhm_hz / 1e6),
                    points: fit_curve(&fit, lo, hi),
                });
            }
        }
    }
    Ok(traces)
}

/// Renders the plots for a run described by `manifest` into `dir` and returns
/// their manifest entries.
pub fn plot_outputs(manifest: &Manifest, dir: &Path) -> Result<Vec<Artifact>> {
    require_present(manifest, dir)?;
    let lo = manifest.carrier_hz - manifest.plot_half_span_hz;
    let hi = manifest.carrier_hz + manifest.plot_half_span_hz;
    let mut made = Vec::new();
    match manifest.kind {
        ScenarioKind::DistanceSweep => {
            let traces = residual_traces(dir, manifest, lo, hi)?;
            spectrum_panel(&dir.join("spectra.svg"), "Residual pedestal vs span count", &traces, &[])?;
            made.push(plot_artifact(dir, "spectra.svg", "spectra")?);
            let table = manifest
                .find(ArtifactKind::Table, "fwhm_vs_distance")
                .ok_or_else(|| Error::MissingArtifacts(vec![dir.join("fwhm_vs_distance.csv")]))?;
            let points = read_distance_table(&dir.join(&table.path))?;
            let trace = Trace {
                label: "fitted FWHM".into(),
                points: points.iter().map(|&(d, g)| (d, g / 1e6)).collect(),
            };
            xy_panel(
                &dir.join("fwhm_vs_distance.svg"),
                "Pedestal FWHM vs distance",
                "Distance (km)",
                "FWHM (MHz)",
                &[trace],
                true,
            )?;
            made.push(plot_artifact(dir, "fwhm_vs_distance.svg", "fwhm_vs_distance")?);
        }
        ScenarioKind::Btb | ScenarioKind::AmControl => {
            let mut traces = Vec::new();
            for (kind, name) in [(ArtifactKind::Spectrum, "measured"), (ArtifactKind::Reference, "btb")] {
                for a in manifest.of_kind(kind) {
                    let s = read_spectrum(dir, a)?;
                    let s = if manifest.kind == ScenarioKind::AmControl { s } else { normalize_peak(&s)? };
                    traces.push(Trace {
                        label: format!("{name} ({})", a.label),
                        points: windowed(&s, lo, hi),
                    });
                }
            }
            traces.extend(residual_traces(dir, manifest, lo, hi)?);
            let title = if manifest.kind == ScenarioKind::Btb {
                "Back-to-back reference"
            } else {
                "Intensity-modulated control"
            };
            spectrum_panel(&dir.join("spectra.svg"), title, &traces, &[])?;
            made.push(plot_artifact(dir, "spectra.svg", "spectra")?);
        }
        ScenarioKind::LoadComparison => {
            let mut traces = Vec::new();
            let mut markers = Vec::new();
            let spikes: Vec<(String, Vec<Spike>)> = match manifest.find(ArtifactKind::Spikes, "spikes") {
                Some(a) => serde_json::from_str(&std::fs::read_to_string(dir.join(&a.path))?)?,
                None => Vec::new(),
            };
            for a in manifest.of_kind(ArtifactKind::Residual) {
                let s = read_spectrum(dir, a)?;
                for (_, list) in spikes.iter().filter(|(l, _)| *l == a.label) {
                    for sp in list.iter().filter(|sp| sp.detected) {
                        let i = s.bin_of(sp.frequency_hz);
                        markers.push(Marker {
                            x: s.frequency(i) / 1e6,
                            y: db(s.power()[i]),
                        });
                    }
                }
                traces.push(Trace {
                    label: format!("{} load", a.label),
                    points: windowed(&s, lo, hi),
                });
            }
            spectrum_panel(&dir.join("load_comparison.svg"), "Pedestal by load type", &traces, &markers)?;
            made.push(plot_artifact(dir, "load_comparison.svg", "load_comparison")?);
        }
        ScenarioKind::OracleSuite => {
            let table = manifest
                .find(ArtifactKind::Table, "oracle_envelope")
                .ok_or_else(|| Error::MissingArtifacts(vec![dir.join("oracle_envelope.csv")]))?;
            let rows = read_columns(&dir.join(&table.path), 3)?;
            let to_ns = |col: usize| rows.iter().map(|r| (r[0] * 1e9, r[col])).collect::<Vec<_>>();
            let traces = [
                Trace {
                    label: "sphere average".into(),
                    points: to_ns(1),
                },
                Trace {
                    label: "1/2 + C/3".into(),
                    points: to_ns(2),
                },
            ];
            xy_panel(
                &dir.join("oracle_envelope.svg"),
                "Envelope autocorrelation",
                "Lag (ns)",
                "Normalized envelope ACF",
                &traces,
                false,
            )?;
            made.push(plot_artifact(dir, "oracle_envelope.svg", "oracle_envelope")?);
        }
    }
    Ok(made)
}

fn read_columns(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    std::fs::read_to_string(path)?
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: Vec<f64> = l.split(',').take(columns).filter_map(|v| v.trim().parse().ok()).collect();
            if row.len() == columns {
                Ok(row)
            } else {
                Err(Error::Config(format!("malformed row in {}: {l}", path.display())))
            }
        })
        .collect()
}

fn read_distance_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(read_columns(path, 2)?.into_iter().map(|r| (r[0], r[1])).collect())
}

/// Re-renders the plots of the run whose manifest is at `path` and records
/// them in the manifest.
pub fn plot_manifest(path: &Path) -> Result<Vec<Artifact>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::load(path)?;
    let made = plot_outputs(&manifest, dir)?;
    for a in &made {
        manifest.upsert(a.clone());
    }
    manifest.save(dir)?;
    Ok(made)
}
