use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::{AmProbe, PsiConfig, ScanConfig};
use crate::nldp::{LoadMode, SpanChainParams, TangentNoiseParams, WdmLoadSpec};
use crate::oracle::OracleOptions;
use crate::spectral::FitOptions;
use crate::stokes::StokesVector;

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "PSI_LAB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DistanceSweep,
    Btb,
    AmControl,
    LoadComparison,
    OracleSuite,
}

impl ScenarioKind {
    pub fn label(&self) -> &'static str {
        match self {
            ScenarioKind::DistanceSweep => "distance_sweep",
            ScenarioKind::Btb => "btb",
            ScenarioKind::AmControl => "am_control",
            ScenarioKind::LoadComparison => "load_comparison",
            ScenarioKind::OracleSuite => "oracle_suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub rms_amplitude: f64,
    pub correlation_rate: f64,
    /// Probe SOP the perturbation rides on; normalized on load.
    pub base_sop: [f64; 3],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let p = TangentNoiseParams::default();
        NoiseConfig {
            rms_amplitude: p.rms_amplitude,
            correlation_rate: p.correlation_rate,
            base_sop: [1.0, 0.0, 0.0],
        }
    }
}

impl NoiseConfig {
    pub fn params(&self) -> TangentNoiseParams {
        TangentNoiseParams {
            rms_amplitude: self.rms_amplitude,
            correlation_rate: self.correlation_rate,
        }
    }

    pub fn base(&self) -> Result<StokesVector> {
        let [a, b, c] = self.base_sop;
        StokesVector::unit(a, b, c).map_err(|e| Error::validation("noise.base_sop", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanSweepConfig {
    pub span_counts: Vec<usize>,
    /// Axis labeling only.
    pub km_per_span: f64,
    pub walkoff_delay: f64,
    pub per_span_weight: f64,
    /// Rescale every accumulated perturbation to the single-span rms.
    pub normalize: bool,
}

impl Default for SpanSweepConfig {
    fn default() -> Self {
        let c = SpanChainParams::default();
        SpanSweepConfig {
            span_counts: vec![1, 2, 5, 10, 20],
            km_per_span: 50.0,
            walkoff_delay: c.walkoff_delay,
            per_span_weight: c.per_span_weight,
            normalize: true,
        }
    }
}

impl SpanSweepConfig {
    pub fn chain(&self, span_count: usize) -> SpanChainParams {
        SpanChainParams {
            span_count,
            walkoff_delay: self.walkoff_delay,
            per_span_weight: self.per_span_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WdmConfig {
    pub load: WdmLoadSpec,
    /// Tangent rms contributed by each channel.
    pub amplitude_per_channel: f64,
    pub modes: Vec<LoadMode>,
    /// Grid bookkeeping, recorded in the summary only.
    pub channel_spacing_hz: f64,
    pub probe_gap_hz: f64,
}

impl Default for WdmConfig {
    fn default() -> Self {
        WdmConfig {
            load: WdmLoadSpec::default(),
            amplitude_per_channel: 0.005,
            modes: LoadMode::ALL.to_vec(),
            channel_spacing_hz: 62.5e9,
            probe_gap_hz: 125e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub fit: FitOptions,
    /// Carrier mask half-width in multiples of the RBW.
    pub mask_rbw_multiple: f64,
    /// Subtraction residual floor relative to the measured peak.
    pub clamp_fraction: f64,
    pub spike_threshold_db: f64,
    pub spike_orders: u32,
    /// Half-width of the band integrated for pedestal power, Hz.
    pub pedestal_half_band: f64,
    /// Half-width of the band compared against the reference floor, Hz.
    pub floor_half_band: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fit: FitOptions::default(),
            mask_rbw_multiple: 2.0,
            clamp_fraction: 1e-12,
            spike_threshold_db: 6.0,
            spike_orders: 2,
            pedestal_half_band: 5e6,
            floor_half_band: 1.1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub rotation_count: usize,
    pub epsilon: f64,
    /// Lags in samples.
    pub lags: Vec<usize>,
    pub time_span: usize,
    pub rms_amplitude: f64,
    /// Lorentzian FWHM of the perturbation, Hz.
    pub fwhm_hz: f64,
    pub validity_rms: Vec<f64>,
    pub validity_rotations: usize,
    pub epsilons: Vec<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let o = OracleOptions::default();
        OracleConfig {
            rotation_count: o.rotation_count,
            epsilon: o.epsilon,
            lags: o.lags,
            time_span: o.time_span,
            rms_amplitude: 0.05,
            fwhm_hz: 2e6,
            validity_rms: vec![0.01, 0.025, 0.05, 0.1, 0.2],
            validity_rotations: 20_000,
            epsilons: vec![0.0, 0.01, 0.1, 0.3, 0.5],
        }
    }
}

impl OracleConfig {
    pub fn options(&self, seed: u64, workers: Option<usize>) -> OracleOptions {
        OracleOptions {
            rotation_count: self.rotation_count,
            epsilon: self.epsilon,
            seed,
            lags: self.lags.clone(),
            time_span: self.time_span,
            workers,
        }
    }
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub psi: PsiConfig,
    #[serde(default = "ScanConfig::ci")]
    pub scan: ScanConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub spans: SpanSweepConfig,
    #[serde(default)]
    pub wdm: WdmConfig,
    #[serde(default)]
    pub am: AmProbe,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn under(prefix: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Validation { path, message } => Error::Validation {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => Error::validation(prefix, other.to_string()),
    }
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioConfig {
            kind,
            seed,
            output_dir: default_output_dir(),
            workers: None,
            psi: PsiConfig::default(),
            scan: ScanConfig::ci(),
            noise: NoiseConfig::default(),
            spans: SpanSweepConfig::default(),
            wdm: WdmConfig::default(),
            am: AmProbe::default(),
            analysis: AnalysisConfig::default(),
            oracle: OracleConfig::default(),
        }
    }

    /// Parses and validates a config; a relative `output_dir` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ScenarioConfig::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config is always representable as TOML")
    }

    /// Applies the worker-count override from the environment.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::validation(WORKERS_ENV, format!("expected a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::validation(WORKERS_ENV, "must be >= 1"));
            }
            self.workers = Some(n);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            return Err(Error::validation("workers", "must be >= 1"));
        }
        self.psi.validate()?;
        self.scan.validate(&self.psi)?;
        self.noise.params().validate().map_err(under("noise"))?;
        self.noise.base()?;
        if self.spans.span_counts.is_empty() || self.spans.span_counts.contains(&0) {
            return Err(Error::validation("spans.span_counts", "must be a non-empty list of counts >= 1"));
        }
        self.spans.chain(1).validate().map_err(under("spans"))?;
        if !(self.spans.km_per_span > 0.0) {
            return Err(Error::validation("spans.km_per_span", "must be > 0"));
        }
        self.wdm.load.validate().map_err(under("wdm.load"))?;
        if !(self.wdm.amplitude_per_channel >= 0.0 && self.wdm.amplitude_per_channel.is_finite()) {
            return Err(Error::validation("wdm.amplitude_per_channel", "must be >= 0"));
        }
        if self.wdm.modes.is_empty() {
            return Err(Error::validation("wdm.modes", "must not be empty"));
        }
        self.am.validate()?;
        let a = &self.analysis;
        if !(a.mask_rbw_multiple >= 0.0) {
            return Err(Error::validation("analysis.mask_rbw_multiple", "must be >= 0"));
        }
        if !(a.clamp_fraction >= 0.0 && a.clamp_fraction < 1.0) {
            return Err(Error::validation("analysis.clamp_fraction", "must lie in [0, 1)"));
        }
        if a.fit.max_iterations == 0 {
            return Err(Error::validation("analysis.fit.max_iterations", "must be >= 1"));
        }
        if !(a.fit.tolerance > 0.0) {
            return Err(Error::validation("analysis.fit.tolerance", "must be > 0"));
        }
        if a.fit.half_span.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::validation("analysis.fit.half_span", "must be > 0"));
        }
        if !(a.pedestal_half_band > 0.0) {
            return Err(Error::validation("analysis.pedestal_half_band", "must be > 0"));
        }
        if !(a.floor_half_band > 0.0) {
            return Err(Error::validation("analysis.floor_half_band", "must be > 0"));
        }
        self.oracle.options(self.seed, self.workers).validate()?;
        if !(self.oracle.fwhm_hz > 0.0) {
            return Err(Error::validation("oracle.fwhm_hz", "must be > 0"));
        }
        if !(0.0..=0.3).contains(&self.oracle.rms_amplitude) {
            return Err(Error::validation("oracle.rms_amplitude", "must lie in [0, 0.3]"));
        }
        if self.oracle.validity_rotations < 2 {
            return Err(Error::validation("oracle.validity_rotations", "must be >= 2"));
        }
        if let Some(r) = self.oracle.validity_rms.iter().find(|r| !(**r > 0.0 && **r <= 0.3)) {
            return Err(Error::validation("oracle.validity_rms", format!("{r} is outside (0, 0.3]")));
        }
        if let Some(e) = self.oracle.epsilons.iter().find(|e| !(0.0..2.0).contains(*e)) {
            return Err(Error::validation("oracle.epsilons", format!("{e} is outside [0, 2)")));
        }
        Ok(())
    }
}
