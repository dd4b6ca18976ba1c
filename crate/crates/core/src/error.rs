use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate field: total power is zero")]
    DegenerateField,

    #[error("vector is not normalized (|s| = {norm})")]
    NotNormalized { norm: f64 },

    #[error("perturbation is not tangent to the base SOP (dot = {dot:e})")]
    NotTangent { dot: f64 },

    #[error("perturbation amplitude {amplitude} at sample {index} is out of range (must be < 1)")]
    Amplitude { index: usize, amplitude: f64 },

    #[error("sample rate {sample_rate} Hz aliases a process with rate {rate} 1/s")]
    Aliasing { sample_rate: f64, rate: f64 },

    #[error("trace of {available} samples is shorter than the required {required}")]
    InsufficientLength { required: usize, available: usize },

    #[error("trace of {available} samples cannot resolve {rbw} Hz (needs {required})")]
    Resolution {
        rbw: f64,
        required: usize,
        available: usize,
    },

    #[error("spectra are on different frequency grids")]
    GridMismatch,

    #[error("spectrum has no positive power")]
    ZeroSpectrum,

    #[error("antipodal exclusion rejected {draws} consecutive scrambler draws (epsilon = {epsilon})")]
    RejectionSaturated { draws: usize, epsilon: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("missing artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("plot rendering failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Config(_) | Error::Toml(_)
        )
    }
}
