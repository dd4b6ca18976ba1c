//! Scenario configuration, end-to-end runs, artifacts and plots.

mod config;
mod manifest;
mod plot;
mod scenario;
mod verify;

pub use config::{
    AnalysisConfig, NoiseConfig, OracleConfig, ScenarioConfig, ScenarioKind, SpanSweepConfig, WdmConfig, WORKERS_ENV,
};
pub use manifest::{sha256_hex, Artifact, ArtifactKind, Manifest, MANIFEST_FILE};
pub use plot::{plot_manifest, plot_outputs};
pub use scenario::{analyze_dir, analyze_pair, floor_deviation_db, load_model, run_scenario, Analysis, AnalysisRow, RunReport};
pub use verify::{estimator_calibration, field_equivalence, oracle, run_checks, wiener_khinchin, Check};
