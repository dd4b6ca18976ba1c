use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ScenarioKind;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Config,
    /// Scan-averaged spectrum of a transmission measurement.
    Spectrum,
    /// Scan-averaged spectrum of the back-to-back reference.
    Reference,
    /// Peak-normalized measurement minus peak-normalized reference.
    Residual,
    Fit,
    Table,
    Spikes,
    Report,
    Summary,
    Plot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub kind: ArtifactKind,
    pub label: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
}

/// Every file a run produced, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub carrier_hz: f64,
    /// Half-width of the frequency window shown in plots, Hz.
    pub plot_half_span_hz: f64,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn of_kind(&self, kind: ArtifactKind) -> impl Iterator<Item = &Artifact> {
        self.artifacts.iter().filter(move |a| a.kind == kind)
    }

    pub fn find(&self, kind: ArtifactKind, label: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.kind == kind && a.label == label)
    }

    /// Artifacts other than plots whose files are absent from `dir`.
    pub fn missing(&self, dir: &Path) -> Vec<PathBuf> {
        self.artifacts
            .iter()
            .filter(|a| a.kind != ArtifactKind::Plot)
            .map(|a| dir.join(&a.path))
            .filter(|p| !p.is_file())
            .collect()
    }

    /// Artifacts whose file content no longer matches the recorded hash.
    pub fn verify_hashes(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let bytes = std::fs::read(dir.join(&a.path))?;
            if sha256_hex(&bytes) != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }

    /// Replaces any entry with the same path, otherwise appends.
    pub fn upsert(&mut self, artifact: Artifact) {
        match self.artifacts.iter_mut().find(|a| a.path == artifact.path) {
            Some(slot) => *slot = artifact,
            None => self.artifacts.push(artifact),
        }
    }
}

pub(crate) fn require_present(manifest: &Manifest, dir: &Path) -> Result<()> {
    if manifest.artifacts.is_empty() {
        return Err(Error::Config("manifest lists no artifacts".into()));
    }
    let missing = manifest.missing(dir);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArtifacts(missing))
    }
}
