//! Artifact files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use dfrc_core::ScenarioConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One written file and what produced it.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub algorithm: String,
    pub mode: String,
    pub sweep_key: Option<String>,
    pub sweep_value: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub final_objective: Option<f64>,
    pub note: Option<String>,
}

#[derive(Serialize)]
pub struct RunInfo {
    pub experiment: String,
    pub algorithms: Vec<String>,
    pub mode: Option<String>,
    pub sweep: Option<Vec<f64>>,
    pub trials: usize,
    pub channels: usize,
    pub seed: u64,
    pub monte_carlo_seed: u64,
    pub jobs: usize,
    pub small: bool,
    pub config_hash: String,
    pub dfrc_version: String,
    /// False when any solver stopped on its iteration cap.
    pub all_converged: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    scenario: &'a ScenarioConfig,
    artifacts: Vec<ArtifactRecord>,
}

/// First 16 hex digits of the SHA-256 of the canonical TOML form.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub struct Output {
    dir: PathBuf,
    header: String,
    records: Mutex<Vec<ArtifactRecord>>,
}

impl Output {
    pub fn new(dir: &Path, experiment: &str, seed: u64, hash: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# dfrc experiment={experiment} seed={seed} config_hash={hash}\n"),
            records: Mutex::new(Vec::new()),
        })
    }

    /// Writes `body` (a header row plus data) behind the seed/hash comment line.
    pub fn write(&self, record: ArtifactRecord, body: &str) -> anyhow::Result<()> {
        let path = self.dir.join(&record.file);
        let mut text = self.header.clone();
        text.push_str(body);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.records.lock().expect("record lock").push(record);
        Ok(())
    }

    /// Records a run that produced no file, such as a failed design.
    pub fn record(&self, record: ArtifactRecord) {
        self.records.lock().expect("record lock").push(record);
    }

    pub fn finish(&self, mut run: RunInfo, scenario: &ScenarioConfig) -> anyhow::Result<PathBuf> {
        let mut artifacts = self.records.lock().expect("record lock").clone();
        artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        run.all_converged = artifacts.iter().all(|a| a.converged != Some(false));
        let manifest = Manifest { run, scenario, artifacts };
        let text = toml::to_string(&manifest).context("serializing manifest")?;
        let path = self.dir.join("manifest.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
