//! Run manifest, artifact bookkeeping and hash-based stage reuse.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = concat!("tsxplain ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    /// Inputs unchanged since the previous run; artifacts reused.
    Cached,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    /// Hash of the stage's configuration and upstream inputs.
    pub input_hash: String,
    pub wall_clock_ms: u64,
    pub artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String, master_seed: u64) -> Self {
        Self { tool_version: TOOL_VERSION.into(), config_hash, master_seed, stages: Vec::new() }
    }

    /// Every artifact emitted by a completed or cached stage.
    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.stages.iter().filter(|s| s.is_ok()).flat_map(|s| &s.artifacts)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().rev().find(|s| s.name == name)
    }

    pub fn completed_stages(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.is_ok())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let s = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| PipelineError::io(&path, e))
    }
}

impl StageRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, StageStatus::Completed | StageStatus::Cached)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Collects the files a stage writes.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    written: Vec<Artifact>,
}

impl ArtifactWriter {
    fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), written: Vec::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        self.written.retain(|a| a.path != rel);
        self.written.push(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    /// Records a file some other component already wrote under the root.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        self.written.retain(|a| a.path != rel);
        self.written.push(Artifact { path: rel.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s)
    }

    /// Renders through a `Write` callback into memory, then stores the bytes.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> tsxplain::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, buf)
    }
}

/// The output directory of one run, with the previous run's manifest for
/// reuse decisions.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    previous: Option<RunManifest>,
    pub manifest: RunManifest,
}

impl Workspace {
    pub fn open(root: &Path, config_hash: String, master_seed: u64) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
        let previous = RunManifest::load(root).ok();
        Ok(Self { root: root.to_path_buf(), previous, manifest: RunManifest::new(config_hash, master_seed) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn reusable(&self, name: &str, input_hash: &str) -> Option<Vec<Artifact>> {
        let prev = self.previous.as_ref()?.stage(name)?;
        if !prev.is_ok() || prev.input_hash != input_hash {
            return None;
        }
        let intact = prev
            .artifacts
            .iter()
            .all(|a| fs::read(self.root.join(&a.path)).map(|b| sha256_hex(&b) == a.sha256).unwrap_or(false));
        intact.then(|| prev.artifacts.clone())
    }

    /// Runs a stage, or reloads its outputs when the previous run recorded the
    /// same input hash and every artifact is still on disk unchanged.
    pub fn stage<R>(
        &mut self,
        name: &str,
        input_hash: String,
        compute: impl FnOnce(&mut ArtifactWriter) -> Result<R>,
        reload: impl FnOnce(&Path) -> Result<R>,
    ) -> Result<R> {
        let start = Instant::now();
        if let Some(artifacts) = self.reusable(name, &input_hash) {
            if let Ok(r) = reload(&self.root) {
                self.push(name, StageStatus::Cached, input_hash, start, artifacts, None);
                return Ok(r);
            }
        }
        let mut w = ArtifactWriter::new(&self.root);
        match compute(&mut w) {
            Ok(r) => {
                self.push(name, StageStatus::Completed, input_hash, start, w.written, None);
                Ok(r)
            }
            Err(e) => {
                self.push(name, StageStatus::Failed, input_hash, start, w.written, Some(e.to_string()));
                Err(PipelineError::Stage { stage: name.to_string(), source: Box::new(e) })
            }
        }
    }

    pub fn skip(&mut self, name: &str, reason: &str) {
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status: StageStatus::Skipped,
            input_hash: String::new(),
            wall_clock_ms: 0,
            artifacts: Vec::new(),
            error: Some(reason.into()),
        });
    }

    fn push(
        &mut self,
        name: &str,
        status: StageStatus,
        input_hash: String,
        start: Instant,
        artifacts: Vec<Artifact>,
        error: Option<String>,
    ) {
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status,
            input_hash,
            wall_clock_ms: start.elapsed().as_millis() as u64,
            artifacts,
            error,
        });
    }

    pub fn save(&self) -> Result<()> {
        self.manifest.save(&self.root)
    }
}
