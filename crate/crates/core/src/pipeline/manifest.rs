use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Cached,
    /// Ran, but the input admits nothing to compute (e.g. "degenerate: no extrema").
    Degenerate(String),
    Failed(String),
    Skipped(String),
}

impl StageStatus {
    /// Artifacts on disk are usable downstream.
    pub fn is_done(&self) -> bool {
        matches!(self, StageStatus::Completed | StageStatus::Cached | StageStatus::Degenerate(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub stage_hash: String,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub seconds: f64,
    /// Stage-level acceptance checks.
    pub checks: BTreeMap<String, bool>,
    pub solves: usize,
}

impl StageRecord {
    pub fn checks_pass(&self) -> bool {
        self.status.is_done() && self.checks.values().all(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub software_version: String,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn total_solves(&self) -> usize {
        self.stages.iter().map(|r| r.solves).sum()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|_| Error::MissingArtifact(p.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    /// Every referenced artifact exists (JSON ones must parse) and stages
    /// appear after their dependencies.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (pos, r) in self.stages.iter().enumerate() {
            for dep in r.stage.depends_on() {
                if let Some(dp) = self.stages.iter().position(|q| q.stage == *dep) {
                    if dp > pos {
                        return Err(Error::Format(format!("stage {} listed before {}", r.stage.name(), dep.name())));
                    }
                }
            }
            if !r.status.is_done() {
                continue;
            }
            for a in &r.artifacts {
                let p = dir.join(a);
                if !p.is_file() {
                    return Err(Error::MissingArtifact(p.display().to_string()));
                }
                if a.ends_with(".json") {
                    let text = std::fs::read_to_string(&p)?;
                    serde_json::from_str::<serde_json::Value>(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                }
            }
        }
        Ok(())
    }
}
