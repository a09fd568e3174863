//! Sweep manifest: per-run status, config hashes, artifact paths, and LLM
//! accounting. Completed runs are skipped on resume unless forced.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    /// Grid-cell coordinates, e.g. {"k": 3, "dlc": 1}.
    pub cell: BTreeMap<String, serde_json::Value>,
    pub record_path: String,
    pub metrics_path: String,
    pub wall_time_secs: f64,
    pub llm_prompt_tokens: u64,
    pub llm_completion_tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = Self::path_in(dir);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::write(Self::path_in(dir), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn find(&self, run_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.run_id == run_id)
    }

    /// A run is skippable when a previous entry completed with the same
    /// config hash.
    pub fn completed(&self, run_id: &str, config_hash: &str) -> bool {
        self.find(run_id)
            .map(|e| e.status == RunStatus::Done && e.config_hash == config_hash)
            .unwrap_or(false)
    }

    pub fn upsert(&mut self, entry: ManifestEntry) {
        if let Some(existing) = self.entries.iter_mut().find(|e| e.run_id == entry.run_id) {
            *existing = entry;
        } else {
            self.entries.push(entry);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(run_id: &str, status: RunStatus) -> ManifestEntry {
        ManifestEntry {
            run_id: run_id.into(),
            status,
            config_hash: "abc".into(),
            seed: 8,
            cell: BTreeMap::new(),
            record_path: format!("{run_id}/episode.jsonl"),
            metrics_path: format!("{run_id}/metrics.json"),
            wall_time_secs: 0.1,
            llm_prompt_tokens: 0,
            llm_completion_tokens: 0,
            error: None,
        }
    }

    #[test]
    fn roundtrip_and_resume_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::default();
        manifest.upsert(entry("a", RunStatus::Done));
        manifest.upsert(entry("b", RunStatus::Failed));
        manifest.save(dir.path()).unwrap();

        let loaded = RunManifest::load(dir.path()).unwrap();
        assert!(loaded.completed("a", "abc"));
        assert!(!loaded.completed("a", "different-config"));
        assert!(!loaded.completed("b", "abc"));
        assert!(!loaded.completed("c", "abc"));
    }

    #[test]
    fn upsert_replaces_by_run_id() {
        let mut manifest = RunManifest::default();
        manifest.upsert(entry("a", RunStatus::Running));
        manifest.upsert(entry("a", RunStatus::Done));
        assert_eq!(manifest.entries.len(), 1);
        assert_eq!(manifest.entries[0].status, RunStatus::Done);
    }
}
