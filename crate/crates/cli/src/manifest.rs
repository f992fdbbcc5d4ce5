//! Run manifests and content-addressed output writing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Incomplete,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub status: RunStatus,
    pub exit_code: u8,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u64,
    /// Effective configuration after flags, file and defaults were merged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub inputs: BTreeMap<String, FileRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_version_in: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_version_out: Option<u32>,
    pub outputs: BTreeMap<String, FileRecord>,
    pub tool_calls: BTreeMap<String, u64>,
    /// Per-phase wall-clock timings in milliseconds.
    pub timings_ms: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        let now = timestamp(Utc::now());
        Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            command: command.to_string(),
            status: RunStatus::Ok,
            exit_code: 0,
            started_at: now.clone(),
            finished_at: now,
            elapsed_ms: 0,
            config: None,
            inputs: BTreeMap::new(),
            policy_version_in: None,
            policy_version_out: None,
            outputs: BTreeMap::new(),
            tool_calls: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            error: None,
        }
    }

    pub fn finish(&mut self, started: std::time::Instant) {
        self.finished_at = timestamp(Utc::now());
        self.elapsed_ms = started.elapsed().as_millis() as u64;
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An input file read once, so the recorded hash is the hash of exactly the
/// bytes that were parsed.
pub struct Input {
    pub text: String,
    pub record: FileRecord,
}

pub fn read_input(path: &Path) -> anyhow::Result<Input> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let record = FileRecord { path: path.to_path_buf(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 };
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    Ok(Input { text, record })
}

/// Files staged in memory and written together once a command has
/// succeeded, so a failed run leaves nothing but its error manifest.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), path, contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, path: PathBuf, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.add(name, path, text);
        Ok(())
    }

    pub fn write_all(self, manifest: &mut RunManifest) -> anyhow::Result<()> {
        for (name, path, bytes) in self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            manifest.outputs.insert(name, FileRecord { path, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        Ok(())
    }
}
