use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterConfig, ClusterMode, OfflineMethod};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolFlags {
    pub use_governance: bool,
    pub use_embedding: bool,
    pub use_memory: bool,
}

impl Default for ToolFlags {
    fn default() -> Self {
        Self { use_governance: true, use_embedding: true, use_memory: false }
    }
}

/// Remote-call behaviour; only the remote adapter reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { retries: 3, backoff_ms: 200, timeout_ms: 30_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: ClusterMode,
    pub delta: f64,
    pub m: usize,
    /// Judge confidence below this consults the governance tool.
    pub confidence_threshold: f64,
    pub governance_threshold: f64,
    pub tools: ToolFlags,
    pub seed: u64,
    pub offline_method: Option<OfflineMethod>,
    pub cap_k: usize,
    pub max_chunk: usize,
    pub anchors: usize,
    /// Representative examples attached to each evolved sub-issue.
    pub k_rep: usize,
    pub update_clusters: bool,
    /// Consecutive retryable failures treated as a backend outage.
    pub outage_after: usize,
    /// Memory-store namespace; defaults to the issue id.
    pub memory_namespace: Option<String>,
    pub retry: RetryConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let c = ClusterConfig::default();
        Self {
            mode: c.mode,
            delta: c.delta,
            m: c.m,
            confidence_threshold: 0.7,
            governance_threshold: 0.5,
            tools: ToolFlags::default(),
            seed: c.seed,
            offline_method: None,
            cap_k: c.cap_k,
            max_chunk: c.max_chunk,
            anchors: c.anchors,
            k_rep: 3,
            update_clusters: true,
            outage_after: 8,
            memory_namespace: None,
            retry: RetryConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Embedding-mode defaults with the matching tool flag.
    pub fn embedding() -> Self {
        Self::default()
    }

    pub fn memory() -> Self {
        Self {
            mode: ClusterMode::Memory,
            tools: ToolFlags { use_embedding: false, use_memory: true, ..ToolFlags::default() },
            ..Self::default()
        }
    }

    /// Switch mode and the corresponding tool flag together.
    pub fn with_mode(mut self, mode: ClusterMode) -> Self {
        self.mode = mode;
        if self.phase3_tool().is_some() {
            self.tools.use_embedding = mode == ClusterMode::Embedding;
            self.tools.use_memory = mode == ClusterMode::Memory;
        }
        self
    }

    /// The Phase-3 clustering mode, or `None` for the no-tools degraded mode.
    pub fn phase3_tool(&self) -> Option<ClusterMode> {
        match (self.tools.use_embedding, self.tools.use_memory) {
            (true, _) => Some(ClusterMode::Embedding),
            (false, true) => Some(ClusterMode::Memory),
            (false, false) => None,
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            mode: self.mode,
            delta: self.delta,
            m: self.m,
            offline_method: self.offline_method,
            seed: self.seed,
            cap_k: self.cap_k,
            max_chunk: self.max_chunk,
            anchors: self.anchors,
            update_clusters: self.update_clusters,
        }
    }

    pub fn namespace(&self, issue_id: &str) -> String {
        self.memory_namespace.clone().unwrap_or_else(|| issue_id.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("confidence_threshold", self.confidence_threshold), ("governance_threshold", self.governance_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.tools.use_embedding && self.tools.use_memory {
            return Err(Error::invalid("use_embedding and use_memory are mutually exclusive"));
        }
        if let Some(tool) = self.phase3_tool() {
            if tool != self.mode {
                return Err(Error::invalid(format!("mode {:?} does not match the enabled Phase-3 tool", self.mode)));
            }
            self.cluster_config().validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::memory().validate().unwrap();
        assert_eq!(PipelineConfig::default().confidence_threshold, 0.7);
    }

    #[test]
    fn both_phase3_tools_rejected() {
        let mut c = PipelineConfig::default();
        c.tools.use_memory = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_must_match_tool() {
        let c = PipelineConfig { mode: ClusterMode::Memory, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().with_mode(ClusterMode::Memory).validate().is_ok());
    }

    #[test]
    fn no_tools_mode() {
        let mut c = PipelineConfig::default();
        c.tools.use_embedding = false;
        assert_eq!(c.phase3_tool(), None);
        c.validate().unwrap();
    }
}
