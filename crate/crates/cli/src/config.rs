//! Effective configuration: CLI flags over the TOML file over defaults.

use std::path::Path;

use anyhow::Context;
use radar_core::clustering::{ClusterMode, OfflineMethod};
use radar_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic test doubles keyed on the corpus gold labels.
    Mock,
    /// HTTP adapter speaking the remote wire format.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of the remote adapter. The API key is read from the
    /// environment only.
    pub url: Option<String>,
    /// Probability that the mock judge flips a decision. Unset falls back to
    /// the sidecar's `noise_rate`, then to 0.
    pub judge_noise: Option<f64>,
    pub noise_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { kind: BackendKind::Mock, url: None, judge_noise: None, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
}

/// Flag overrides. `None` keeps the file or default value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Phase-3 clustering mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Assignment threshold on cosine similarity.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Number of new sub-issues sought by offline clustering.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub offline_method: Option<OfflineArg>,
    /// Disable the governance tool in the coverage check.
    #[arg(long)]
    pub no_governance: bool,
    /// Run Phase 3 without clustering tools (judge novelty calls only).
    #[arg(long)]
    pub no_cluster_tools: bool,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub judge_noise: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Embedding,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OfflineArg {
    Kmeans,
    Hierarchical,
    Judge,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::validation)?;
        toml::from_str(&text).map_err(|e| Failure::validation(anyhow::anyhow!("config {}: {e}", path.display())).into())
    }

    pub fn apply(&mut self, o: &Overrides) {
        let p = &mut self.pipeline;
        if let Some(mode) = o.mode {
            let mode = match mode {
                ModeArg::Embedding => ClusterMode::Embedding,
                ModeArg::Memory => ClusterMode::Memory,
            };
            *p = p.clone().with_mode(mode);
        }
        if let Some(d) = o.delta {
            p.delta = d;
        }
        if let Some(m) = o.m {
            p.m = m;
        }
        if let Some(s) = o.seed {
            p.seed = s;
        }
        if let Some(method) = o.offline_method {
            p.offline_method = Some(match method {
                OfflineArg::Kmeans => OfflineMethod::Kmeans,
                OfflineArg::Hierarchical => OfflineMethod::Hierarchical,
                OfflineArg::Judge => OfflineMethod::Judge,
            });
        }
        if o.no_governance {
            p.tools.use_governance = false;
        }
        if o.no_cluster_tools {
            p.tools.use_embedding = false;
            p.tools.use_memory = false;
        }
        let b = &mut self.backend;
        if let Some(kind) = o.backend {
            b.kind = kind;
        }
        if let Some(url) = &o.backend_url {
            b.url = Some(url.clone());
        }
        if let Some(n) = o.judge_noise {
            b.judge_noise = Some(n);
        }
        if let Some(s) = o.noise_seed {
            b.noise_seed = s;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.pipeline.validate()?;
        if self.backend.judge_noise.is_some_and(|n| !(0.0..=1.0).contains(&n)) {
            return Err(Failure::validation(anyhow::anyhow!("judge_noise must lie in [0, 1]")).into());
        }
        if self.backend.kind == BackendKind::Remote && self.backend.url.is_none() {
            return Err(Failure::validation(anyhow::anyhow!("the remote backend needs backend.url or --backend-url")).into());
        }
        Ok(())
    }
}
