//! Contracts for the model-shaped dependencies of the pipeline: the judge
//! (an LLM-style agent), the governance classifier, the embedder and the
//! long-term memory store.
//!
//! Every pipeline call goes through [`Backends`], which counts calls per
//! operation so runs can report their tool usage.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{ItemView, PolicyDoc};

mod embed;
mod memory;
#[cfg(feature = "mock")]
mod mock;
pub mod remote;

pub use embed::{HashEmbedder, PlantedEmbedder};
pub use memory::InMemoryStore;
#[cfg(feature = "mock")]
pub use mock::{MockGovernance, MockJudge, MockOracle, CLEAN_CONFIDENCE, FLIPPED_CONFIDENCE};

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {message}")]
    Unavailable { message: String, retryable: bool },
    #[error("invalid input: {message}")]
    InvalidInput { message: String },
    #[error("precondition violated: {message}")]
    Precondition { message: String },
    #[error("version conflict on {cluster_id}: expected version {expected}, got {got}")]
    Conflict { cluster_id: String, expected: u32, got: u32 },
    #[error("not found: {message}")]
    NotFound { message: String },
    #[error("malformed backend response: {message}")]
    Protocol { message: String },
}

impl BackendError {
    pub fn unavailable(message: impl Into<String>) -> Self {
        BackendError::Unavailable { message: message.into(), retryable: true }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        BackendError::InvalidInput { message: message.into() }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        BackendError::Precondition { message: message.into() }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable { retryable: true, .. })
    }
}

/// A judge decision with the judge's self-reported confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeAnswer<D> {
    pub decision: D,
    pub confidence: f64,
    pub rationale: String,
}

impl<D> JudgeAnswer<D> {
    pub fn new(decision: D, confidence: f64, rationale: impl Into<String>) -> Self {
        Self { decision, confidence, rationale: rationale.into() }
    }

    /// Confidence must be finite and inside `[0, 1]`.
    pub fn checked(self) -> BackendResult<Self> {
        if self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence) {
            Ok(self)
        } else {
            Err(BackendError::Protocol { message: format!("confidence {} outside [0,1]", self.confidence) })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallDecision {
    Suspicious,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoverageDecision {
    Covered { sub_issue_id: String },
    /// `best_guess` is the closest existing sub-issue, if the judge has one.
    Uncovered { best_guess: Option<String> },
}

/// Case-3-versus-case-4 call used when no clustering tool is enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoveltyDecision {
    Variant { sub_issue_id: Option<String> },
    NewSubIssue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cluster_id: Option<String>,
    pub confidence: f64,
}

/// Text summary of a cluster, as kept in long-term memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synopsis {
    pub cluster_id: String,
    pub text: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub trait Judge: Send + Sync {
    fn recall(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<RecallDecision>>;
    fn coverage(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<CoverageDecision>>;
    fn novelty(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<NoveltyDecision>>;
    fn summarize(&self, texts: &[String], prior: Option<&Synopsis>) -> BackendResult<String>;
    fn select(&self, item: &ItemView, synopses: &[Synopsis]) -> BackendResult<Selection>;
    /// Partition `items` into groups; returns `(item_id, group_index)` pairs.
    fn cluster(&self, items: &[ItemView]) -> BackendResult<Vec<(String, usize)>>;
}

pub trait GovernanceModel: Send + Sync {
    /// Probability that the item is covered by the current policy of `issue_id`.
    fn score(&self, item: &ItemView, issue_id: &str) -> BackendResult<f64>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector>;
}

/// Versioned synopsis store. Namespaces keep concurrent issues apart.
pub trait MemoryStore: Send + Sync {
    /// Accepts `synopsis` only if its version is the stored version plus one
    /// (or 1 for a new cluster).
    fn write(&self, namespace: &str, synopsis: &Synopsis) -> BackendResult<()>;
    /// Latest version of every cluster, in first-insertion order.
    fn read_all(&self, namespace: &str) -> BackendResult<Vec<Synopsis>>;
    fn read(&self, namespace: &str, cluster_id: &str) -> BackendResult<Synopsis>;
    /// Seed an empty namespace with already-versioned synopses (checkpoint resume).
    fn import(&self, namespace: &str, synopses: &[Synopsis]) -> BackendResult<()>;
}

/// Average all channel vectors together with the embedding of the combined
/// text channels. Each channel counts once.
pub fn embed_item(embedder: &dyn Embedder, item: &ItemView) -> BackendResult<EmbeddingVector> {
    let mut parts: Vec<EmbeddingVector> =
        item.channel_vectors.values().map(|v| EmbeddingVector(v.clone())).collect();
    let text = item.combined_text();
    if !text.is_empty() {
        parts.push(embedder.embed_text(&text)?);
    }
    mean_of(&parts).ok_or_else(|| BackendError::invalid(format!("item {:?} has no channels", item.id)))?
}

fn mean_of(parts: &[EmbeddingVector]) -> Option<BackendResult<EmbeddingVector>> {
    let dim = parts.first()?.dim();
    if dim == 0 || parts.iter().any(|p| p.dim() != dim) {
        return Some(Err(BackendError::invalid("channel vectors disagree on dimension")));
    }
    let mut acc = vec![0.0; dim];
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part.as_slice()) {
            *a += v;
        }
    }
    let n = parts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let out = EmbeddingVector(acc);
    if !out.is_finite() {
        return Some(Err(BackendError::invalid("non-finite embedding")));
    }
    Some(Ok(out))
}

/// Lowercased word tokens; underscores stay inside tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Seeded hash of `key` mapped to `[0, 1)`. Used for reproducible noise.
pub fn unit_hash(seed: u64, salt: &str, key: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(salt.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Default)]
pub struct CallCounters {
    recall: AtomicU64,
    coverage: AtomicU64,
    novelty: AtomicU64,
    summarize: AtomicU64,
    select: AtomicU64,
    cluster: AtomicU64,
    governance: AtomicU64,
    embed: AtomicU64,
    memory_write: AtomicU64,
    memory_read: AtomicU64,
}

impl CallCounters {
    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        [
            ("judge_recall", get(&self.recall)),
            ("judge_coverage", get(&self.coverage)),
            ("judge_novelty", get(&self.novelty)),
            ("judge_summarize", get(&self.summarize)),
            ("judge_select", get(&self.select)),
            ("judge_cluster", get(&self.cluster)),
            ("governance_score", get(&self.governance)),
            ("embed_text", get(&self.embed)),
            ("memory_write", get(&self.memory_write)),
            ("memory_read", get(&self.memory_read)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// The full set of backends a pipeline run talks to.
#[derive(Clone)]
pub struct Backends {
    pub judge: Arc<dyn Judge>,
    pub governance: Arc<dyn GovernanceModel>,
    pub embedder: Arc<dyn Embedder>,
    pub memory: Arc<dyn MemoryStore>,
    counters: Arc<CallCounters>,
}

impl Backends {
    pub fn new(
        judge: Arc<dyn Judge>,
        governance: Arc<dyn GovernanceModel>,
        embedder: Arc<dyn Embedder>,
        memory: Arc<dyn MemoryStore>,
    ) -> Self {
        Self { judge, governance, embedder, memory, counters: Arc::default() }
    }

    /// Same backends with fresh counters and memory store.
    pub fn fork(&self, memory: Arc<dyn MemoryStore>) -> Self {
        Self { memory, counters: Arc::default(), ..self.clone() }
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    pub fn recall(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<RecallDecision>> {
        bump(&self.counters.recall);
        self.judge.recall(item, policy)?.checked()
    }

    pub fn coverage(
        &self,
        item: &ItemView,
        policy: &PolicyDoc,
    ) -> BackendResult<JudgeAnswer<CoverageDecision>> {
        bump(&self.counters.coverage);
        let answer = self.judge.coverage(item, policy)?.checked()?;
        if let CoverageDecision::Covered { sub_issue_id } = &answer.decision {
            if !policy.contains_sub_issue(sub_issue_id) {
                return Err(BackendError::Protocol {
                    message: format!("judge reported unknown sub-issue {sub_issue_id:?}"),
                });
            }
        }
        Ok(answer)
    }

    pub fn novelty(
        &self,
        item: &ItemView,
        policy: &PolicyDoc,
    ) -> BackendResult<JudgeAnswer<NoveltyDecision>> {
        bump(&self.counters.novelty);
        self.judge.novelty(item, policy)?.checked()
    }

    pub fn summarize(&self, texts: &[String], prior: Option<&Synopsis>) -> BackendResult<String> {
        if texts.is_empty() {
            return Err(BackendError::precondition("summarize needs at least one text"));
        }
        bump(&self.counters.summarize);
        let out = self.judge.summarize(texts, prior)?;
        if out.trim().is_empty() {
            return Err(BackendError::Protocol { message: "empty summary".into() });
        }
        Ok(out)
    }

    pub fn select(&self, item: &ItemView, synopses: &[Synopsis]) -> BackendResult<Selection> {
        if synopses.is_empty() {
            return Err(BackendError::precondition("select needs at least one synopsis"));
        }
        bump(&self.counters.select);
        let sel = self.judge.select(item, synopses)?;
        if let Some(id) = &sel.cluster_id {
            if !synopses.iter().any(|s| &s.cluster_id == id) {
                return Err(BackendError::Protocol { message: format!("judge selected unknown cluster {id:?}") });
            }
        }
        Ok(sel)
    }

    pub fn cluster(&self, items: &[ItemView]) -> BackendResult<Vec<(String, usize)>> {
        if items.is_empty() {
            return Err(BackendError::precondition("cluster needs at least one item"));
        }
        bump(&self.counters.cluster);
        let groups = self.judge.cluster(items)?;
        let mut expected: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
        let mut got: Vec<&str> = groups.iter().map(|(id, _)| id.as_str()).collect();
        expected.sort_unstable();
        got.sort_unstable();
        if expected != got {
            return Err(BackendError::Protocol { message: "judge clustering is not a partition of its input".into() });
        }
        Ok(groups)
    }

    pub fn governance_score(&self, item: &ItemView, issue_id: &str) -> BackendResult<f64> {
        bump(&self.counters.governance);
        let score = self.governance.score(item, issue_id)?;
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(BackendError::Protocol { message: format!("governance score {score} outside [0,1]") });
        }
        Ok(score)
    }

    pub fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(BackendError::invalid("cannot embed empty text"));
        }
        bump(&self.counters.embed);
        let v = self.embedder.embed_text(text)?;
        if v.dim() != self.embedder.dim() || !v.is_finite() {
            return Err(BackendError::Protocol { message: "embedder returned a malformed vector".into() });
        }
        Ok(v)
    }

    pub fn embed_item(&self, item: &ItemView) -> BackendResult<EmbeddingVector> {
        embed_item(&Counted(self), item)
    }

    pub fn memory_write(&self, namespace: &str, synopsis: &Synopsis) -> BackendResult<()> {
        bump(&self.counters.memory_write);
        self.memory.write(namespace, synopsis)
    }

    pub fn memory_read_all(&self, namespace: &str) -> BackendResult<Vec<Synopsis>> {
        bump(&self.counters.memory_read);
        self.memory.read_all(namespace)
    }

    pub fn memory_read(&self, namespace: &str, cluster_id: &str) -> BackendResult<Synopsis> {
        bump(&self.counters.memory_read);
        self.memory.read(namespace, cluster_id)
    }
}

struct Counted<'a>(&'a Backends);

impl Embedder for Counted<'_> {
    fn dim(&self) -> usize {
        self.0.embedder.dim()
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        self.0.embed_text(text)
    }
}
