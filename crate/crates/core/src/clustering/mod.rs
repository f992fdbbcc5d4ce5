//! Two-stage clustering of uncovered items.
//!
//! The streaming stage seeds one cluster per existing sub-issue and routes
//! each item either to its best cluster (updating that cluster's synopsis)
//! or to the novelty buffer. The offline stage then partitions the buffer
//! into new sub-issue clusters.
//!
//! Two synopsis representations are supported. In embedding mode a cluster
//! is a centroid vector; the centroid is a running mean in which the
//! sub-issue definition counts as the first member. In memory mode a
//! cluster is a text summary kept in the versioned memory store and the
//! judge picks the matching cluster.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{BackendError, Backends, Synopsis};
use crate::error::{Error, Result};
use crate::types::{ItemView, PolicyDoc};

mod chunk;
mod hierarchical;
mod kmeans;
mod vector;

pub use chunk::{judge_partition, merge_chunked_groups, MergedPartition};
pub use hierarchical::hierarchical;
pub use kmeans::{kmeans, KMeansFit, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use vector::{cosine_sim, mean, squared_distance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Embedding,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineMethod {
    Kmeans,
    Hierarchical,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub mode: ClusterMode,
    /// Minimum best cosine similarity for joining an existing cluster.
    pub delta: f64,
    /// Target number of new clusters from the offline stage.
    pub m: usize,
    /// Defaults to k-means in embedding mode and the judge in memory mode.
    pub offline_method: Option<OfflineMethod>,
    pub seed: u64,
    /// Member texts fed to the summarizer on a memory-mode update.
    pub cap_k: usize,
    pub max_chunk: usize,
    pub anchors: usize,
    /// When false, centroids and synopses stay at their initial value.
    pub update_clusters: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            mode: ClusterMode::Embedding,
            delta: 0.4,
            m: 4,
            offline_method: None,
            seed: 0,
            cap_k: 16,
            max_chunk: 32,
            anchors: 4,
            update_clusters: true,
        }
    }
}

impl ClusterConfig {
    pub fn offline(&self) -> OfflineMethod {
        self.offline_method.unwrap_or(match self.mode {
            ClusterMode::Embedding => OfflineMethod::Kmeans,
            ClusterMode::Memory => OfflineMethod::Judge,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta {} outside [-1, 1]", self.delta)));
        }
        if self.mode == ClusterMode::Embedding && self.offline() == OfflineMethod::Judge {
            return Err(Error::invalid("judge offline clustering requires memory mode"));
        }
        if self.mode == ClusterMode::Memory && self.offline() != OfflineMethod::Judge {
            return Err(Error::invalid("memory mode has no vectors; use judge offline clustering"));
        }
        if self.cap_k == 0 {
            return Err(Error::invalid("cap_k must be positive"));
        }
        if self.anchors >= self.max_chunk {
            return Err(Error::invalid("max_chunk must exceed the anchor count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterOrigin {
    Existing { sub_issue_id: String },
    New { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub origin: ClusterOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synopsis: Option<Synopsis>,
    pub member_ids: Vec<String>,
}

impl Cluster {
    pub fn member_count(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_existing(&self) -> bool {
        matches!(self.origin, ClusterOrigin::Existing { .. })
    }

    /// Running-mean centroid update: with `C` members so far the new item
    /// weighs `1/(C+2)` and the old centroid `(C+1)/(C+2)`.
    pub fn absorb_embedding(&mut self, item_id: &str, embedding: &[f64]) -> Result<()> {
        let centroid = self
            .centroid
            .as_mut()
            .ok_or_else(|| Error::Invariant(format!("cluster {} has no centroid", self.id)))?;
        if centroid.len() != embedding.len() {
            return Err(Error::invalid("embedding dimension differs from centroid"));
        }
        let c = self.member_ids.len() as f64;
        let w_new = 1.0 / (c + 2.0);
        let w_old = (c + 1.0) / (c + 2.0);
        for (x, e) in centroid.iter_mut().zip(embedding) {
            *x = w_new * e + w_old * *x;
        }
        self.member_ids.push(item_id.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub mode: ClusterMode,
    pub clusters: Vec<Cluster>,
    /// Items no existing cluster accepted, in arrival order.
    pub buffer: Vec<String>,
    pub delta: f64,
    pub m: usize,
    /// Memory-store namespace (the issue id).
    pub namespace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cluster_id", rename_all = "snake_case")]
pub enum AssignTarget {
    Cluster(String),
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub item_id: String,
    pub target: AssignTarget,
    /// Best cosine similarity (embedding mode) or judge confidence (memory mode).
    pub score: f64,
}

/// One cluster per sub-issue, seeded from its definition. Memory-mode
/// synopses go to the namespace named after the issue.
pub fn init_clusters(policy: &PolicyDoc, config: &ClusterConfig, backends: &Backends) -> Result<ClusterSet> {
    init_clusters_in(policy, config, backends, &policy.issue_id)
}

pub fn init_clusters_in(
    policy: &PolicyDoc,
    config: &ClusterConfig,
    backends: &Backends,
    namespace: &str,
) -> Result<ClusterSet> {
    policy.validate()?;
    config.validate()?;
    let namespace = namespace.to_string();
    let mut clusters = Vec::with_capacity(policy.sub_issues.len());
    for sub in &policy.sub_issues {
        let mut cluster = Cluster {
            id: sub.id.clone(),
            origin: ClusterOrigin::Existing { sub_issue_id: sub.id.clone() },
            centroid: None,
            synopsis: None,
            member_ids: Vec::new(),
        };
        match config.mode {
            ClusterMode::Embedding => cluster.centroid = Some(backends.embed_text(&sub.definition)?.0),
            ClusterMode::Memory => {
                let text = backends.summarize(std::slice::from_ref(&sub.definition), None)?;
                let synopsis = Synopsis { cluster_id: sub.id.clone(), text, version: 1 };
                backends.memory_write(&namespace, &synopsis)?;
                cluster.synopsis = Some(synopsis);
            }
        }
        clusters.push(cluster);
    }
    Ok(ClusterSet { mode: config.mode, clusters, buffer: Vec::new(), delta: config.delta, m: config.m, namespace })
}

impl ClusterSet {
    pub fn cluster_index(&self, id: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.id == id)
    }

    /// Embedding-mode routing: best cosine similarity against every
    /// centroid, ties to the lowest index, buffer below `delta`.
    pub fn assign_embedding(&self, item_id: &str, embedding: &[f64]) -> Result<Assignment> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            let centroid = c.centroid.as_deref().ok_or_else(|| Error::Invariant(format!("cluster {} has no centroid", c.id)))?;
            let sim = cosine_sim(embedding, centroid)?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        let (index, score) = best.ok_or_else(|| Error::Invariant("cluster set is empty".into()))?;
        let target = if score >= self.delta {
            AssignTarget::Cluster(self.clusters[index].id.clone())
        } else {
            AssignTarget::Buffer
        };
        Ok(Assignment { item_id: item_id.to_string(), target, score })
    }

    /// Memory-mode routing: the judge selects among the stored synopses.
    pub fn assign_memory(&self, item: &ItemView, backends: &Backends) -> Result<Assignment> {
        let synopses = backends.memory_read_all(&self.namespace)?;
        let selection = backends.select(item, &synopses)?;
        let target = match selection.cluster_id {
            Some(id) if self.cluster_index(&id).is_some() => AssignTarget::Cluster(id),
            Some(id) => return Err(Error::Invariant(format!("memory holds unknown cluster {id:?}"))),
            None => AssignTarget::Buffer,
        };
        Ok(Assignment { item_id: item.id.clone(), target, score: selection.confidence })
    }

    /// Record `item` in cluster `index` and refresh its summary. In memory
    /// mode `recent_texts` are member texts, newest first, already capped.
    pub fn update(
        &mut self,
        index: usize,
        item: &ItemView,
        embedding: Option<&[f64]>,
        recent_texts: &[String],
        update_summary: bool,
        backends: &Backends,
    ) -> Result<()> {
        let namespace = self.namespace.clone();
        let cluster = &mut self.clusters[index];
        match self.mode {
            ClusterMode::Embedding => {
                let emb = embedding.ok_or_else(|| Error::Invariant("embedding-mode update without embedding".into()))?;
                if update_summary {
                    cluster.absorb_embedding(&item.id, emb)
                } else {
                    cluster.member_ids.push(item.id.clone());
                    Ok(())
                }
            }
            ClusterMode::Memory => {
                if update_summary {
                    let synopsis = write_resummarized(cluster, recent_texts, &namespace, backends)?;
                    cluster.synopsis = Some(synopsis);
                }
                cluster.member_ids.push(item.id.clone());
                Ok(())
            }
        }
    }

    /// Every item id held by a cluster or the buffer.
    pub fn placed_ids(&self) -> impl Iterator<Item = &str> {
        self.clusters.iter().flat_map(|c| c.member_ids.iter()).chain(&self.buffer).map(String::as_str)
    }

    pub fn check_partition(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.placed_ids() {
            if !seen.insert(id) {
                return Err(Error::Invariant(format!("item {id:?} placed twice")));
            }
        }
        let mut ids = HashSet::new();
        if !self.clusters.iter().all(|c| ids.insert(c.id.as_str())) {
            return Err(Error::Invariant("duplicate cluster ids".into()));
        }
        Ok(())
    }
}

/// Summarize and write at `version + 1`; on a version conflict re-read the
/// stored synopsis and try once more.
fn write_resummarized(
    cluster: &Cluster,
    recent_texts: &[String],
    namespace: &str,
    backends: &Backends,
) -> Result<Synopsis> {
    let mut prior = cluster
        .synopsis
        .clone()
        .ok_or_else(|| Error::Invariant(format!("cluster {} has no synopsis", cluster.id)))?;
    for attempt in 0..2 {
        let text = backends.summarize(recent_texts, Some(&prior))?;
        let next = Synopsis { cluster_id: cluster.id.clone(), text, version: prior.version + 1 };
        match backends.memory_write(namespace, &next) {
            Ok(()) => return Ok(next),
            Err(BackendError::Conflict { .. }) if attempt == 0 => {
                prior = backends.memory_read(namespace, &cluster.id)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("loop returns on its second attempt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub item_id: String,
    pub phase: crate::types::Phase,
    pub reason: String,
}

/// Resumable streaming-stage state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub cluster_set: ClusterSet,
    /// Number of stream items already consumed.
    pub cursor: usize,
    pub assignments: Vec<Assignment>,
    pub quarantine: Vec<QuarantineEntry>,
    /// Hash of the ordered stream item ids; resuming on another stream fails.
    pub stream_fingerprint: String,
    pub config: ClusterConfig,
}

pub fn stream_fingerprint(items: &[ItemView]) -> String {
    let mut h = Sha256::new();
    for item in items {
        h.update(item.id.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

impl StreamState {
    pub fn new(cluster_set: ClusterSet, items: &[ItemView], config: &ClusterConfig) -> Self {
        Self {
            cluster_set,
            cursor: 0,
            assignments: Vec::new(),
            quarantine: Vec::new(),
            stream_fingerprint: stream_fingerprint(items),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stream state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("checkpoint: {e}")))
    }

    /// Make the memory store reflect this state before resuming.
    pub fn restore_memory(&self, backends: &Backends) -> Result<()> {
        if self.cluster_set.mode != ClusterMode::Memory {
            return Ok(());
        }
        let synopses: Vec<Synopsis> = self.cluster_set.clusters.iter().filter_map(|c| c.synopsis.clone()).collect();
        backends.memory.import(&self.cluster_set.namespace, &synopses)?;
        Ok(())
    }

    pub fn is_done(&self, items: &[ItemView]) -> bool {
        self.cursor >= items.len()
    }
}

/// Embeddings computed during streaming, reused by the offline stage and
/// policy evolution.
pub type EmbeddingCache = HashMap<String, Vec<f64>>;

/// Why [`run_stream`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamStop {
    Completed,
    /// The per-call item limit was reached.
    Limit,
    /// Too many consecutive retryable backend failures; the last run of
    /// failures was rolled back so those items can be retried on resume.
    Outage,
}

/// Drive the streaming stage over `items[state.cursor..]`, processing at
/// most `limit` items. Per-item failures quarantine the item, except that
/// `outage_after` consecutive retryable failures stop the stream.
pub fn run_stream(
    state: &mut StreamState,
    items: &[ItemView],
    backends: &Backends,
    cache: &mut EmbeddingCache,
    limit: Option<usize>,
    outage_after: usize,
) -> Result<StreamStop> {
    if state.stream_fingerprint != stream_fingerprint(items) {
        return Err(Error::invalid("checkpoint was taken on a different item stream"));
    }
    let by_id: HashMap<&str, &ItemView> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let end = limit.map_or(items.len(), |l| (state.cursor + l).min(items.len()));
    let mut streak = 0usize;
    while state.cursor < end {
        let item = &items[state.cursor];
        state.cursor += 1;
        let reason = match step(state, item, &by_id, backends, cache) {
            Ok(()) => {
                streak = 0;
                continue;
            }
            Err(Error::Backend(e)) => {
                if e.is_retryable() {
                    streak += 1;
                } else {
                    streak = 0;
                }
                e.to_string()
            }
            Err(Error::InvalidInput(msg)) => {
                streak = 0;
                msg
            }
            Err(other) => return Err(other),
        };
        state.quarantine.push(QuarantineEntry {
            item_id: item.id.clone(),
            phase: crate::types::Phase::Clustering,
            reason,
        });
        if outage_after > 0 && streak >= outage_after {
            state.quarantine.truncate(state.quarantine.len() - streak);
            state.cursor -= streak;
            return Ok(StreamStop::Outage);
        }
    }
    Ok(if state.cursor >= items.len() { StreamStop::Completed } else { StreamStop::Limit })
}

fn step(
    state: &mut StreamState,
    item: &ItemView,
    by_id: &HashMap<&str, &ItemView>,
    backends: &Backends,
    cache: &mut EmbeddingCache,
) -> Result<()> {
    let cs = &state.cluster_set;
    let (assignment, embedding) = match cs.mode {
        ClusterMode::Embedding => {
            let emb = match cache.get(&item.id) {
                Some(e) => e.clone(),
                None => backends.embed_item(item)?.0,
            };
            (cs.assign_embedding(&item.id, &emb)?, Some(emb))
        }
        ClusterMode::Memory => (cs.assign_memory(item, backends)?, None),
    };
    if let Some(emb) = &embedding {
        cache.insert(item.id.clone(), emb.clone());
    }
    match &assignment.target {
        AssignTarget::Buffer => state.cluster_set.buffer.push(item.id.clone()),
        AssignTarget::Cluster(id) => {
            let index = state.cluster_set.cluster_index(id).expect("assignment targets a known cluster");
            let recent = match state.cluster_set.mode {
                ClusterMode::Memory => {
                    let members = &state.cluster_set.clusters[index].member_ids;
                    std::iter::once(item.combined_text())
                        .chain(members.iter().rev().filter_map(|m| by_id.get(m.as_str()).map(|v| v.combined_text())))
                        .filter(|t| !t.is_empty())
                        .take(state.config.cap_k)
                        .collect()
                }
                ClusterMode::Embedding => Vec::new(),
            };
            let recent = if recent.is_empty() { vec![item.id.clone()] } else { recent };
            let update = state.config.update_clusters;
            state.cluster_set.update(index, item, embedding.as_deref(), &recent, update, backends)?;
        }
    }
    state.assignments.push(assignment);
    Ok(())
}

/// Result of the offline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineOutcome {
    pub new_cluster_ids: Vec<String>,
    pub quarantined: Vec<QuarantineEntry>,
    pub notes: Vec<String>,
}

/// Partition the buffer into `min(m, |buffer|)` new clusters and append them
/// to the set. `id_prefix` namespaces the fresh cluster ids.
pub fn offline_cluster(
    buffer_items: &[ItemView],
    cs: &mut ClusterSet,
    config: &ClusterConfig,
    backends: &Backends,
    cache: &mut EmbeddingCache,
    id_prefix: &str,
) -> Result<OfflineOutcome> {
    let mut outcome = OfflineOutcome::default();
    let method = config.offline();
    if method == OfflineMethod::Judge && cs.mode != ClusterMode::Memory {
        return Err(Error::invalid("judge offline clustering requires memory mode"));
    }
    let mut usable: Vec<&ItemView> = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for item in buffer_items {
        if method == OfflineMethod::Judge {
            usable.push(item);
            continue;
        }
        let emb = match cache.get(&item.id) {
            Some(e) => Ok(e.clone()),
            None => backends.embed_item(item).map(|e| e.0),
        };
        match emb {
            Ok(e) => {
                cache.insert(item.id.clone(), e.clone());
                usable.push(item);
                vectors.push(e);
            }
            Err(err) => outcome.quarantined.push(QuarantineEntry {
                item_id: item.id.clone(),
                phase: crate::types::Phase::Clustering,
                reason: err.to_string(),
            }),
        }
    }
    let quarantined: HashSet<&str> = outcome.quarantined.iter().map(|q| q.item_id.as_str()).collect();
    cs.buffer.retain(|id| !quarantined.contains(id.as_str()));

    let k = config.m.min(usable.len());
    if k == 0 {
        return Ok(outcome);
    }
    let labels: Vec<usize> = match method {
        OfflineMethod::Kmeans => kmeans(&vectors, k, config.seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?.labels,
        OfflineMethod::Hierarchical => hierarchical(&vectors, k)?,
        OfflineMethod::Judge => {
            let owned: Vec<ItemView> = usable.iter().map(|i| (*i).clone()).collect();
            let merged = judge_partition(&owned, backends, config.max_chunk, config.anchors)?;
            outcome.notes.extend(merged.conflicts.iter().cloned());
            let by_id: HashMap<&str, usize> = merged.groups.iter().map(|(id, g)| (id.as_str(), *g)).collect();
            let raw: Vec<usize> = usable.iter().map(|i| by_id[i.id.as_str()]).collect();
            let (folded, note) = fold_surplus_groups(&raw, k);
            outcome.notes.extend(note);
            folded
        }
    };
    let groups = canonical_groups(&labels);
    let taken: HashSet<String> = cs.clusters.iter().map(|c| c.id.clone()).collect();
    let mut counter = 0;
    for (n, members) in groups.iter().enumerate() {
        let id = loop {
            counter += 1;
            let candidate = format!("{id_prefix}{counter}");
            if !taken.contains(&candidate) {
                break candidate;
            }
        };
        let member_ids: Vec<String> = members.iter().map(|&i| usable[i].id.clone()).collect();
        let mut cluster = Cluster {
            id: id.clone(),
            origin: ClusterOrigin::New { index: n + 1 },
            centroid: None,
            synopsis: None,
            member_ids,
        };
        match cs.mode {
            ClusterMode::Embedding => {
                cluster.centroid = mean(members.iter().map(|&i| vectors[i].as_slice()));
            }
            ClusterMode::Memory => {
                let texts: Vec<String> = members
                    .iter()
                    .map(|&i| usable[i].combined_text())
                    .filter(|t| !t.is_empty())
                    .take(config.cap_k)
                    .collect();
                let texts = if texts.is_empty() { vec![id.clone()] } else { texts };
                let text = backends.summarize(&texts, None)?;
                let synopsis = Synopsis { cluster_id: id.clone(), text, version: 1 };
                backends.memory_write(&cs.namespace, &synopsis)?;
                cluster.synopsis = Some(synopsis);
            }
        }
        cs.clusters.push(cluster);
        outcome.new_cluster_ids.push(id);
    }
    let placed: HashSet<String> =
        cs.clusters.iter().filter(|c| !c.is_existing()).flat_map(|c| c.member_ids.iter().cloned()).collect();
    cs.buffer.retain(|id| !placed.contains(id));
    Ok(outcome)
}

/// Member indices per group, groups ordered by first appearance.
fn canonical_groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match order.iter().position(|&o| o == l) {
            Some(g) => groups[g].push(i),
            None => {
                order.push(l);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Keep at most `k` groups: the `k - 1` largest survive and the rest are
/// folded into one remainder group.
fn fold_surplus_groups(labels: &[usize], k: usize) -> (Vec<usize>, Option<String>) {
    let groups = canonical_groups(labels);
    if groups.len() <= k {
        return (labels.to_vec(), None);
    }
    let mut ranked: Vec<usize> = (0..groups.len()).collect();
    ranked.sort_by(|a, b| groups[*b].len().cmp(&groups[*a].len()).then(a.cmp(b)));
    let mut out = vec![0; labels.len()];
    for (rank, &g) in ranked.iter().enumerate() {
        for &i in &groups[g] {
            out[i] = rank.min(k - 1);
        }
    }
    let note = format!("judge proposed {} groups; folded the smallest {} into one", groups.len(), groups.len() + 1 - k);
    (out, Some(note))
}

/// Convenience check used by tests and the pipeline: did a backend failure
/// deserve quarantine rather than aborting the run?
pub fn is_item_level(err: &Error) -> bool {
    matches!(err, Error::Backend(_) | Error::InvalidInput(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with(centroids: &[&[f64]], delta: f64) -> ClusterSet {
        ClusterSet {
            mode: ClusterMode::Embedding,
            clusters: centroids
                .iter()
                .enumerate()
                .map(|(i, c)| Cluster {
                    id: format!("s{}", i + 1),
                    origin: ClusterOrigin::Existing { sub_issue_id: format!("s{}", i + 1) },
                    centroid: Some(c.to_vec()),
                    synopsis: None,
                    member_ids: Vec::new(),
                })
                .collect(),
            buffer: Vec::new(),
            delta,
            m: 4,
            namespace: "ns".into(),
        }
    }

    #[test]
    fn assigns_to_best_cluster_above_threshold() {
        let cs = set_with(&[&[1.0, 0.0], &[0.0, 1.0]], 0.4);
        let a = cs.assign_embedding("x", &[0.9, 0.1]).unwrap();
        assert_eq!(a.target, AssignTarget::Cluster("s1".into()));
        assert!((a.score - 0.9 / 0.82f64.sqrt()).abs() < 1e-4);
        assert!((a.score - 0.99386).abs() < 1e-4);
    }

    #[test]
    fn dissimilar_item_goes_to_buffer() {
        let cs = set_with(&[&[1.0, 0.0], &[0.0, 1.0]], 0.4);
        let a = cs.assign_embedding("x", &[-1.0, 0.0]).unwrap();
        assert_eq!(a.target, AssignTarget::Buffer);
        assert_eq!(a.score, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cs = set_with(&[&[1.0, 0.0], &[0.0, 1.0]], 0.4);
        assert_eq!(cs.assign_embedding("x", &[0.5, 0.5]).unwrap().target, AssignTarget::Cluster("s1".into()));
    }

    #[test]
    fn first_update_halves() {
        let mut cs = set_with(&[&[0.0, 1.0]], 0.4);
        cs.clusters[0].absorb_embedding("a", &[1.0, 0.0]).unwrap();
        assert_eq!(cs.clusters[0].centroid.as_deref(), Some(&[0.5, 0.5][..]));
    }

    #[test]
    fn third_update_weights_a_quarter() {
        let mut cluster = set_with(&[&[1.0, 1.0]], 0.4).clusters.remove(0);
        cluster.member_ids = vec!["a".into(), "b".into()];
        cluster.absorb_embedding("c", &[4.0, 0.0]).unwrap();
        // 1/4 * [4, 0] + 3/4 * [1, 1]
        assert_eq!(cluster.centroid.as_deref(), Some(&[1.75, 0.75][..]));
        assert_eq!(cluster.member_count(), 3);
    }

    #[test]
    fn fold_keeps_largest_groups() {
        let (out, note) = fold_surplus_groups(&[0, 0, 0, 1, 2, 2, 3], 2);
        assert_eq!(out, vec![0, 0, 0, 1, 1, 1, 1]);
        assert!(note.is_some());
        let (same, none) = fold_surplus_groups(&[1, 0, 1], 2);
        assert_eq!(same, vec![1, 0, 1]);
        assert!(none.is_none());
    }

    #[test]
    fn config_rejects_mismatched_offline_method() {
        let cfg = ClusterConfig { offline_method: Some(OfflineMethod::Judge), ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ClusterConfig { mode: ClusterMode::Memory, ..Default::default() };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.offline(), OfflineMethod::Judge);
    }
}
