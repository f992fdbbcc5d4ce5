//! Four-phase orchestration for one issue, plus multi-issue fan-out.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::clustering::{stream_fingerprint, ClusterOrigin, EmbeddingCache, QuarantineEntry, StreamState};
use crate::error::{Error, Result};
use crate::eval::{score_verdicts, RunMetrics};
use crate::types::{validate_items, CaseLabel, Item, ItemView, Phase, PolicyDoc, Verdict};

mod config;
mod evolve;
mod phases;

pub use config::{PipelineConfig, RetryConfig, ToolFlags};
pub use evolve::{diff_policies, phase4_evolve, representatives, Evolution, PolicyDiff, SubIssueChange};
pub use phases::{
    phase1_recall, phase2_coverage, phase3_cluster, PhaseOutput, PhaseThreeOutput, StreamControl, Tracked,
    EMBEDDING_TOOL, GOVERNANCE_TOOL, MEMORY_TOOL, UNCLUSTERED, UNSPECIFIED,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: String,
    pub origin: ClusterOrigin,
    pub member_count: usize,
    pub member_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synopsis: Option<String>,
}

/// Everything a run produced. Contains no wall-clock data so that reruns
/// with the same inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub issue_id: String,
    pub policy_version_in: u32,
    pub policy_version_out: u32,
    pub config: PipelineConfig,
    /// Set when some items are still pending (stream limit or outage).
    pub incomplete: bool,
    pub outage: bool,
    /// In batch order.
    pub verdicts: Vec<Verdict>,
    pub quarantine: Vec<QuarantineEntry>,
    pub pending: Vec<String>,
    pub case_counts: BTreeMap<String, usize>,
    pub clusters: Vec<ClusterSummary>,
    pub evolved_policy: PolicyDoc,
    pub diff: PolicyDiff,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    pub flags: Vec<String>,
}

impl RunReport {
    pub fn verdict(&self, item_id: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.item_id == item_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Saved state of an unfinished run: Phase 1-2 results plus the Phase-3
/// stream state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheckpoint {
    pub issue_id: String,
    pub policy_version: u32,
    /// Fingerprint of the whole batch's ordered item ids.
    pub batch_fingerprint: String,
    pub settled: Vec<Verdict>,
    pub quarantine: Vec<QuarantineEntry>,
    pub uncovered: Vec<Tracked>,
    pub stream: StreamState,
}

impl PipelineCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("checkpoint: {e}")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub resume: Option<PipelineCheckpoint>,
    /// Stop the Phase-3 stream after this many items in this call.
    pub stream_limit: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Present when the run stopped inside Phase 3.
    pub checkpoint: Option<PipelineCheckpoint>,
}

fn validate_inputs(batch: &[Item], policy: &PolicyDoc, config: &PipelineConfig) -> Result<()> {
    policy.validate()?;
    config.validate()?;
    validate_items(batch, None).into_result()
}

/// Run all four phases over `batch` for one issue.
pub fn run_pipeline(batch: &[Item], policy: &PolicyDoc, config: &PipelineConfig, backends: &Backends) -> Result<RunReport> {
    run_pipeline_with(batch, policy, config, backends, RunControl::default()).map(|o| o.report)
}

pub fn run_pipeline_with(
    batch: &[Item],
    policy: &PolicyDoc,
    config: &PipelineConfig,
    backends: &Backends,
    control: RunControl,
) -> Result<RunOutcome> {
    validate_inputs(batch, policy, config)?;
    let views: Vec<ItemView> = batch.iter().map(Item::view).collect();
    let fingerprint = stream_fingerprint(&views);
    let mut flags = Vec::new();
    let mut cache = EmbeddingCache::new();

    let (mut settled, mut quarantine, uncovered, resume_state) = match control.resume {
        Some(cp) => {
            if cp.batch_fingerprint != fingerprint {
                return Err(Error::invalid("checkpoint was taken on a different batch"));
            }
            if cp.issue_id != policy.issue_id || cp.policy_version != policy.version {
                return Err(Error::invalid("checkpoint was taken with a different policy"));
            }
            if cp.stream.config != config.cluster_config() {
                return Err(Error::invalid("clustering configuration differs from the checkpoint"));
            }
            (cp.settled, cp.quarantine, cp.uncovered, Some(cp.stream))
        }
        None => {
            let p1 = phase1_recall(views.iter().cloned().map(Tracked::new).collect(), policy, backends, config);
            let mut settled = p1.settled;
            let mut quarantine = p1.quarantine;
            if p1.outage {
                let pending = p1.forward.iter().map(|t| t.item.id.clone()).collect();
                flags.push("backend outage during recall; later phases skipped".to_string());
                return finish_incomplete(batch, policy, config, settled, quarantine, pending, None, flags);
            }
            let p2 = phase2_coverage(p1.forward, policy, backends, config);
            settled.extend(p2.settled);
            quarantine.extend(p2.quarantine);
            if p2.outage {
                let pending = p2.forward.iter().map(|t| t.item.id.clone()).collect();
                flags.push("backend outage during coverage; later phases skipped".to_string());
                return finish_incomplete(batch, policy, config, settled, quarantine, pending, None, flags);
            }
            (settled, quarantine, p2.forward, None)
        }
    };

    let uncovered_copy = uncovered.clone();
    let stream_control = StreamControl { resume: resume_state, limit: control.stream_limit };
    let p3 = phase3_cluster(uncovered, policy, backends, config, stream_control, &mut cache)?;
    flags.extend(p3.notes.iter().cloned());
    if let Some(stream) = p3.checkpoint {
        if p3.outage {
            flags.push("backend outage during clustering; resume from the checkpoint".to_string());
        }
        let checkpoint = PipelineCheckpoint {
            issue_id: policy.issue_id.clone(),
            policy_version: policy.version,
            batch_fingerprint: fingerprint,
            settled: settled.clone(),
            quarantine: quarantine.clone(),
            uncovered: uncovered_copy,
            stream,
        };
        let mut q = quarantine;
        q.extend(p3.quarantine);
        let mut outcome = finish_incomplete(batch, policy, config, settled, q, p3.pending, p3.cluster_set.as_ref(), flags)?;
        outcome.report.outage = p3.outage;
        outcome.checkpoint = Some(checkpoint);
        return Ok(outcome);
    }
    settled.extend(p3.verdicts);
    quarantine.extend(p3.quarantine);

    let uncovered_views: Vec<ItemView> = uncovered_copy.into_iter().map(|t| t.item).collect();
    let evolution = phase4_evolve(policy, p3.cluster_set.as_ref(), &uncovered_views, &mut cache, backends, config)?;
    flags.extend(evolution.flags.iter().cloned());
    let report = assemble(batch, policy, config, settled, quarantine, Vec::new(), p3.cluster_set.as_ref(), evolution, flags, false)?;
    Ok(RunOutcome { report, checkpoint: None })
}

#[allow(clippy::too_many_arguments)]
fn finish_incomplete(
    batch: &[Item],
    policy: &PolicyDoc,
    config: &PipelineConfig,
    settled: Vec<Verdict>,
    quarantine: Vec<QuarantineEntry>,
    pending: Vec<String>,
    cluster_set: Option<&crate::clustering::ClusterSet>,
    mut flags: Vec<String>,
) -> Result<RunOutcome> {
    flags.push("policy evolution skipped: run incomplete".to_string());
    let evolution = Evolution {
        policy: policy.clone(),
        diff: diff_policies(policy, policy)?,
        flags: Vec::new(),
    };
    let outage = flags.iter().any(|f| f.contains("outage"));
    let mut report = assemble(batch, policy, config, settled, quarantine, pending, cluster_set, evolution, flags, true)?;
    report.outage = outage;
    Ok(RunOutcome { report, checkpoint: None })
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    batch: &[Item],
    policy: &PolicyDoc,
    config: &PipelineConfig,
    verdicts: Vec<Verdict>,
    quarantine: Vec<QuarantineEntry>,
    pending: Vec<String>,
    cluster_set: Option<&crate::clustering::ClusterSet>,
    evolution: Evolution,
    flags: Vec<String>,
    incomplete: bool,
) -> Result<RunReport> {
    let order: HashMap<&str, usize> = batch.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut verdicts = verdicts;
    verdicts.sort_by_key(|v| order.get(v.item_id.as_str()).copied().unwrap_or(usize::MAX));
    let mut quarantine = quarantine;
    quarantine.sort_by_key(|q| order.get(q.item_id.as_str()).copied().unwrap_or(usize::MAX));
    let mut pending = pending;
    pending.sort_by_key(|id| order.get(id.as_str()).copied().unwrap_or(usize::MAX));

    check_conservation(batch, &verdicts, &quarantine, &pending)?;
    check_verdicts(&verdicts, cluster_set)?;

    let mut case_counts = BTreeMap::new();
    for case in CaseLabel::ALL {
        case_counts.insert(case.to_string(), verdicts.iter().filter(|v| v.case == case).count());
    }
    let clusters = cluster_set
        .map(|cs| {
            cs.clusters
                .iter()
                .map(|c| ClusterSummary {
                    id: c.id.clone(),
                    origin: c.origin.clone(),
                    member_count: c.member_count(),
                    member_ids: c.member_ids.clone(),
                    synopsis: c.synopsis.as_ref().map(|s| s.text.clone()),
                })
                .collect()
        })
        .unwrap_or_default();
    let metrics = score_verdicts(batch, &verdicts, &quarantine, &policy.issue_id)?;
    Ok(RunReport {
        issue_id: policy.issue_id.clone(),
        policy_version_in: policy.version,
        policy_version_out: evolution.policy.version,
        config: config.clone(),
        incomplete,
        outage: false,
        verdicts,
        quarantine,
        pending,
        case_counts,
        clusters,
        evolved_policy: evolution.policy,
        diff: evolution.diff,
        metrics,
        flags,
    })
}

/// Every batch item is in exactly one of verdicts, quarantine and pending.
pub fn check_conservation(batch: &[Item], verdicts: &[Verdict], quarantine: &[QuarantineEntry], pending: &[String]) -> Result<()> {
    let expected: HashSet<&str> = batch.iter().map(|i| i.id.as_str()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let all = verdicts
        .iter()
        .map(|v| v.item_id.as_str())
        .chain(quarantine.iter().map(|q| q.item_id.as_str()))
        .chain(pending.iter().map(String::as_str));
    for id in all {
        if !expected.contains(id) {
            return Err(Error::Invariant(format!("unknown item {id:?} in output")));
        }
        if !seen.insert(id) {
            return Err(Error::Invariant(format!("item {id:?} appears twice in output")));
        }
    }
    if seen.len() != expected.len() {
        return Err(Error::Invariant(format!("{} of {} items lost", expected.len() - seen.len(), expected.len())));
    }
    Ok(())
}

fn check_verdicts(verdicts: &[Verdict], cluster_set: Option<&crate::clustering::ClusterSet>) -> Result<()> {
    for v in verdicts {
        for s in &v.phase_trail {
            if !(0.0..=1.0).contains(&s.confidence) {
                return Err(Error::Invariant(format!("item {} has confidence {} outside [0, 1]", v.item_id, s.confidence)));
            }
        }
        let needs_cluster = matches!(v.case, CaseLabel::VariantPositive | CaseLabel::NewSubIssuePositive);
        if needs_cluster != v.cluster_id.is_some() {
            return Err(Error::Invariant(format!("item {} has case {} but cluster {:?}", v.item_id, v.case, v.cluster_id)));
        }
        let (Some(cs), Some(cid)) = (cluster_set, &v.cluster_id) else { continue };
        if cid == UNCLUSTERED && v.case == CaseLabel::NewSubIssuePositive {
            continue;
        }
        let Some(cluster) = cs.clusters.iter().find(|c| &c.id == cid) else {
            return Err(Error::Invariant(format!("item {} references unknown cluster {cid}", v.item_id)));
        };
        if (v.case == CaseLabel::VariantPositive) != cluster.is_existing() {
            return Err(Error::Invariant(format!("item {} case {} disagrees with cluster {cid} origin", v.item_id, v.case)));
        }
    }
    Ok(())
}

/// Run one independent pipeline per policy over the same batch.
pub fn run_multi(batch: &[Item], policies: &[PolicyDoc], config: &PipelineConfig, backends: &Backends) -> Result<Vec<RunReport>> {
    let mut ids = HashSet::new();
    if !policies.iter().all(|p| ids.insert(p.issue_id.as_str())) {
        return Err(Error::invalid("policies must have distinct issue ids"));
    }
    policies
        .par_iter()
        .map(|p| {
            let mut cfg = config.clone();
            if let Some(base) = &config.memory_namespace {
                cfg.memory_namespace = Some(format!("{base}/{}", p.issue_id));
            }
            run_pipeline(batch, p, &cfg, backends)
        })
        .collect()
}

/// One structured log record per phase decision or quarantine event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub issue_id: String,
    pub item_id: String,
    pub phase: Phase,
    pub decision: String,
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_used: Option<String>,
    pub rationale: String,
}

pub fn decision_log(report: &RunReport) -> Vec<DecisionRecord> {
    let mut out = Vec::new();
    for v in &report.verdicts {
        for s in &v.phase_trail {
            out.push(DecisionRecord {
                issue_id: report.issue_id.clone(),
                item_id: v.item_id.clone(),
                phase: s.phase,
                decision: s.decision.clone(),
                confidence: Some(s.confidence),
                tool_used: s.tool_used.clone(),
                rationale: s.rationale.clone(),
            });
        }
    }
    for q in &report.quarantine {
        out.push(DecisionRecord {
            issue_id: report.issue_id.clone(),
            item_id: q.item_id.clone(),
            phase: q.phase,
            decision: "quarantined".into(),
            confidence: None,
            tool_used: None,
            rationale: q.reason.clone(),
        });
    }
    out
}

pub fn decision_log_jsonl(report: &RunReport) -> String {
    decision_log(report)
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}
