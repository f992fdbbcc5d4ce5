use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::backends::{BackendError, Backends, CoverageDecision, NoveltyDecision, RecallDecision};
use crate::clustering::{
    init_clusters_in, offline_cluster, run_stream, AssignTarget, ClusterMode, ClusterSet, EmbeddingCache,
    QuarantineEntry, StreamState, StreamStop,
};
use crate::error::Result;
use crate::types::{CaseLabel, ItemView, Phase, PhaseStep, PolicyDoc, Verdict};

/// Cluster id reported by the no-tools degraded mode.
pub const UNCLUSTERED: &str = "unclustered";
/// Case-2 sub-issue placeholder when the governance tool overrides a judge
/// that offered no guess.
pub const UNSPECIFIED: &str = "unspecified";
pub const GOVERNANCE_TOOL: &str = "governance";
pub const EMBEDDING_TOOL: &str = "embedding";
pub const MEMORY_TOOL: &str = "memory";

/// An item still moving through the pipeline with its decisions so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracked {
    pub item: ItemView,
    pub trail: Vec<PhaseStep>,
}

impl Tracked {
    pub fn new(item: ItemView) -> Self {
        Self { item, trail: Vec::new() }
    }

    fn settle(mut self, case: CaseLabel, sub_issue_id: Option<String>, cluster_id: Option<String>, step: PhaseStep) -> Verdict {
        self.trail.push(step);
        Verdict { item_id: self.item.id, case, sub_issue_id, cluster_id, phase_trail: self.trail }
    }
}

/// Output of a filtering phase: settled verdicts, items passed on, and
/// items that could not be judged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutput {
    pub settled: Vec<Verdict>,
    pub forward: Vec<Tracked>,
    pub quarantine: Vec<QuarantineEntry>,
    /// A run of consecutive retryable failures reached the outage limit.
    pub outage: bool,
}

fn quarantine(item: &ItemView, phase: Phase, err: &BackendError) -> QuarantineEntry {
    QuarantineEntry { item_id: item.id.clone(), phase, reason: err.to_string() }
}

fn longest_retryable_run<T>(results: &[std::result::Result<T, BackendError>]) -> usize {
    let (mut best, mut run) = (0, 0);
    for r in results {
        match r {
            Err(e) if e.is_retryable() => {
                run += 1;
                best = best.max(run);
            }
            _ => run = 0,
        }
    }
    best
}

fn step(phase: Phase, decision: impl Into<String>, confidence: f64, tool: Option<&str>, rationale: impl Into<String>) -> PhaseStep {
    PhaseStep {
        phase,
        decision: decision.into(),
        confidence,
        tool_used: tool.map(str::to_string),
        rationale: rationale.into(),
    }
}

/// Phase 1: Case 1 against Cases 2/3/4 using the essential logic.
pub fn phase1_recall(batch: Vec<Tracked>, policy: &PolicyDoc, backends: &Backends, config: &PipelineConfig) -> PhaseOutput {
    let answers: Vec<_> = batch.par_iter().map(|t| backends.recall(&t.item, policy)).collect();
    let outage = config.outage_after > 0 && longest_retryable_run(&answers) >= config.outage_after;
    let mut out = PhaseOutput { outage, ..Default::default() };
    for (mut tracked, answer) in batch.into_iter().zip(answers) {
        match answer {
            Err(e) => out.quarantine.push(quarantine(&tracked.item, Phase::Recall, &e)),
            Ok(a) => match a.decision {
                RecallDecision::Normal => {
                    let s = step(Phase::Recall, "normal", a.confidence, None, a.rationale);
                    out.settled.push(tracked.settle(CaseLabel::Negative, None, None, s));
                }
                RecallDecision::Suspicious => {
                    tracked.trail.push(step(Phase::Recall, "suspicious", a.confidence, None, a.rationale));
                    out.forward.push(tracked);
                }
            },
        }
    }
    out
}

enum CoverageOutcome {
    Covered { sub_issue_id: String, step: PhaseStep },
    Uncovered(PhaseStep),
}

fn coverage_one(item: &ItemView, policy: &PolicyDoc, backends: &Backends, config: &PipelineConfig) -> std::result::Result<CoverageOutcome, BackendError> {
    let answer = backends.coverage(item, policy)?;
    let judge_says = match &answer.decision {
        CoverageDecision::Covered { sub_issue_id } => format!("covered:{sub_issue_id}"),
        CoverageDecision::Uncovered { .. } => "uncovered".to_string(),
    };
    let guess = match &answer.decision {
        CoverageDecision::Covered { sub_issue_id } => Some(sub_issue_id.clone()),
        CoverageDecision::Uncovered { best_guess } => best_guess.clone(),
    };
    let judge_outcome = |tool: Option<&str>, rationale: String| match &answer.decision {
        CoverageDecision::Covered { sub_issue_id } => CoverageOutcome::Covered {
            sub_issue_id: sub_issue_id.clone(),
            step: step(Phase::Coverage, judge_says.clone(), answer.confidence, tool, rationale),
        },
        CoverageDecision::Uncovered { .. } => {
            CoverageOutcome::Uncovered(step(Phase::Coverage, "uncovered", answer.confidence, tool, rationale))
        }
    };
    if !config.tools.use_governance || answer.confidence >= config.confidence_threshold {
        return Ok(judge_outcome(None, answer.rationale.clone()));
    }
    match backends.governance_score(item, &policy.issue_id) {
        Err(e) => Ok(judge_outcome(
            Some(GOVERNANCE_TOOL),
            format!("judge {judge_says} at {:.2}; governance failed ({e}); kept judge decision", answer.confidence),
        )),
        Ok(score) => {
            let rationale = format!(
                "judge {judge_says} at {:.2} < {:.2}; governance score {score:.2}",
                answer.confidence, config.confidence_threshold
            );
            if score >= config.governance_threshold {
                let sub = guess.unwrap_or_else(|| UNSPECIFIED.to_string());
                Ok(CoverageOutcome::Covered {
                    step: step(Phase::Coverage, format!("covered:{sub}"), answer.confidence, Some(GOVERNANCE_TOOL), rationale),
                    sub_issue_id: sub,
                })
            } else {
                Ok(CoverageOutcome::Uncovered(step(
                    Phase::Coverage,
                    "uncovered",
                    answer.confidence,
                    Some(GOVERNANCE_TOOL),
                    rationale,
                )))
            }
        }
    }
}

/// Phase 2: drop items the current policy already covers. Low-confidence
/// judge answers are checked against the governance model when enabled.
pub fn phase2_coverage(suspicious: Vec<Tracked>, policy: &PolicyDoc, backends: &Backends, config: &PipelineConfig) -> PhaseOutput {
    let answers: Vec<_> = suspicious.par_iter().map(|t| coverage_one(&t.item, policy, backends, config)).collect();
    let outage = config.outage_after > 0 && longest_retryable_run(&answers) >= config.outage_after;
    let mut out = PhaseOutput { outage, ..Default::default() };
    for (mut tracked, answer) in suspicious.into_iter().zip(answers) {
        match answer {
            Err(e) => out.quarantine.push(quarantine(&tracked.item, Phase::Coverage, &e)),
            Ok(CoverageOutcome::Covered { sub_issue_id, step }) => {
                out.settled.push(tracked.settle(CaseLabel::CoveredPositive, Some(sub_issue_id), None, step));
            }
            Ok(CoverageOutcome::Uncovered(step)) => {
                tracked.trail.push(step);
                out.forward.push(tracked);
            }
        }
    }
    out
}

/// Options controlling where the Phase-3 stream starts and stops.
#[derive(Debug, Clone, Default)]
pub struct StreamControl {
    pub resume: Option<StreamState>,
    /// Process at most this many stream items in this call.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseThreeOutput {
    pub verdicts: Vec<Verdict>,
    pub quarantine: Vec<QuarantineEntry>,
    pub cluster_set: Option<ClusterSet>,
    /// Items not yet decided because the stream stopped early.
    pub pending: Vec<String>,
    /// Present when the stream stopped early; resume from it.
    pub checkpoint: Option<StreamState>,
    pub outage: bool,
    pub notes: Vec<String>,
}

/// Phase 3: split uncovered items into variants of existing sub-issues
/// (Case 3) and new sub-issues (Case 4).
pub fn phase3_cluster(
    uncovered: Vec<Tracked>,
    policy: &PolicyDoc,
    backends: &Backends,
    config: &PipelineConfig,
    control: StreamControl,
    cache: &mut EmbeddingCache,
) -> Result<PhaseThreeOutput> {
    match config.phase3_tool() {
        None => Ok(phase3_without_tools(uncovered, policy, backends, config)),
        Some(_) => phase3_two_stage(uncovered, policy, backends, config, control, cache),
    }
}

fn phase3_without_tools(uncovered: Vec<Tracked>, policy: &PolicyDoc, backends: &Backends, config: &PipelineConfig) -> PhaseThreeOutput {
    let answers: Vec<_> = uncovered.par_iter().map(|t| backends.novelty(&t.item, policy)).collect();
    let outage = config.outage_after > 0 && longest_retryable_run(&answers) >= config.outage_after;
    let mut out = PhaseThreeOutput { outage, ..Default::default() };
    for (tracked, answer) in uncovered.into_iter().zip(answers) {
        match answer {
            Err(e) => out.quarantine.push(quarantine(&tracked.item, Phase::Clustering, &e)),
            Ok(a) => {
                let (case, sub, decision) = match a.decision {
                    NoveltyDecision::Variant { sub_issue_id } => {
                        let sub = sub_issue_id.filter(|s| policy.contains_sub_issue(s));
                        let d = format!("variant:{}", sub.as_deref().unwrap_or("?"));
                        (CaseLabel::VariantPositive, sub, d)
                    }
                    NoveltyDecision::NewSubIssue => (CaseLabel::NewSubIssuePositive, None, "new_sub_issue".to_string()),
                };
                let s = step(Phase::Clustering, decision, a.confidence, None, a.rationale);
                out.verdicts.push(tracked.settle(case, sub, Some(UNCLUSTERED.to_string()), s));
            }
        }
    }
    out
}

fn phase3_two_stage(
    uncovered: Vec<Tracked>,
    policy: &PolicyDoc,
    backends: &Backends,
    config: &PipelineConfig,
    control: StreamControl,
    cache: &mut EmbeddingCache,
) -> Result<PhaseThreeOutput> {
    let cluster_config = config.cluster_config();
    let views: Vec<ItemView> = uncovered.iter().map(|t| t.item.clone()).collect();
    let mut state = match control.resume {
        Some(state) => {
            state.restore_memory(backends)?;
            state
        }
        None => {
            let cs = init_clusters_in(policy, &cluster_config, backends, &config.namespace(&policy.issue_id))?;
            StreamState::new(cs, &views, &cluster_config)
        }
    };
    let stop = run_stream(&mut state, &views, backends, cache, control.limit, config.outage_after)?;
    let mut out = PhaseThreeOutput { outage: stop == StreamStop::Outage, ..Default::default() };
    if stop != StreamStop::Completed {
        out.pending = views[state.cursor..].iter().map(|v| v.id.clone()).collect();
        out.pending.extend(state.cluster_set.buffer.iter().cloned());
        // Items already routed to existing clusters are not final either:
        // their verdicts are issued once the stream completes.
        out.pending.extend(
            state
                .assignments
                .iter()
                .filter(|a| matches!(a.target, AssignTarget::Cluster(_)))
                .map(|a| a.item_id.clone()),
        );
        out.quarantine = state.quarantine.clone();
        out.cluster_set = Some(state.cluster_set.clone());
        out.checkpoint = Some(state);
        return Ok(out);
    }

    let mut cs = state.cluster_set.clone();
    let by_id: HashMap<&str, &ItemView> = views.iter().map(|v| (v.id.as_str(), v)).collect();
    let buffer_items: Vec<ItemView> = cs.buffer.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let prefix = format!("new-v{}-", policy.version + 1);
    let offline = match offline_cluster(&buffer_items, &mut cs, &cluster_config, backends, cache, &prefix) {
        Ok(o) => o,
        Err(crate::Error::Backend(e)) => {
            out.outage = true;
            out.notes.push(format!("offline clustering failed: {e}"));
            out.pending = cs.buffer.clone();
            out.pending.extend(
                state
                    .assignments
                    .iter()
                    .filter(|a| matches!(a.target, AssignTarget::Cluster(_)))
                    .map(|a| a.item_id.clone()),
            );
            out.quarantine = state.quarantine.clone();
            out.cluster_set = Some(state.cluster_set.clone());
            out.checkpoint = Some(state);
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    out.notes.extend(offline.notes);
    out.quarantine = state.quarantine.clone();
    out.quarantine.extend(offline.quarantined);

    let scores: HashMap<&str, f64> = state.assignments.iter().map(|a| (a.item_id.as_str(), a.score)).collect();
    let tool = match cs.mode {
        ClusterMode::Embedding => EMBEDDING_TOOL,
        ClusterMode::Memory => MEMORY_TOOL,
    };
    let mut home: HashMap<&str, usize> = HashMap::new();
    for (ci, c) in cs.clusters.iter().enumerate() {
        for m in &c.member_ids {
            home.insert(m.as_str(), ci);
        }
    }
    // With m = 0 the offline stage opens no clusters; buffered items stay
    // new-sub-issue positives without a cluster.
    let leftover: HashSet<&str> = cs.buffer.iter().filter(|id| !home.contains_key(id.as_str())).map(String::as_str).collect();
    if !leftover.is_empty() {
        out.notes.push(format!("{} buffered items left unclustered (m = {})", leftover.len(), cs.m));
    }
    for tracked in uncovered {
        let Some(&ci) = home.get(tracked.item.id.as_str()) else {
            if leftover.contains(tracked.item.id.as_str()) {
                let score = scores.get(tracked.item.id.as_str()).copied().unwrap_or(0.0);
                let rationale = format!("no existing cluster matched and no new cluster was requested (m = {})", cs.m);
                let confidence = match cs.mode {
                    ClusterMode::Embedding => (1.0 - score).clamp(0.0, 1.0),
                    ClusterMode::Memory => score.clamp(0.0, 1.0),
                };
                let s = step(Phase::Clustering, "new_sub_issue".to_string(), confidence, Some(tool), rationale);
                out.verdicts.push(tracked.settle(CaseLabel::NewSubIssuePositive, None, Some(UNCLUSTERED.to_string()), s));
            }
            continue;
        };
        let cluster = &cs.clusters[ci];
        let score = scores.get(tracked.item.id.as_str()).copied().unwrap_or(0.0);
        let verdict = if cluster.is_existing() {
            let rationale = match cs.mode {
                ClusterMode::Embedding => format!("max cosine {score:.4} >= delta {:.2}", cs.delta),
                ClusterMode::Memory => "judge selected an existing synopsis".to_string(),
            };
            let s = step(Phase::Clustering, format!("variant:{}", cluster.id), score.clamp(0.0, 1.0), Some(tool), rationale);
            tracked.settle(CaseLabel::VariantPositive, Some(cluster.id.clone()), Some(cluster.id.clone()), s)
        } else {
            let rationale = match cs.mode {
                ClusterMode::Embedding => format!("max cosine {score:.4} < delta {:.2}; offline cluster {}", cs.delta, cluster.id),
                ClusterMode::Memory => format!("no synopsis matched; offline cluster {}", cluster.id),
            };
            let confidence = match cs.mode {
                ClusterMode::Embedding => (1.0 - score).clamp(0.0, 1.0),
                ClusterMode::Memory => score.clamp(0.0, 1.0),
            };
            let s = step(Phase::Clustering, format!("new:{}", cluster.id), confidence, Some(tool), rationale);
            tracked.settle(CaseLabel::NewSubIssuePositive, None, Some(cluster.id.clone()), s)
        };
        out.verdicts.push(verdict);
    }
    cs.check_partition()?;
    out.cluster_set = Some(cs);
    Ok(out)
}
