use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{ari, binary_metrics, case_labels, classification_metrics, Confusion, MetricsBlock};
use crate::backends::{BackendError, Backends};
use crate::clustering::{EmbeddingCache, QuarantineEntry};
use crate::error::{Error, Result};
use crate::pipeline::{phase1_recall, phase2_coverage, phase3_cluster, run_pipeline, PipelineConfig, StreamControl, Tracked};
use crate::types::{CaseLabel, GoldLabel, Item, PolicyDoc, Verdict};

/// Gold label as seen by the pipeline for `issue_id`: labels that belong to
/// another issue count as negatives.
pub fn gold_for_issue(item: &Item, issue_id: &str) -> Option<GoldLabel> {
    let gold = item.gold.as_ref()?;
    match &gold.issue_id {
        Some(other) if other != issue_id => Some(GoldLabel::new(CaseLabel::Negative)),
        _ => Some(gold.clone()),
    }
}

/// End-to-end scores of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Quarantined items left out.
    pub excluded: MetricsBlock,
    /// Quarantined items counted as wrong: positives as Case 1, negatives
    /// as Case 4.
    pub worst_case: MetricsBlock,
    pub scored: usize,
    pub quarantined: usize,
    pub pending: usize,
    /// Agreement of Case-3/4 cluster ids with gold sub-issue groups, over
    /// gold Case-3/4 items that received a Case-3/4 verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase3_ari: Option<f64>,
}

fn worst_prediction(gold: CaseLabel) -> CaseLabel {
    if gold.is_positive() {
        CaseLabel::Negative
    } else {
        CaseLabel::NewSubIssuePositive
    }
}

/// Score verdicts for `issue_id` against gold labels. `None` when no batch
/// item has gold.
pub fn score_verdicts(
    batch: &[Item],
    verdicts: &[Verdict],
    quarantine: &[QuarantineEntry],
    issue_id: &str,
) -> Result<Option<RunMetrics>> {
    let gold: HashMap<&str, GoldLabel> =
        batch.iter().filter_map(|it| Some((it.id.as_str(), gold_for_issue(it, issue_id)?))).collect();
    if gold.is_empty() {
        return Ok(None);
    }
    let labels = case_labels();
    let mut excluded = Confusion::zeros(labels.clone());
    let mut worst = Confusion::zeros(labels);
    let mut scored = 0;
    let mut cluster_pred: Vec<&str> = Vec::new();
    let mut cluster_gold: Vec<String> = Vec::new();
    for v in verdicts {
        let Some(g) = gold.get(v.item_id.as_str()) else { continue };
        excluded.add(g.case.index(), v.case.index());
        worst.add(g.case.index(), v.case.index());
        scored += 1;
        let gold_grouped = matches!(g.case, CaseLabel::VariantPositive | CaseLabel::NewSubIssuePositive);
        if let (true, Some(cid), Some(key)) = (gold_grouped, v.cluster_id.as_deref(), g.group_key()) {
            cluster_pred.push(cid);
            cluster_gold.push(key);
        }
    }
    let mut quarantined = 0;
    for q in quarantine {
        if let Some(g) = gold.get(q.item_id.as_str()) {
            worst.add(g.case.index(), worst_prediction(g.case).index());
            quarantined += 1;
        }
    }
    let phase3_ari = if cluster_pred.len() >= 2 { Some(ari(&cluster_pred, &cluster_gold)?) } else { None };
    let mut excluded = classification_metrics(&excluded);
    excluded.ari = phase3_ari;
    let pending = gold.len() - scored - quarantined;
    Ok(Some(RunMetrics { excluded, worst_case: classification_metrics(&worst), scored, quarantined, pending, phase3_ari }))
}

/// Run the full pipeline and score it against gold, quarantine both ways.
pub fn end_to_end_eval(batch: &[Item], policy: &PolicyDoc, config: &PipelineConfig, backends: &Backends) -> Result<RunMetrics> {
    require_gold(batch)?;
    let report = run_pipeline(batch, policy, config, backends)?;
    score_verdicts(batch, &report.verdicts, &report.quarantine, &policy.issue_id)?
        .ok_or_else(|| Error::invalid("corpus has no gold labels"))
}

fn require_gold(batch: &[Item]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("evaluation needs a nonempty corpus"));
    }
    if let Some(item) = batch.iter().find(|i| i.gold.is_none()) {
        return Err(Error::invalid(format!("item {} has no gold label", item.id)));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInputs {
    pub phase1: usize,
    pub phase2: usize,
    pub phase3: usize,
    /// Must be zero: Phase 2 sees only gold positives.
    pub phase2_gold_case1: usize,
    /// Must be zero: Phase 3 sees only gold Case-3/4 items.
    pub phase3_gold_case12: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleStats {
    pub runs: usize,
    pub ari: Vec<f64>,
    pub ari_mean: f64,
    pub ari_stdev: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseWiseReport {
    /// Negative against positive on the whole corpus.
    pub phase1: MetricsBlock,
    /// Covered against uncovered on gold Cases 2-4.
    pub phase2: MetricsBlock,
    /// Case 3 against Case 4 on gold Cases 3-4; `ari` compares clusters
    /// with gold sub-issue groups.
    pub phase3: MetricsBlock,
    pub inputs: PhaseInputs,
    pub quarantined: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffled: Option<ShuffleStats>,
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluate each phase on clean input: every phase receives exactly the
/// gold items it is meant to see, so errors do not propagate. With
/// `shuffles > 0` Phase 3 is repeated on seeded permutations of its input.
pub fn phase_wise_eval(
    batch: &[Item],
    policy: &PolicyDoc,
    config: &PipelineConfig,
    backends: &Backends,
    shuffles: usize,
) -> Result<PhaseWiseReport> {
    require_gold(batch)?;
    policy.validate()?;
    config.validate()?;
    let issue = policy.issue_id.as_str();
    let gold: HashMap<&str, GoldLabel> =
        batch.iter().map(|it| (it.id.as_str(), gold_for_issue(it, issue).expect("gold checked"))).collect();
    let mut inputs = PhaseInputs::default();
    let mut quarantined = BTreeMap::new();

    // Phase 1 on everything.
    let tracked: Vec<Tracked> = batch.iter().map(|i| Tracked::new(i.view())).collect();
    inputs.phase1 = tracked.len();
    let p1 = phase1_recall(tracked, policy, backends, config);
    quarantined.insert("phase1".to_string(), p1.quarantine.len());
    let labels = vec!["negative".to_string(), "positive".to_string()];
    let mut m1 = Confusion::zeros(labels);
    for v in &p1.settled {
        m1.add(usize::from(gold[v.item_id.as_str()].case.is_positive()), 0);
    }
    for t in &p1.forward {
        m1.add(usize::from(gold[t.item.id.as_str()].case.is_positive()), 1);
    }
    let phase1 = binary_metrics(&m1, "positive")?;

    // Phase 2 on gold positives only.
    let p2_input: Vec<Tracked> = batch
        .iter()
        .filter(|i| gold[i.id.as_str()].case.is_positive())
        .map(|i| Tracked::new(i.view()))
        .collect();
    inputs.phase2 = p2_input.len();
    inputs.phase2_gold_case1 = p2_input.iter().filter(|t| gold[t.item.id.as_str()].case == CaseLabel::Negative).count();
    if inputs.phase2_gold_case1 != 0 {
        return Err(Error::Invariant("Phase-2 input contains gold Case-1 items".into()));
    }
    let p2 = phase2_coverage(p2_input, policy, backends, config);
    quarantined.insert("phase2".to_string(), p2.quarantine.len());
    let mut m2 = Confusion::zeros(vec!["covered".into(), "uncovered".into()]);
    let covered_gold = |id: &str| usize::from(gold[id].case != CaseLabel::CoveredPositive);
    for v in &p2.settled {
        m2.add(covered_gold(&v.item_id), 0);
    }
    for t in &p2.forward {
        m2.add(covered_gold(&t.item.id), 1);
    }
    let phase2 = binary_metrics(&m2, "covered")?;

    // Phase 3 on gold Cases 3/4 only.
    let p3_items: Vec<&Item> = batch
        .iter()
        .filter(|i| matches!(gold[i.id.as_str()].case, CaseLabel::VariantPositive | CaseLabel::NewSubIssuePositive))
        .collect();
    inputs.phase3 = p3_items.len();
    inputs.phase3_gold_case12 = p3_items
        .iter()
        .filter(|i| matches!(gold[i.id.as_str()].case, CaseLabel::Negative | CaseLabel::CoveredPositive))
        .count();
    if inputs.phase3_gold_case12 != 0 {
        return Err(Error::Invariant("Phase-3 input contains gold Case-1/2 items".into()));
    }
    let base_ns = config.namespace(issue);
    let run3 = |items: &[&Item], tag: &str| -> Result<(MetricsBlock, usize)> {
        let mut cfg = config.clone();
        cfg.memory_namespace = Some(format!("{base_ns}/{tag}"));
        let tracked = items.iter().map(|i| Tracked::new(i.view())).collect();
        let mut cache = EmbeddingCache::new();
        let out = phase3_cluster(tracked, policy, backends, &cfg, StreamControl::default(), &mut cache)?;
        if out.checkpoint.is_some() {
            return Err(BackendError::unavailable("backend outage during phase-wise clustering").into());
        }
        let mut m = Confusion::zeros(vec!["case3".into(), "case4".into()]);
        let mut pred_clusters: Vec<&str> = Vec::new();
        let mut gold_groups: Vec<String> = Vec::new();
        for v in &out.verdicts {
            let g = &gold[v.item_id.as_str()];
            let gi = usize::from(g.case == CaseLabel::NewSubIssuePositive);
            let pi = usize::from(v.case == CaseLabel::NewSubIssuePositive);
            m.add(gi, pi);
            if let (Some(c), Some(k)) = (v.cluster_id.as_deref(), g.group_key()) {
                pred_clusters.push(c);
                gold_groups.push(k);
            }
        }
        let mut block = binary_metrics(&m, "case3")?;
        block.ari = if pred_clusters.len() >= 2 { Some(ari(&pred_clusters, &gold_groups)?) } else { None };
        Ok((block, out.quarantine.len()))
    };
    let (phase3, q3) = run3(&p3_items, "phase-wise")?;
    quarantined.insert("phase3".to_string(), q3);

    let shuffled = if shuffles > 0 {
        let mut aris = Vec::with_capacity(shuffles);
        let mut f1s = Vec::with_capacity(shuffles);
        for r in 0..shuffles {
            let mut order = p3_items.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64 + 1));
            order.shuffle(&mut rng);
            let (block, _) = run3(&order, &format!("shuffle-{r}"))?;
            aris.push(block.ari.unwrap_or(0.0));
            f1s.push(block.macro_f1);
        }
        let (ari_mean, ari_stdev) = mean_stdev(&aris);
        let (macro_f1_mean, macro_f1_stdev) = mean_stdev(&f1s);
        Some(ShuffleStats { runs: shuffles, ari: aris, ari_mean, ari_stdev, macro_f1_mean, macro_f1_stdev })
    } else {
        None
    };

    Ok(PhaseWiseReport { phase1, phase2, phase3, inputs, quarantined, shuffled })
}
