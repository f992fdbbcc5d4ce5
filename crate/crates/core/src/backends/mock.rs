//! Deterministic test doubles keyed on gold labels and planted tokens.
//!
//! These are the only backends allowed to look at gold labels. They receive
//! them explicitly through a [`MockOracle`] built from the corpus, never
//! through the item views the pipeline passes around.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::{
    tokenize, unit_hash, BackendError, BackendResult, CoverageDecision, GovernanceModel, Judge, JudgeAnswer,
    NoveltyDecision, RecallDecision, Selection, Synopsis,
};
use crate::types::{CaseLabel, Corpus, GoldLabel, ItemView, PolicyDoc};

pub const CLEAN_CONFIDENCE: f64 = 0.95;
pub const FLIPPED_CONFIDENCE: f64 = 0.55;
const SUMMARY_TOP_TOKENS: usize = 3;
const FALLBACK_SUMMARY_TOKENS: usize = 8;

/// Gold labels and the planted-token lexicon the mocks key on.
#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    gold: HashMap<String, GoldLabel>,
    planted: BTreeSet<String>,
}

impl MockOracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gold labels from the corpus; planted tokens are the policy's sub-issue
    /// ids plus every gold sub-issue id and novel tag.
    pub fn from_corpus(corpus: &Corpus, policy: &PolicyDoc) -> Self {
        let mut oracle = Self::new().with_planted(policy.sub_issues.iter().map(|s| s.id.clone()));
        for item in &corpus.items {
            if let Some(gold) = &item.gold {
                oracle.planted.extend(gold.sub_issue_id.iter().chain(&gold.novel_tag).map(|t| t.to_lowercase()));
                oracle.gold.insert(item.id.clone(), gold.clone());
            }
        }
        oracle
    }

    pub fn with_gold(mut self, item_id: impl Into<String>, gold: GoldLabel) -> Self {
        self.gold.insert(item_id.into(), gold);
        self
    }

    pub fn with_planted<I, S>(mut self, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.planted.extend(tokens.into_iter().map(|t| t.into().to_lowercase()));
        self
    }

    pub fn planted_tokens(&self) -> &BTreeSet<String> {
        &self.planted
    }

    /// Gold case with respect to `issue_id`; labels for another issue read
    /// as negative.
    fn gold_for(&self, item_id: &str, issue_id: &str) -> Option<GoldLabel> {
        let gold = self.gold.get(item_id)?;
        match &gold.issue_id {
            Some(other) if other != issue_id => Some(GoldLabel::new(CaseLabel::Negative)),
            _ => Some(gold.clone()),
        }
    }

    /// Planted tokens of `text` in order of first appearance.
    fn planted_in(&self, text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in tokenize(text) {
            if self.planted.contains(&t) && !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    fn counts_in<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for text in texts {
            for t in tokenize(text) {
                if self.planted.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        counts
    }

    /// Most frequent planted token of an item; ties go to the smallest token.
    fn dominant_token(&self, item: &ItemView) -> Option<String> {
        let counts = self.counts_in([item.combined_text().as_str()]);
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|(_, c)| *c == best).map(|(t, _)| t)
    }
}

/// Judge double. Clean answers follow the gold labels; with `noise_rate > 0`
/// the items whose seeded id hash falls below the rate get the opposite
/// decision at reduced confidence.
#[derive(Debug, Clone)]
pub struct MockJudge {
    oracle: Arc<MockOracle>,
    noise_rate: f64,
    seed: u64,
}

impl MockJudge {
    pub fn new(oracle: Arc<MockOracle>) -> Self {
        Self { oracle, noise_rate: 0.0, seed: 0 }
    }

    pub fn with_noise(mut self, noise_rate: f64, seed: u64) -> Self {
        self.noise_rate = noise_rate;
        self.seed = seed;
        self
    }

    /// Whether the answer for `op` on `item_id` is flipped.
    pub fn is_flipped(&self, op: &str, item_id: &str) -> bool {
        self.noise_rate > 0.0 && unit_hash(self.seed, op, item_id) < self.noise_rate
    }

    fn confidence(&self, flipped: bool) -> f64 {
        if flipped {
            FLIPPED_CONFIDENCE
        } else {
            CLEAN_CONFIDENCE
        }
    }

    fn sub_issue_hint(&self, item: &ItemView, policy: &PolicyDoc) -> Option<String> {
        let planted = self.oracle.planted_in(&item.combined_text());
        policy.sub_issues.iter().find(|s| planted.contains(&s.id.to_lowercase())).map(|s| s.id.clone())
    }
}

impl Judge for MockJudge {
    fn recall(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<RecallDecision>> {
        if policy.essential_logic.is_empty() {
            return Err(BackendError::precondition("policy has no essential logic"));
        }
        let positive = match self.oracle.gold_for(&item.id, &policy.issue_id) {
            Some(gold) => gold.case.is_positive(),
            None => !self.oracle.planted_in(&item.combined_text()).is_empty(),
        };
        let flipped = self.is_flipped("recall", &item.id);
        let decision = if positive != flipped { RecallDecision::Suspicious } else { RecallDecision::Normal };
        Ok(JudgeAnswer::new(decision, self.confidence(flipped), "mock recall keyed on gold case"))
    }

    fn coverage(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<CoverageDecision>> {
        let clean = match self.oracle.gold_for(&item.id, &policy.issue_id) {
            Some(GoldLabel { case: CaseLabel::CoveredPositive, sub_issue_id: Some(sub), .. })
                if policy.contains_sub_issue(&sub) =>
            {
                CoverageDecision::Covered { sub_issue_id: sub }
            }
            Some(GoldLabel { case: CaseLabel::CoveredPositive | CaseLabel::VariantPositive, sub_issue_id, .. }) => {
                CoverageDecision::Uncovered { best_guess: sub_issue_id.filter(|s| policy.contains_sub_issue(s)) }
            }
            Some(_) => CoverageDecision::Uncovered { best_guess: None },
            None => CoverageDecision::Uncovered { best_guess: self.sub_issue_hint(item, policy) },
        };
        let flipped = self.is_flipped("coverage", &item.id);
        let decision = match (clean, flipped) {
            (d, false) => d,
            (CoverageDecision::Covered { sub_issue_id }, true) => {
                CoverageDecision::Uncovered { best_guess: Some(sub_issue_id) }
            }
            (CoverageDecision::Uncovered { best_guess }, true) => {
                let fallback = || {
                    let n = policy.sub_issues.len();
                    let pick = (unit_hash(self.seed, "coverage-pick", &item.id) * n as f64) as usize;
                    policy.sub_issues[pick.min(n - 1)].id.clone()
                };
                CoverageDecision::Covered { sub_issue_id: best_guess.unwrap_or_else(fallback) }
            }
        };
        Ok(JudgeAnswer::new(decision, self.confidence(flipped), "mock coverage keyed on gold case"))
    }

    fn novelty(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<NoveltyDecision>> {
        let clean = match self.oracle.gold_for(&item.id, &policy.issue_id) {
            Some(GoldLabel { case: CaseLabel::NewSubIssuePositive, .. }) => NoveltyDecision::NewSubIssue,
            Some(GoldLabel { sub_issue_id, .. }) => NoveltyDecision::Variant { sub_issue_id },
            None => match self.sub_issue_hint(item, policy) {
                Some(sub) => NoveltyDecision::Variant { sub_issue_id: Some(sub) },
                None => NoveltyDecision::NewSubIssue,
            },
        };
        let flipped = self.is_flipped("novelty", &item.id);
        let decision = match (clean, flipped) {
            (d, false) => d,
            (NoveltyDecision::NewSubIssue, true) => NoveltyDecision::Variant { sub_issue_id: None },
            (NoveltyDecision::Variant { .. }, true) => NoveltyDecision::NewSubIssue,
        };
        Ok(JudgeAnswer::new(decision, self.confidence(flipped), "mock novelty keyed on gold case"))
    }

    /// Prior synopsis key tokens followed by the most frequent planted tokens
    /// of `texts`. Falls back to the leading tokens of the first text.
    fn summarize(&self, texts: &[String], prior: Option<&Synopsis>) -> BackendResult<String> {
        if texts.is_empty() {
            return Err(BackendError::precondition("summarize needs at least one text"));
        }
        let mut out: Vec<String> = prior.map(|p| self.oracle.planted_in(&p.text)).unwrap_or_default();
        let counts = self.oracle.counts_in(texts.iter().map(String::as_str));
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (token, _) in ranked.into_iter().take(SUMMARY_TOP_TOKENS) {
            if !out.contains(&token) {
                out.push(token);
            }
        }
        if out.is_empty() {
            out = texts.iter().flat_map(|t| tokenize(t)).take(FALLBACK_SUMMARY_TOKENS).collect();
        }
        if out.is_empty() {
            out.push("unspecified".into());
        }
        Ok(out.join(" "))
    }

    fn select(&self, item: &ItemView, synopses: &[Synopsis]) -> BackendResult<Selection> {
        if synopses.is_empty() {
            return Err(BackendError::precondition("select needs at least one synopsis"));
        }
        let tokens = self.oracle.planted_in(&item.combined_text());
        let mut best: Option<(&Synopsis, usize)> = None;
        for s in synopses {
            let shared = self.oracle.planted_in(&s.text).iter().filter(|t| tokens.contains(t)).count();
            if shared > 0 && best.is_none_or(|(_, b)| shared > b) {
                best = Some((s, shared));
            }
        }
        Ok(Selection { cluster_id: best.map(|(s, _)| s.cluster_id.clone()), confidence: CLEAN_CONFIDENCE })
    }

    /// Groups items by their dominant planted token; items without one form
    /// singleton groups. Group indices follow first appearance.
    fn cluster(&self, items: &[ItemView]) -> BackendResult<Vec<(String, usize)>> {
        if items.is_empty() {
            return Err(BackendError::precondition("cluster needs at least one item"));
        }
        let mut keys: Vec<String> = Vec::new();
        Ok(items
            .iter()
            .map(|item| {
                let key = self.oracle.dominant_token(item).unwrap_or_else(|| format!("\u{0}solo:{}", item.id));
                let group = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                    keys.push(key);
                    keys.len() - 1
                });
                (item.id.clone(), group)
            })
            .collect())
    }
}

/// Governance-model double: 0.95 for gold case-2 items, 0.05 otherwise.
#[derive(Debug, Clone)]
pub struct MockGovernance {
    oracle: Arc<MockOracle>,
    calibration_noise: f64,
    seed: u64,
}

impl MockGovernance {
    pub const COVERED: f64 = 0.95;
    pub const NOT_COVERED: f64 = 0.05;

    pub fn new(oracle: Arc<MockOracle>) -> Self {
        Self { oracle, calibration_noise: 0.0, seed: 0 }
    }

    /// Adds a seeded offset in `[-noise, noise]` to each score.
    pub fn with_calibration_noise(mut self, noise: f64, seed: u64) -> Self {
        self.calibration_noise = noise;
        self.seed = seed;
        self
    }
}

impl GovernanceModel for MockGovernance {
    fn score(&self, item: &ItemView, issue_id: &str) -> BackendResult<f64> {
        let covered = matches!(
            self.oracle.gold_for(&item.id, issue_id),
            Some(GoldLabel { case: CaseLabel::CoveredPositive, .. })
        );
        let base = if covered { Self::COVERED } else { Self::NOT_COVERED };
        if self.calibration_noise == 0.0 {
            return Ok(base);
        }
        let offset = (2.0 * unit_hash(self.seed, "governance", &item.id) - 1.0) * self.calibration_noise;
        Ok((base + offset).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use sha2::{Digest, Sha256};

    use super::*;
    use crate::types::{Item, SubIssue};

    fn policy() -> PolicyDoc {
        PolicyDoc {
            issue_id: "cb".into(),
            issue_name: "Clickbait".into(),
            essential_logic: vec!["engagement authenticity".into()],
            sub_issues: (1..=3)
                .map(|k| SubIssue {
                    id: format!("s{k}"),
                    name: format!("pattern {k}"),
                    definition: format!("content showing pattern s{k}"),
                    examples: vec![],
                    version: 1,
                })
                .collect(),
            version: 1,
        }
    }

    fn oracle_with(cases: &[(&str, GoldLabel)]) -> Arc<MockOracle> {
        let mut o = MockOracle::new().with_planted(["s1", "s2", "s3", "novel_7", "game_bait", "t1", "t2", "n1", "n2"]);
        for (id, g) in cases {
            o = o.with_gold(*id, g.clone());
        }
        Arc::new(o)
    }

    fn view(id: &str, text: &str) -> ItemView {
        Item::new(id).with_text("title", text).view()
    }

    #[test]
    fn recall_follows_gold() {
        let judge = MockJudge::new(oracle_with(&[
            ("neg", GoldLabel::new(CaseLabel::Negative)),
            ("new", GoldLabel::new(CaseLabel::NewSubIssuePositive)),
        ]));
        let a = judge.recall(&view("neg", "x"), &policy()).unwrap();
        assert_eq!(a.decision, RecallDecision::Normal);
        assert!(a.confidence >= 0.9);
        assert_eq!(judge.recall(&view("new", "x"), &policy()).unwrap().decision, RecallDecision::Suspicious);
    }

    #[test]
    fn coverage_follows_gold() {
        let judge = MockJudge::new(oracle_with(&[
            ("c2", GoldLabel::new(CaseLabel::CoveredPositive).with_sub_issue("s3")),
            ("c3", GoldLabel::new(CaseLabel::VariantPositive).with_sub_issue("s1")),
            ("c4", GoldLabel::new(CaseLabel::NewSubIssuePositive)),
        ]));
        let p = policy();
        assert_eq!(
            judge.coverage(&view("c2", ""), &p).unwrap().decision,
            CoverageDecision::Covered { sub_issue_id: "s3".into() }
        );
        assert!(matches!(judge.coverage(&view("c3", ""), &p).unwrap().decision, CoverageDecision::Uncovered { .. }));
        assert!(matches!(judge.coverage(&view("c4", ""), &p).unwrap().decision, CoverageDecision::Uncovered { .. }));
    }

    #[test]
    fn noise_flips_exactly_the_low_hash_items() {
        let ids: Vec<String> = (0..500).map(|i| format!("item-{i}")).collect();
        let mut oracle = MockOracle::new();
        for id in &ids {
            oracle = oracle.with_gold(id.clone(), GoldLabel::new(CaseLabel::Negative));
        }
        let judge = MockJudge::new(Arc::new(oracle)).with_noise(0.1, 42);
        // Independent recomputation of the seeded hash.
        let expected: Vec<&String> = ids
            .iter()
            .filter(|id| {
                let mut h = Sha256::new();
                h.update(42u64.to_le_bytes());
                h.update(b"recall");
                h.update([0u8]);
                h.update(id.as_bytes());
                let d = h.finalize();
                let x = u64::from_be_bytes(d[..8].try_into().unwrap()) >> 11;
                (x as f64) / 9_007_199_254_740_992.0 < 0.1
            })
            .collect();
        let flipped: Vec<&String> = ids
            .iter()
            .filter(|id| {
                let a = judge.recall(&view(id, ""), &policy()).unwrap();
                a.decision == RecallDecision::Suspicious
            })
            .collect();
        assert_eq!(flipped, expected);
        assert!(!expected.is_empty());
        for id in &expected {
            assert_eq!(judge.recall(&view(id, ""), &policy()).unwrap().confidence, FLIPPED_CONFIDENCE);
        }
    }

    #[test]
    fn governance_two_point_output() {
        let oracle = oracle_with(&[
            ("c2", GoldLabel::new(CaseLabel::CoveredPositive).with_sub_issue("s1")),
            ("c3", GoldLabel::new(CaseLabel::VariantPositive).with_sub_issue("s1")),
        ]);
        let g = MockGovernance::new(oracle);
        assert_eq!(g.score(&view("c2", ""), "cb").unwrap(), 0.95);
        assert_eq!(g.score(&view("c3", ""), "cb").unwrap(), 0.05);
        assert_eq!(g.score(&view("unknown", ""), "cb").unwrap(), 0.05);
    }

    #[test]
    fn summarize_keeps_planted_tokens() {
        let judge = MockJudge::new(oracle_with(&[]));
        let texts: Vec<String> = (0..3).map(|i| format!("clip {i} with game_bait inside")).collect();
        assert!(judge.summarize(&texts, None).unwrap().contains("game_bait"));
        let prior = Synopsis { cluster_id: "c".into(), text: "t1".into(), version: 1 };
        let out = judge.summarize(&["about t2".to_string()], Some(&prior)).unwrap();
        assert!(out.contains("t1") && out.contains("t2"));
        assert_eq!(out, judge.summarize(&["about t2".to_string()], Some(&prior)).unwrap());
    }

    #[test]
    fn select_matches_planted_tokens() {
        let judge = MockJudge::new(oracle_with(&[]));
        let syns: Vec<Synopsis> = (1..=3)
            .map(|k| Synopsis { cluster_id: format!("s{k}"), text: format!("s{k} pattern"), version: 1 })
            .collect();
        assert_eq!(judge.select(&view("a", "looks like s2"), &syns).unwrap().cluster_id.as_deref(), Some("s2"));
        assert_eq!(judge.select(&view("b", "novel_7 stuff"), &syns).unwrap().cluster_id, None);
        assert!(matches!(judge.select(&view("c", "s1"), &[]), Err(BackendError::Precondition { .. })));
    }

    #[test]
    fn cluster_groups_by_token() {
        let judge = MockJudge::new(oracle_with(&[]));
        let items = [view("a", "n1"), view("b", "n1 x"), view("c", "n2")];
        let groups: Vec<usize> = judge.cluster(&items).unwrap().into_iter().map(|(_, g)| g).collect();
        assert_eq!(groups, vec![0, 0, 1]);
        assert_eq!(judge.cluster(&items[..1]).unwrap(), vec![("a".to_string(), 0)]);
    }

    #[test]
    fn foreign_issue_labels_read_negative() {
        let mut gold = GoldLabel::new(CaseLabel::NewSubIssuePositive);
        gold.issue_id = Some("other".into());
        let judge = MockJudge::new(oracle_with(&[("x", gold)]));
        assert_eq!(judge.recall(&view("x", ""), &policy()).unwrap().decision, RecallDecision::Normal);
    }
}
