//! Domain types shared by every stage of the engine: items, policies, case
//! labels and verdicts, plus corpus validation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical text channels, in the order they are concatenated for embedding.
pub const TEXT_CHANNELS: [&str; 4] = ["title", "stickers", "ocr", "asr"];

/// Four-way outcome for one item with respect to one issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CaseLabel {
    /// Normal content, unrelated to the issue.
    Negative = 1,
    /// Positive and explicitly covered by an existing sub-issue definition.
    CoveredPositive = 2,
    /// Positive, belongs to an existing sub-issue but is a new variant of it.
    VariantPositive = 3,
    /// Positive, does not belong to any existing sub-issue.
    NewSubIssuePositive = 4,
}

impl CaseLabel {
    pub const ALL: [CaseLabel; 4] = [
        CaseLabel::Negative,
        CaseLabel::CoveredPositive,
        CaseLabel::VariantPositive,
        CaseLabel::NewSubIssuePositive,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Zero-based index, handy for confusion matrices.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(CaseLabel::Negative),
            2 => Ok(CaseLabel::CoveredPositive),
            3 => Ok(CaseLabel::VariantPositive),
            4 => Ok(CaseLabel::NewSubIssuePositive),
            other => Err(Error::InvalidInput(format!("case label must be 1..=4, got {other}"))),
        }
    }

    pub fn is_positive(self) -> bool {
        self != CaseLabel::Negative
    }
}

impl TryFrom<u8> for CaseLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        CaseLabel::from_number(value)
    }
}

impl From<CaseLabel> for u8 {
    fn from(value: CaseLabel) -> u8 {
        value.number()
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case{}", self.number())
    }
}

/// Evaluation-only ground truth attached to an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub case: CaseLabel,
    /// Sub-issue the item belongs to; present exactly for cases 2 and 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_issue_id: Option<String>,
    /// Planted new-sub-issue tag for case-4 items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel_tag: Option<String>,
    /// Issue the label refers to. `None` means the corpus's single issue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_id: Option<String>,
}

impl GoldLabel {
    pub fn new(case: CaseLabel) -> Self {
        Self { case, sub_issue_id: None, novel_tag: None, issue_id: None }
    }

    pub fn with_sub_issue(mut self, sub_issue_id: impl Into<String>) -> Self {
        self.sub_issue_id = Some(sub_issue_id.into());
        self
    }

    pub fn with_novel_tag(mut self, tag: impl Into<String>) -> Self {
        self.novel_tag = Some(tag.into());
        self
    }

    /// Ground-truth sub-issue grouping key used for clustering agreement.
    pub fn group_key(&self) -> Option<String> {
        match self.case {
            CaseLabel::CoveredPositive | CaseLabel::VariantPositive => self.sub_issue_id.clone(),
            CaseLabel::NewSubIssuePositive => self.novel_tag.as_ref().map(|t| format!("new:{t}")),
            CaseLabel::Negative => None,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let needs_sub = matches!(self.case, CaseLabel::CoveredPositive | CaseLabel::VariantPositive);
        match (needs_sub, self.sub_issue_id.is_some()) {
            (true, false) => Err(format!("{} requires sub_issue_id", self.case)),
            (false, true) => Err(format!("{} must not carry sub_issue_id", self.case)),
            _ => Ok(()),
        }
    }
}

/// A content record. Gold labels ride along but pipeline stages only ever
/// see an [`ItemView`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    #[serde(default)]
    pub text_channels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_vectors: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldLabel>,
}

impl Item {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), text_channels: BTreeMap::new(), channel_vectors: None, gold: None }
    }

    pub fn with_text(mut self, channel: impl Into<String>, text: impl Into<String>) -> Self {
        self.text_channels.insert(channel.into(), text.into());
        self
    }

    pub fn with_vector(mut self, channel: impl Into<String>, values: Vec<f64>) -> Self {
        self.channel_vectors.get_or_insert_with(BTreeMap::new).insert(channel.into(), values);
        self
    }

    pub fn with_gold(mut self, gold: GoldLabel) -> Self {
        self.gold = Some(gold);
        self
    }

    /// Gold-stripped view handed to pipeline stages.
    pub fn view(&self) -> ItemView {
        ItemView {
            id: self.id.clone(),
            text_channels: self.text_channels.clone(),
            channel_vectors: self.channel_vectors.clone().unwrap_or_default(),
        }
    }
}

/// An item as the pipeline sees it: no gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    #[serde(default)]
    pub text_channels: BTreeMap<String, String>,
    #[serde(default)]
    pub channel_vectors: BTreeMap<String, Vec<f64>>,
}

impl ItemView {
    /// Text channels joined in canonical order (title, stickers, ocr, asr,
    /// then any extra channels alphabetically). Blank channels are skipped.
    pub fn combined_text(&self) -> String {
        let known = TEXT_CHANNELS.iter().filter_map(|c| self.text_channels.get(*c));
        let extra = self
            .text_channels
            .iter()
            .filter(|(k, _)| !TEXT_CHANNELS.contains(&k.as_str()))
            .map(|(_, v)| v);
        known
            .chain(extra)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn has_content(&self) -> bool {
        !self.channel_vectors.is_empty() || !self.combined_text().is_empty()
    }
}

/// One sub-issue of an annotation policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubIssue {
    pub id: String,
    pub name: String,
    pub definition: String,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default = "one")]
    pub version: u32,
}

fn one() -> u32 {
    1
}

/// Annotation policy for one issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDoc {
    pub issue_id: String,
    pub issue_name: String,
    pub essential_logic: Vec<String>,
    pub sub_issues: Vec<SubIssue>,
    #[serde(default = "one")]
    pub version: u32,
}

impl PolicyDoc {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.issue_id.trim().is_empty() {
            problems.push("issue_id is empty".to_string());
        }
        if self.essential_logic.iter().all(|p| p.trim().is_empty()) {
            problems.push("essential_logic is empty".to_string());
        }
        if self.sub_issues.is_empty() {
            problems.push("sub_issues is empty".to_string());
        }
        if self.version == 0 {
            problems.push("version must be >= 1".to_string());
        }
        let mut seen = HashMap::new();
        for sub in &self.sub_issues {
            if sub.id.trim().is_empty() {
                problems.push("sub-issue with empty id".to_string());
            }
            if seen.insert(sub.id.as_str(), ()).is_some() {
                problems.push(format!("duplicate sub-issue id {:?}", sub.id));
            }
            if sub.definition.trim().is_empty() {
                problems.push(format!("sub-issue {:?} has an empty definition", sub.id));
            }
            if sub.version == 0 {
                problems.push(format!("sub-issue {:?} has version 0", sub.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid policy: {}", problems.join("; "))))
        }
    }

    pub fn sub_issue(&self, id: &str) -> Option<&SubIssue> {
        self.sub_issues.iter().find(|s| s.id == id)
    }

    pub fn contains_sub_issue(&self, id: &str) -> bool {
        self.sub_issue(id).is_some()
    }
}

/// Pipeline stage that produced a trail entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Recall,
    Coverage,
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStep {
    pub phase: Phase,
    pub decision: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_used: Option<String>,
    pub rationale: String,
}

/// Final per-item outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: String,
    pub case: CaseLabel,
    /// Covered sub-issue for case 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_issue_id: Option<String>,
    /// Cluster for cases 3 and 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
    pub phase_trail: Vec<PhaseStep>,
}

/// Corpus header line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub dim: usize,
    pub channels: Vec<String>,
    pub corpus_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub items: Vec<Item>,
}

impl Corpus {
    pub fn views(&self) -> Vec<ItemView> {
        self.items.iter().map(Item::view).collect()
    }

    pub fn has_gold(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|i| i.gold.is_some())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_items(&self.items, Some(self.header.dim))
    }

    /// Parse the JSON-lines corpus format: a header object followed by one
    /// item per line. Blank lines are ignored.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) =
            lines.next().ok_or_else(|| Error::InvalidInput("corpus file is empty".into()))?;
        let header: CorpusHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::InvalidInput(format!("corpus header: {e}")))?;
        let items = lines
            .map(|(n, line)| {
                serde_json::from_str::<Item>(line)
                    .map_err(|e| Error::InvalidInput(format!("corpus line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, items })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    EmptyId { index: usize },
    DuplicateId { id: String },
    DimensionMismatch { id: String, channel: String, expected: usize, found: usize },
    NonFiniteVector { id: String, channel: String },
    InvalidGold { id: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_accepted() {
            return Ok(());
        }
        let detail = self
            .issues
            .iter()
            .map(|i| serde_json::to_string(i).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::InvalidInput(format!("corpus rejected: {detail}")))
    }
}

/// Check ids, vector dimensions and gold labels. When `dim` is `None` the
/// first vector seen fixes the expected dimension.
pub fn validate_items(items: &[Item], dim: Option<usize>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut expected = dim;
    for (index, item) in items.iter().enumerate() {
        if item.id.is_empty() {
            report.issues.push(ValidationIssue::EmptyId { index });
        } else {
            *counts.entry(item.id.as_str()).or_default() += 1;
        }
        for (channel, values) in item.channel_vectors.iter().flatten() {
            let want = *expected.get_or_insert(values.len());
            if values.len() != want || values.is_empty() {
                report.issues.push(ValidationIssue::DimensionMismatch {
                    id: item.id.clone(),
                    channel: channel.clone(),
                    expected: want,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                report.issues.push(ValidationIssue::NonFiniteVector {
                    id: item.id.clone(),
                    channel: channel.clone(),
                });
            }
        }
        if let Some(Err(reason)) = item.gold.as_ref().map(GoldLabel::check) {
            report.issues.push(ValidationIssue::InvalidGold { id: item.id.clone(), reason });
        }
    }
    for (id, n) in counts {
        if n > 1 {
            report.issues.push(ValidationIssue::DuplicateId { id: id.to_string() });
        }
    }
    report
}

/// Validation entry point over a bare item list.
pub fn validate_corpus(items: &[Item]) -> ValidationReport {
    validate_items(items, None)
}
