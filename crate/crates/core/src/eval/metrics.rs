use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CaseLabel;

/// Square confusion matrix; `counts[g][p]` is the number of items with gold
/// class `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![vec![0; n]; n] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold][pred] += 1;
    }

    /// Build from index pairs over `labels`.
    pub fn from_indices(labels: Vec<String>, gold: &[usize], pred: &[usize]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::invalid(format!("{} gold labels vs {} predictions", gold.len(), pred.len())));
        }
        let mut m = Self::zeros(labels);
        let n = m.labels.len();
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= n || p >= n {
                return Err(Error::invalid("label index out of range"));
            }
            m.add(g, p);
        }
        Ok(m)
    }
}

pub fn case_labels() -> Vec<String> {
    CaseLabel::ALL.iter().map(|c| c.to_string()).collect()
}

/// Four-class confusion matrix over case labels.
pub fn confusion(pred: &[CaseLabel], gold: &[CaseLabel]) -> Result<Confusion> {
    let g: Vec<usize> = gold.iter().map(|c| c.index()).collect();
    let p: Vec<usize> = pred.iter().map(|c| c.index()).collect();
    Confusion::from_indices(case_labels(), &g, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// Macro-averaged, or the positive class's value for binary blocks.
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 with the zero-denominator-is-zero
/// convention. Macro averages run over the classes that occur in gold or in
/// predictions; absent classes are reported with zeros and no weight.
pub fn classification_metrics(m: &Confusion) -> MetricsBlock {
    let k = m.labels.len();
    let mut per_class = BTreeMap::new();
    let mut present = Vec::new();
    let total = m.total();
    let mut weighted = 0.0;
    for c in 0..k {
        let tp = m.counts[c][c];
        let support: u64 = m.counts[c].iter().sum();
        let predicted: u64 = (0..k).map(|g| m.counts[g][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let cm = ClassMetrics { precision, recall, f1, support };
        if support > 0 || predicted > 0 {
            present.push(cm);
        }
        weighted += support as f64 * f1;
        per_class.insert(m.labels[c].clone(), cm);
    }
    let avg = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(f).sum::<f64>() / present.len() as f64
        }
    };
    MetricsBlock {
        macro_f1: avg(|c| c.f1),
        weighted_f1: if total == 0 { 0.0 } else { weighted / total as f64 },
        precision: avg(|c| c.precision),
        recall: avg(|c| c.recall),
        accuracy: ratio(m.diagonal(), total),
        n: total,
        per_class,
        positive_class: None,
        ari: None,
    }
}

/// Binary block whose headline precision and recall are those of `positive`.
pub fn binary_metrics(m: &Confusion, positive: &str) -> Result<MetricsBlock> {
    let mut block = classification_metrics(m);
    let pos = *block
        .per_class
        .get(positive)
        .ok_or_else(|| Error::invalid(format!("unknown positive class {positive:?}")))?;
    block.precision = pos.precision;
    block.recall = pos.recall;
    block.positive_class = Some(positive.to_string());
    Ok(block)
}

fn choose2(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index from the contingency table. Two partitions that are
/// both trivial in the same way (all one cluster, or all singletons) score 1.
pub fn ari<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    if n < 2 {
        return Err(Error::invalid("ARI needs at least two items"));
    }
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: u128 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: u128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: u128 = cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(n) as f64;
    let expected = sum_a as f64 * sum_b as f64 / pairs;
    let max = (sum_a + sum_b) as f64 / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use CaseLabel::*;

    #[test]
    fn perfect_predictions() {
        let gold = [Negative, CoveredPositive, VariantPositive, NewSubIssuePositive, Negative];
        let m = confusion(&gold, &gold).unwrap();
        assert_eq!(m.diagonal(), 5);
        let b = classification_metrics(&m);
        assert_eq!(b.macro_f1, 1.0);
        assert_eq!(b.weighted_f1, 1.0);
    }

    #[test]
    fn all_wrong_lands_in_one_cell() {
        let gold = vec![NewSubIssuePositive; 7];
        let pred = vec![Negative; 7];
        let m = confusion(&pred, &gold).unwrap();
        assert_eq!(m.counts[3][0], 7);
        assert_eq!(m.diagonal(), 0);
    }

    #[test]
    fn length_mismatch_is_invalid() {
        assert!(confusion(&[Negative], &[]).is_err());
        assert!(ari(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn two_class_hand_case() {
        let gold = [Negative, Negative, CoveredPositive, CoveredPositive];
        let pred = [Negative, CoveredPositive, CoveredPositive, CoveredPositive];
        let b = classification_metrics(&confusion(&pred, &gold).unwrap());
        let c1 = b.per_class["case1"];
        let c2 = b.per_class["case2"];
        assert_eq!((c1.precision, c1.recall), (1.0, 0.5));
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((c2.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((c2.f1 - 0.8).abs() < 1e-12);
        assert!((b.macro_f1 - 0.733333).abs() < 1e-6);
        let absent = b.per_class["case3"];
        assert_eq!((absent.precision, absent.recall, absent.f1, absent.support), (0.0, 0.0, 0.0, 0));
    }

    #[test]
    fn single_class_weighted_equals_its_f1() {
        let mut m = Confusion::zeros(vec!["a".into(), "b".into()]);
        m.counts[0][0] = 3;
        m.counts[0][1] = 2;
        let b = classification_metrics(&m);
        assert!((b.weighted_f1 - b.per_class["a"].f1).abs() < 1e-12);
    }

    #[test]
    fn ari_fixed_cases() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(ari(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 2], &["x", "y", "z"]).unwrap(), 1.0);
    }

    #[test]
    fn binary_block_reports_positive_class() {
        let m = Confusion::from_indices(vec!["neg".into(), "pos".into()], &[0, 1, 1, 1], &[1, 1, 1, 0]).unwrap();
        let b = binary_metrics(&m, "pos").unwrap();
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!(binary_metrics(&m, "nope").is_err());
    }
}
