//! Deterministic synthetic corpora with planted ground truth.
//!
//! Every sub-issue `k` gets a unit prototype `p_k`; every novel group `g`
//! gets a prototype `r_g`. All prototypes are drawn by rejection sampling
//! so that pairwise cosine stays below a bound. Variant sub-issues get a
//! shifted direction `q_k` at a fixed angle from `p_k`, rotated towards a
//! direction orthogonal to every prototype. Items carry two noisy "frame"
//! vectors around their generating center and text channels holding the
//! planted tokens plus filler words.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::cosine_sim;
use crate::error::{Error, Result};
use crate::types::{CaseLabel, Corpus, CorpusHeader, GoldLabel, Item, PolicyDoc, SubIssue, TEXT_CHANNELS};

const MAX_DRAWS_PER_PROTOTYPE: usize = 100_000;
pub const FRAME_CHANNELS: [&str; 2] = ["frame0", "frame1"];

fn default_vocab() -> Vec<String> {
    [
        "today", "watch", "video", "amazing", "look", "this", "friends", "weekend", "music", "travel", "food", "city",
        "morning", "night", "happy", "funny", "share", "follow", "life", "daily", "trip", "cooking", "dance", "game",
        "sunset", "coffee", "park", "family", "story", "moment", "style", "home", "street", "beach", "school", "team",
        "garden", "winter", "summer", "weekday",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub dim: usize,
    pub issue_id: String,
    pub issue_name: String,
    pub n_subissues: usize,
    /// Case-1 background items.
    pub n_negative: usize,
    /// Case-2 items, spread round-robin over all sub-issues.
    pub n_covered: usize,
    pub n_variant_subissues: usize,
    pub variant_items_per_subissue: usize,
    pub n_novel_groups: usize,
    pub novel_items_per_group: usize,
    /// Per-coordinate standard deviation of frame-vector noise.
    pub cluster_spread: f64,
    /// Upper bound on pairwise cosine between prototypes.
    pub max_prototype_cosine: f64,
    /// Angle between a variant direction and its sub-issue prototype.
    pub variant_angle_deg: f64,
    /// Generation fails when the separation certificate falls below this.
    pub min_margin_ratio: f64,
    /// Default mock-judge noise for runs given this corpus's sidecar.
    pub noise_rate: f64,
    pub vocabulary: Vec<String>,
    pub filler_per_channel: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 64,
            issue_id: "synthetic_issue".into(),
            issue_name: "Synthetic issue".into(),
            n_subissues: 12,
            n_negative: 1672,
            n_covered: 600,
            n_variant_subissues: 4,
            variant_items_per_subissue: 16,
            n_novel_groups: 4,
            novel_items_per_group: 16,
            cluster_spread: 0.02,
            max_prototype_cosine: 0.1,
            variant_angle_deg: 35.0,
            min_margin_ratio: 5.0,
            noise_rate: 0.0,
            vocabulary: default_vocab(),
            filler_per_channel: 3,
        }
    }
}

impl SynthSpec {
    pub fn total_items(&self) -> usize {
        self.n_negative
            + self.n_covered
            + self.n_variant_subissues * self.variant_items_per_subissue
            + self.n_novel_groups * self.novel_items_per_group
    }

    /// Fraction of Case-3/4 items.
    pub fn emerging_share(&self) -> f64 {
        let emerging = self.n_variant_subissues * self.variant_items_per_subissue + self.n_novel_groups * self.novel_items_per_group;
        let total = self.total_items();
        if total == 0 {
            0.0
        } else {
            emerging as f64 / total as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if self.n_subissues == 0 {
            return Err(Error::invalid("a policy needs at least one sub-issue"));
        }
        if self.n_variant_subissues > self.n_subissues {
            return Err(Error::invalid("more variant sub-issues than sub-issues"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::invalid("cluster_spread must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.max_prototype_cosine) {
            return Err(Error::invalid("max_prototype_cosine must lie in [-1, 1]"));
        }
        if !(0.0..90.0).contains(&self.variant_angle_deg) {
            return Err(Error::invalid("variant_angle_deg must lie in [0, 90)"));
        }
        if self.min_margin_ratio < 0.0 {
            return Err(Error::invalid("min_margin_ratio must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::invalid("noise_rate must lie in [0, 1]"));
        }
        let prototypes = self.n_subissues + self.n_novel_groups;
        let needs_orthogonal = self.n_variant_subissues > 0 && self.variant_angle_deg > 0.0;
        if needs_orthogonal && prototypes >= self.dim {
            return Err(Error::invalid(format!(
                "{prototypes} prototypes leave no direction orthogonal to all of them in dimension {}; raise dim",
                self.dim
            )));
        }
        if self.filler_per_channel > 0 && self.vocabulary.is_empty() {
            return Err(Error::invalid("filler words requested but the vocabulary is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    /// Smallest cosine distance between any two prototypes.
    pub min_prototype_distance: f64,
    /// Largest cosine distance of a frame vector from its generating center.
    pub max_spread: f64,
    pub margin_ratio: f64,
}

/// Provenance written next to a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SynthSpec,
    /// Direction behind every planted token.
    pub prototypes: BTreeMap<String, Vec<f64>>,
    pub variant_sub_issues: Vec<String>,
    pub novel_tags: Vec<String>,
    pub case_counts: BTreeMap<String, usize>,
    pub certificate: SeparationCertificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub policy: PolicyDoc,
    pub sidecar: Sidecar,
}

pub fn sub_issue_token(k: usize) -> String {
    format!("s{k}")
}

pub fn variant_token(k: usize) -> String {
    format!("s{k}_var")
}

pub fn novel_token(g: usize) -> String {
    format!("novel_{g}")
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw_prototypes(rng: &mut ChaCha8Rng, count: usize, dim: usize, max_cos: f64) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut accepted = false;
        for _ in 0..MAX_DRAWS_PER_PROTOTYPE {
            let v = gaussian_unit(rng, dim);
            if out.iter().all(|p| dot(p, &v) <= max_cos) {
                out.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::invalid(format!(
                "could not place {count} prototypes with pairwise cosine <= {max_cos} in dimension {dim} \
                 (stuck at {}); raise dim or max_prototype_cosine",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// A unit vector orthogonal to every vector in `basis`.
fn orthogonal_direction(rng: &mut ChaCha8Rng, dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut u = gaussian_unit(rng, dim);
        // Two Gram-Schmidt passes keep the residual at rounding level.
        for _ in 0..2 {
            let mut ortho: Vec<Vec<f64>> = Vec::new();
            for b in basis {
                let mut e = b.clone();
                for o in &ortho {
                    let c = dot(&e, o);
                    e.iter_mut().zip(o).for_each(|(x, y)| *x -= c * y);
                }
                let n = dot(&e, &e).sqrt();
                if n > 1e-12 {
                    e.iter_mut().for_each(|x| *x /= n);
                    ortho.push(e);
                }
            }
            for o in &ortho {
                let c = dot(&u, o);
                u.iter_mut().zip(o).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&u, &u).sqrt();
        if n > 1e-6 {
            u.iter_mut().for_each(|x| *x /= n);
            return u;
        }
    }
}

struct Planned {
    gold: GoldLabel,
    center: Vec<f64>,
    tokens: Vec<String>,
}

fn filler(rng: &mut ChaCha8Rng, vocab: &[String], n: usize) -> Vec<String> {
    (0..n).filter_map(|_| vocab.choose(rng).cloned()).collect()
}

fn policy_for(spec: &SynthSpec) -> PolicyDoc {
    PolicyDoc {
        issue_id: spec.issue_id.clone(),
        issue_name: spec.issue_name.clone(),
        essential_logic: vec![
            "The content misleads viewers about what it actually contains.".into(),
            "The misleading element is deliberate and aimed at attracting attention.".into(),
        ],
        sub_issues: (1..=spec.n_subissues)
            .map(|k| SubIssue {
                id: sub_issue_token(k),
                name: format!("Sub-issue {k}"),
                definition: format!("Content exhibiting pattern {}.", sub_issue_token(k)),
                examples: Vec::new(),
                version: 1,
            })
            .collect(),
        version: 1,
    }
}

/// Generate a corpus, its policy and the provenance sidecar from `spec`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all = draw_prototypes(&mut rng, spec.n_subissues + spec.n_novel_groups, spec.dim, spec.max_prototype_cosine)?;
    let (subs, novels) = all.split_at(spec.n_subissues);

    let mut variant_ks: Vec<usize> = (1..=spec.n_subissues).collect();
    variant_ks.shuffle(&mut rng);
    variant_ks.truncate(spec.n_variant_subissues);
    variant_ks.sort_unstable();

    let theta = spec.variant_angle_deg.to_radians();
    let mut prototypes = BTreeMap::new();
    for (i, p) in subs.iter().enumerate() {
        prototypes.insert(sub_issue_token(i + 1), p.clone());
    }
    for (g, r) in novels.iter().enumerate() {
        prototypes.insert(novel_token(g + 1), r.clone());
    }
    let mut variant_dirs = BTreeMap::new();
    for &k in &variant_ks {
        let u = if theta > 0.0 { orthogonal_direction(&mut rng, spec.dim, &all) } else { vec![0.0; spec.dim] };
        let p = &subs[k - 1];
        let mut q: Vec<f64> = p.iter().zip(&u).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect();
        normalize(&mut q);
        prototypes.insert(variant_token(k), q.clone());
        variant_dirs.insert(k, q);
    }

    let mut plan: Vec<Planned> = Vec::with_capacity(spec.total_items());
    for _ in 0..spec.n_negative {
        plan.push(Planned { gold: GoldLabel::new(CaseLabel::Negative), center: Vec::new(), tokens: Vec::new() });
    }
    for i in 0..spec.n_covered {
        let k = i % spec.n_subissues + 1;
        plan.push(Planned {
            gold: GoldLabel::new(CaseLabel::CoveredPositive).with_sub_issue(sub_issue_token(k)),
            center: subs[k - 1].clone(),
            tokens: vec![sub_issue_token(k)],
        });
    }
    for &k in &variant_ks {
        for _ in 0..spec.variant_items_per_subissue {
            plan.push(Planned {
                gold: GoldLabel::new(CaseLabel::VariantPositive).with_sub_issue(sub_issue_token(k)),
                center: variant_dirs[&k].clone(),
                tokens: vec![sub_issue_token(k), variant_token(k)],
            });
        }
    }
    for g in 1..=spec.n_novel_groups {
        for _ in 0..spec.novel_items_per_group {
            plan.push(Planned {
                gold: GoldLabel::new(CaseLabel::NewSubIssuePositive).with_novel_tag(novel_token(g)),
                center: novels[g - 1].clone(),
                tokens: vec![novel_token(g)],
            });
        }
    }
    plan.shuffle(&mut rng);

    let mut items = Vec::with_capacity(plan.len());
    let mut max_spread: f64 = 0.0;
    for (idx, planned) in plan.into_iter().enumerate() {
        let mut item_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        item_rng.set_stream(idx as u64 + 1);
        let background = planned.center.is_empty();
        let center = if background { gaussian_unit(&mut item_rng, spec.dim) } else { planned.center };
        let mut item = Item::new(format!("item-{idx:05}"));
        for frame in FRAME_CHANNELS {
            let v: Vec<f64> = center
                .iter()
                .map(|c| c + spec.cluster_spread * item_rng.sample::<f64, _>(StandardNormal))
                .collect();
            if !background {
                max_spread = max_spread.max(1.0 - cosine_sim(&v, &center)?);
            }
            item = item.with_vector(frame, v);
        }
        for channel in TEXT_CHANNELS {
            let mut words = filler(&mut item_rng, &spec.vocabulary, spec.filler_per_channel);
            if matches!(channel, "title" | "asr") {
                let mut planted = planned.tokens.clone();
                planted.append(&mut words);
                words = planted;
            }
            if !words.is_empty() {
                item = item.with_text(channel, words.join(" "));
            }
        }
        let mut gold = planned.gold;
        gold.issue_id = Some(spec.issue_id.clone());
        items.push(item.with_gold(gold));
    }

    let mut min_distance = f64::INFINITY;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            min_distance = min_distance.min(1.0 - cosine_sim(&all[i], &all[j])?);
        }
    }
    let margin_ratio = if max_spread > 0.0 { min_distance / max_spread } else { f64::INFINITY };
    let certificate = SeparationCertificate {
        min_prototype_distance: if min_distance.is_finite() { min_distance } else { 2.0 },
        max_spread,
        margin_ratio: if margin_ratio.is_finite() { margin_ratio } else { f64::MAX },
    };
    if certificate.margin_ratio < spec.min_margin_ratio {
        return Err(Error::invalid(format!(
            "separation certificate {:.3} is below the required {:.3}; lower cluster_spread or max_prototype_cosine",
            certificate.margin_ratio, spec.min_margin_ratio
        )));
    }

    let mut case_counts = BTreeMap::new();
    for c in CaseLabel::ALL {
        case_counts.insert(c.to_string(), items.iter().filter(|i| i.gold.as_ref().map(|g| g.case) == Some(c)).count());
    }
    let mut channels: Vec<String> = TEXT_CHANNELS.iter().map(|s| s.to_string()).collect();
    channels.extend(FRAME_CHANNELS.iter().map(|s| s.to_string()));
    let corpus = Corpus {
        header: CorpusHeader { dim: spec.dim, channels, corpus_id: format!("synth-{}", spec.seed) },
        items,
    };
    let sidecar = Sidecar {
        spec: spec.clone(),
        prototypes,
        variant_sub_issues: variant_ks.iter().map(|&k| sub_issue_token(k)).collect(),
        novel_tags: (1..=spec.n_novel_groups).map(novel_token).collect(),
        case_counts,
        certificate,
    };
    Ok(SynthOutput { corpus, policy: policy_for(spec), sidecar })
}

/// Noise-free mock backends keyed on the generated corpus: the judge and
/// governance model read gold labels, the embedder maps planted tokens to
/// the generator's prototypes.
#[cfg(feature = "mock")]
pub fn oracle_backends(out: &SynthOutput, judge_noise: f64, noise_seed: u64) -> Result<crate::backends::Backends> {
    mock_backends(&out.corpus, &out.policy, &out.sidecar.prototypes, out.corpus.header.dim, judge_noise, noise_seed)
}

/// Mock backends for any corpus. With an empty prototype table the
/// embedder falls back to token hashing.
#[cfg(feature = "mock")]
pub fn mock_backends(
    corpus: &Corpus,
    policy: &PolicyDoc,
    prototypes: &BTreeMap<String, Vec<f64>>,
    dim: usize,
    judge_noise: f64,
    noise_seed: u64,
) -> Result<crate::backends::Backends> {
    use std::sync::Arc;

    use crate::backends::{Backends, Embedder, HashEmbedder, InMemoryStore, MockGovernance, MockJudge, MockOracle, PlantedEmbedder};

    let oracle = Arc::new(MockOracle::from_corpus(corpus, policy));
    let judge = MockJudge::new(Arc::clone(&oracle)).with_noise(judge_noise, noise_seed);
    let governance = MockGovernance::new(Arc::clone(&oracle));
    let embedder: Arc<dyn Embedder> = if prototypes.is_empty() {
        Arc::new(HashEmbedder::new(dim, noise_seed))
    } else {
        Arc::new(PlantedEmbedder::new(prototypes.clone(), noise_seed)?)
    };
    Ok(Backends::new(Arc::new(judge), Arc::new(governance), embedder, Arc::new(InMemoryStore::new())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_negative: 40,
            n_covered: 24,
            n_variant_subissues: 2,
            variant_items_per_subissue: 5,
            n_novel_groups: 2,
            novel_items_per_group: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.sidecar, b.sidecar);
    }

    #[test]
    fn default_composition_matches_the_regime() {
        let spec = SynthSpec::default();
        assert_eq!(spec.total_items(), 2400);
        assert!((spec.emerging_share() - 0.053).abs() < 0.005);
    }

    #[test]
    fn corpus_validates_and_counts_match() {
        let out = generate_corpus(&small()).unwrap();
        assert!(out.corpus.validate().is_accepted());
        out.policy.validate().unwrap();
        assert_eq!(out.sidecar.case_counts["case3"], 10);
        assert_eq!(out.sidecar.case_counts["case4"], 10);
        assert!(out.sidecar.certificate.margin_ratio >= 5.0);
    }

    #[test]
    fn variant_direction_is_at_the_requested_angle() {
        let out = generate_corpus(&small()).unwrap();
        for sub in &out.sidecar.variant_sub_issues {
            let p = &out.sidecar.prototypes[sub];
            let q = &out.sidecar.prototypes[&format!("{sub}_var")];
            assert!((cosine_sim(p, q).unwrap() - 35f64.to_radians().cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_margin_is_rejected() {
        let spec = SynthSpec { dim: 4, max_prototype_cosine: -0.9, n_variant_subissues: 0, ..small() };
        assert!(matches!(generate_corpus(&spec), Err(Error::InvalidInput(_))));
        let crowded = SynthSpec { dim: 8, ..small() };
        assert!(generate_corpus(&crowded).is_err());
    }
}
