//! Independent reference implementations checked against the library.

// The oracles index explicitly on purpose.
#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar_core::backends::{embed_item, Embedder, HashEmbedder, MockOracle, PlantedEmbedder};
use radar_core::clustering::{hierarchical, judge_partition, Cluster, ClusterMode, ClusterOrigin};
use radar_core::eval::{ari, classification_metrics, confusion, Confusion};
use radar_core::pipeline::representatives;
use radar_core::synth::{generate_corpus, SynthSpec};
use radar_core::types::{CaseLabel, Item, ItemView};

/// Pair-counting ARI over all `n choose 2` pairs.
fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let den = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (n11 * n00 - n10 * n01) / den
}

#[test]
fn ari_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.random_range(2..=12);
        let ka = rng.random_range(1..=n);
        let kb = rng.random_range(1..=n);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let got = ari(&a, &b).unwrap();
        assert!((got - brute_ari(&a, &b)).abs() <= 1e-12, "{a:?} {b:?}");
        assert!((got - ari(&b, &a).unwrap()).abs() <= 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|x| 100 - x).collect();
        assert!((got - ari(&relabeled, &b).unwrap()).abs() <= 1e-12);
    }
    assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() <= 1e-12);
    assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
}

/// Straight per-class loop over a confusion matrix.
type Prf = (f64, f64, f64);

fn naive_metrics(m: &[Vec<u64>]) -> (Vec<Prf>, f64, f64, f64, f64) {
    let k = m.len();
    let total: u64 = m.iter().flatten().sum();
    let mut per = Vec::new();
    let mut present = Vec::new();
    let mut weighted = 0.0;
    for c in 0..k {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fne = 0u64;
        for g in 0..k {
            for p in 0..k {
                let x = m[g][p];
                if g == c && p == c {
                    tp += x;
                } else if p == c {
                    fp += x;
                } else if g == c {
                    fne += x;
                }
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if tp + fp + fne > 0 {
            present.push((p, r, f));
        }
        weighted += (tp + fne) as f64 * f;
        per.push((p, r, f));
    }
    let n = present.len().max(1) as f64;
    let macro_f1 = present.iter().map(|x| x.2).sum::<f64>() / n;
    let macro_p = present.iter().map(|x| x.0).sum::<f64>() / n;
    let macro_r = present.iter().map(|x| x.1).sum::<f64>() / n;
    let weighted = if total == 0 { 0.0 } else { weighted / total as f64 };
    (per, macro_f1, weighted, macro_p, macro_r)
}

#[test]
fn classification_metrics_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<String> = (1..=4).map(|i| format!("case{i}")).collect();
    for _ in 0..1000 {
        let mut counts = vec![vec![0u64; 4]; 4];
        for row in counts.iter_mut() {
            for cell in row.iter_mut() {
                *cell = if rng.random_bool(0.3) { 0 } else { rng.random_range(0..50) };
            }
        }
        if counts.iter().flatten().sum::<u64>() == 0 {
            counts[0][0] = 1;
        }
        let block = classification_metrics(&Confusion { labels: labels.clone(), counts: counts.clone() });
        let (per, macro_f1, weighted, p, r) = naive_metrics(&counts);
        for (c, (np, nr, nf)) in per.iter().enumerate() {
            let got = &block.per_class[&labels[c]];
            assert!((got.precision - np).abs() <= 1e-12);
            assert!((got.recall - nr).abs() <= 1e-12);
            assert!((got.f1 - nf).abs() <= 1e-12);
        }
        assert!((block.macro_f1 - macro_f1).abs() <= 1e-12);
        assert!((block.weighted_f1 - weighted).abs() <= 1e-12);
        assert!((block.precision - p).abs() <= 1e-12);
        assert!((block.recall - r).abs() <= 1e-12);
    }
}

#[test]
fn two_class_hand_case() {
    use CaseLabel::*;
    let gold = [Negative, Negative, CoveredPositive, CoveredPositive];
    let pred = [Negative, CoveredPositive, CoveredPositive, CoveredPositive];
    let b = classification_metrics(&confusion(&pred, &gold).unwrap());
    assert!((b.macro_f1 - 0.733_333_333).abs() < 1e-6);
    assert!((b.per_class["case1"].f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((b.per_class["case2"].f1 - 0.8).abs() < 1e-12);
}

#[test]
fn confusion_matches_hand_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let gold: Vec<CaseLabel> = (0..20).map(|_| CaseLabel::ALL[rng.random_range(0..4)]).collect();
        let pred: Vec<CaseLabel> = (0..20).map(|_| CaseLabel::ALL[rng.random_range(0..4)]).collect();
        let m = confusion(&pred, &gold).unwrap();
        let mut tally = [[0u64; 4]; 4];
        for (g, p) in gold.iter().zip(&pred) {
            tally[g.number() as usize - 1][p.number() as usize - 1] += 1;
        }
        for g in 0..4 {
            assert_eq!(m.counts[g], tally[g].to_vec());
        }
        assert_eq!(m.total(), 20);
    }
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Quadratic agglomerative clustering that recomputes every average-linkage
/// distance from scratch.
fn brute_agglomerative(v: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut clusters: Vec<Vec<usize>> = (0..v.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += cos_dist(&v[i], &v[j]);
                    }
                }
                let d = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, _) = best.unwrap();
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        clusters.sort_by_key(|c| c[0]);
    }
    let mut labels = vec![0; v.len()];
    for (l, c) in clusters.iter().enumerate() {
        for &i in c {
            labels[i] = l;
        }
    }
    labels
}

#[test]
fn hierarchical_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let v: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        assert_eq!(hierarchical(&v, 3).unwrap(), brute_agglomerative(&v, 3));
    }
}

#[test]
fn representatives_are_nearest_to_centroid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let ids: Vec<String> = (0..10).map(|i| format!("m{i}")).collect();
        let embeddings: HashMap<String, Vec<f64>> =
            ids.iter().map(|id| (id.clone(), (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let centroid: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cluster = Cluster {
            id: "s1".into(),
            origin: ClusterOrigin::Existing { sub_issue_id: "s1".into() },
            centroid: Some(centroid.clone()),
            synopsis: None,
            member_ids: ids.clone(),
        };
        let views: Vec<ItemView> = ids.iter().map(|id| Item::new(id.clone()).view()).collect();
        let by_id: HashMap<&str, &ItemView> = views.iter().map(|v| (v.id.as_str(), v)).collect();
        let got = representatives(&cluster, ClusterMode::Embedding, &by_id, &embeddings, 3).unwrap();
        let mut oracle: Vec<(f64, &String)> = ids.iter().map(|id| (cos_dist(&embeddings[id], &centroid), id)).collect();
        oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let want: Vec<String> = oracle.iter().take(3).map(|(_, id)| (*id).clone()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn chunked_judge_clustering_equals_one_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for round in 0..30 {
        // Every group needs an anchor slot for chunks to be joinable.
        let groups = rng.random_range(1..=4);
        let n = rng.random_range(20..60);
        let tags: Vec<String> = (0..groups).map(|g| format!("novel_{g}")).collect();
        let items: Vec<Item> = (0..n)
            .map(|i| {
                let t = &tags[rng.random_range(0..groups)];
                common::item(&format!("r{round}-{i}"), &format!("clip {t} filler"), common::gold(4, None, Some(t)))
            })
            .collect();
        let policy = common::policy("cb", &["s1"]);
        let backends = common::mock_backends(&items, &policy, 0.0, 0, 8);
        let views: Vec<ItemView> = items.iter().map(Item::view).collect();
        let one_shot = backends.cluster(&views).unwrap();
        let chunked = judge_partition(&views, &backends, 10, 4).unwrap();
        assert!(chunked.conflicts.is_empty());
        let lookup: HashMap<&str, usize> = chunked.groups.iter().map(|(id, g)| (id.as_str(), *g)).collect();
        let a: Vec<usize> = one_shot.iter().map(|(_, g)| *g).collect();
        let b: Vec<usize> = one_shot.iter().map(|(id, _)| lookup[id.as_str()]).collect();
        assert_eq!(chunked.groups.len(), n);
        if n >= 2 {
            assert_eq!(ari(&a, &b).unwrap(), 1.0);
        }
    }
}

#[test]
fn item_embedding_is_mean_of_vector_and_text() {
    let embedder = HashEmbedder::new(6, 9);
    let v1 = vec![0.3, -0.2, 0.9, 0.0, 0.5, -1.0];
    let item = Item::new("x").with_vector("frame0", v1.clone()).with_text("title", "hello there");
    let v2 = embedder.embed_text(&item.view().combined_text()).unwrap();
    let got = embed_item(&embedder, &item.view()).unwrap();
    for i in 0..6 {
        assert!((got.0[i] - (v1[i] + v2.0[i]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn planted_tokens_embed_within_ten_degrees() {
    let out = generate_corpus(&SynthSpec::default()).unwrap();
    let embedder = PlantedEmbedder::new(out.sidecar.prototypes.clone(), 1).unwrap();
    let vocab = &out.sidecar.spec.vocabulary;
    for (token, proto) in &out.sidecar.prototypes {
        let text = format!("{} {token} {} {}", vocab[0], vocab[5], vocab[9]);
        let v = embedder.embed_text(&text).unwrap();
        let angle = (1.0 - cos_dist(&v.0, proto)).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle <= 10.0, "{token}: {angle}");
    }
}

#[test]
fn mock_noise_flip_set_matches_hash_oracle() {
    use radar_core::backends::{Judge, MockJudge, RecallDecision};
    use sha2::{Digest, Sha256};
    let policy = common::policy("cb", &["s1"]);
    let mut oracle = MockOracle::new();
    let ids: Vec<String> = (0..400).map(|i| format!("v{i}")).collect();
    for id in &ids {
        oracle = oracle.with_gold(id.clone(), common::gold(1, None, None));
    }
    let judge = MockJudge::new(Arc::new(oracle)).with_noise(0.1, 77);
    let mut expected = BTreeMap::new();
    for id in &ids {
        let mut h = Sha256::new();
        h.update(77u64.to_le_bytes());
        h.update(b"recall\0");
        h.update(id.as_bytes());
        let d = h.finalize();
        let u = (u64::from_be_bytes(d[..8].try_into().unwrap()) >> 11) as f64 / (1u64 << 53) as f64;
        expected.insert(id.clone(), u < 0.1);
    }
    for id in &ids {
        let a = judge.recall(&Item::new(id.clone()).view(), &policy).unwrap();
        assert_eq!(a.decision == RecallDecision::Suspicious, expected[id], "{id}");
    }
}
