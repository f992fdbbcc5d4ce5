//! Property tests for the streaming, pipeline and evolution invariants.

mod common;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar_core::backends::{BackendError, BackendResult, Embedder, EmbeddingVector, HashEmbedder, MockOracle};
use radar_core::clustering::{
    init_clusters, kmeans, run_stream, AssignTarget, ClusterConfig, EmbeddingCache, StreamState, StreamStop,
};
use radar_core::eval::ari;
use radar_core::pipeline::{diff_policies, run_pipeline, PipelineConfig, GOVERNANCE_TOOL};
use radar_core::types::{CaseLabel, Item, ItemView, Phase};

const DIM: usize = 6;

fn vector_items(seed: u64, n: usize, dim: usize) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Item::new(format!("v{i}")).with_vector("frame0", (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn stream(items: &[Item], config: &ClusterConfig, subs: &[&str], seed: u64) -> StreamState {
    let policy = common::policy("cb", subs);
    let backends = common::backends_with(Arc::new(MockOracle::new()), 0.0, 0, Arc::new(HashEmbedder::new(config_dim(items), seed)));
    let cs = init_clusters(&policy, config, &backends).unwrap();
    let views: Vec<ItemView> = items.iter().map(Item::view).collect();
    let mut state = StreamState::new(cs, &views, config);
    let stop = run_stream(&mut state, &views, &backends, &mut EmbeddingCache::new(), None, 8).unwrap();
    assert_eq!(stop, StreamStop::Completed);
    state
}

fn config_dim(items: &[Item]) -> usize {
    items.first().map(|i| i.channel_vectors.as_ref().unwrap()["frame0"].len()).unwrap_or(DIM)
}

fn targets(state: &StreamState) -> HashMap<String, AssignTarget> {
    state.assignments.iter().map(|a| (a.item_id.clone(), a.target.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_centroid_is_running_mean(seed in any::<u64>(), n in 1usize..100, dim in 1usize..64, k in 1usize..5) {
        let items = vector_items(seed, n, dim);
        let subs: Vec<String> = (1..=k).map(|i| format!("s{i}")).collect();
        let subs: Vec<&str> = subs.iter().map(String::as_str).collect();
        let config = ClusterConfig { delta: -1.0, ..ClusterConfig::default() };
        let policy = common::policy("cb", &subs);
        let backends = common::backends_with(Arc::new(MockOracle::new()), 0.0, 0, Arc::new(HashEmbedder::new(dim, seed)));
        let initial = init_clusters(&policy, &config, &backends).unwrap();
        let views: Vec<ItemView> = items.iter().map(Item::view).collect();
        let mut state = StreamState::new(initial.clone(), &views, &config);
        run_stream(&mut state, &views, &backends, &mut EmbeddingCache::new(), None, 8).unwrap();
        prop_assert!(state.cluster_set.buffer.is_empty());
        let by_id: HashMap<&str, &Item> = items.iter().map(|i| (i.id.as_str(), i)).collect();
        for (cluster, seed_cluster) in state.cluster_set.clusters.iter().zip(&initial.clusters) {
            let mut sum = seed_cluster.centroid.clone().unwrap();
            for id in &cluster.member_ids {
                for (s, x) in sum.iter_mut().zip(&by_id[id.as_str()].channel_vectors.as_ref().unwrap()["frame0"]) {
                    *s += x;
                }
            }
            let count = (cluster.member_ids.len() + 1) as f64;
            for (c, s) in cluster.centroid.as_ref().unwrap().iter().zip(&sum) {
                prop_assert!((c - s / count).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn raising_delta_never_shrinks_the_buffer(seed in any::<u64>(), n in 1usize..60, d1 in -1.0f64..1.0, d2 in -1.0f64..1.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let items = vector_items(seed, n, DIM);
        let frozen = |delta| ClusterConfig { delta, update_clusters: false, ..ClusterConfig::default() };
        let low = stream(&items, &frozen(lo), &["s1", "s2", "s3"], seed);
        let high = stream(&items, &frozen(hi), &["s1", "s2", "s3"], seed);
        let low_buf: HashSet<&String> = low.cluster_set.buffer.iter().collect();
        let high_buf: HashSet<&String> = high.cluster_set.buffer.iter().collect();
        prop_assert!(low_buf.is_subset(&high_buf));
    }

    #[test]
    fn frozen_assignment_is_order_invariant(seed in any::<u64>(), n in 2usize..60, delta in -0.5f64..0.8) {
        let items = vector_items(seed, n, DIM);
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let config = ClusterConfig { delta, update_clusters: false, ..ClusterConfig::default() };
        let a = stream(&items, &config, &["s1", "s2", "s3", "s4"], seed);
        let b = stream(&shuffled, &config, &["s1", "s2", "s3", "s4"], seed);
        prop_assert_eq!(targets(&a), targets(&b));
    }

    #[test]
    fn ari_is_symmetric_and_relabeling_invariant(a in prop::collection::vec(0usize..4, 2..30), shift in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
        let x = ari(&a, &b).unwrap();
        prop_assert!((x - ari(&b, &a).unwrap()).abs() <= 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|l| l * 7 + shift).collect();
        prop_assert!((x - ari(&relabeled, &b).unwrap()).abs() <= 1e-12);
        prop_assert!(x <= 1.0 + 1e-12);
    }

    #[test]
    fn kmeans_objective_never_increases(seed in any::<u64>(), n in 1usize..60, k in 1usize..8, dim in 1usize..6) {
        let items = vector_items(seed, n, dim);
        let vectors: Vec<Vec<f64>> = items.iter().map(|i| i.channel_vectors.as_ref().unwrap()["frame0"].clone()).collect();
        let k = k.min(n);
        let fit = kmeans(&vectors, k, seed, 100, 0.0).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert_eq!(fit.labels.len(), n);
        prop_assert!(fit.labels.iter().all(|&l| l < k));
        prop_assert_eq!(kmeans(&vectors, k, seed, 100, 0.0).unwrap().labels, fit.labels);
    }
}

/// Embedder that fails on texts containing "poison".
struct PoisonEmbedder(HashEmbedder);

impl Embedder for PoisonEmbedder {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        if text.contains("poison") {
            return Err(BackendError::unavailable("embedding service rejected the request"));
        }
        self.0.embed_text(text)
    }
}

fn random_batch(seed: u64, n: usize) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let case = rng.random_range(1..=4u8);
            let sub = format!("s{}", rng.random_range(1..=3));
            let tag = format!("novel_{}", rng.random_range(1..=2));
            let poison = if rng.random_bool(0.1) { " poison" } else { "" };
            let (text, gold) = match case {
                1 => (format!("daily clip{poison}"), common::gold(1, None, None)),
                2 => (format!("{sub} clip{poison}"), common::gold(2, Some(&sub), None)),
                3 => (format!("{sub} {sub}_var clip{poison}"), common::gold(3, Some(&sub), None)),
                _ => (format!("{tag} clip{poison}"), common::gold(4, None, Some(&tag))),
            };
            common::item(&format!("b{i}"), &text, gold)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pipeline_conserves_items_and_evolves_safely(seed in any::<u64>(), n in 0usize..80, noise in 0.0f64..0.4, memory in any::<bool>(), m in 0usize..4) {
        let batch = random_batch(seed, n);
        let policy = common::policy("cb", &["s1", "s2", "s3"]);
        let base = common::mock_backends(&batch, &policy, noise, seed, 8);
        let backends = if memory {
            base
        } else {
            let oracle = {
                let mut o = MockOracle::new().with_planted(["s1", "s2", "s3", "novel_1", "novel_2"]);
                for it in &batch {
                    o = o.with_gold(it.id.clone(), it.gold.clone().unwrap());
                }
                Arc::new(o)
            };
            common::backends_with(oracle, noise, seed, Arc::new(PoisonEmbedder(HashEmbedder::new(8, seed))))
        };
        let base_config = PipelineConfig { m, ..PipelineConfig::default() };
        let config = if memory {
            base_config.with_mode(radar_core::clustering::ClusterMode::Memory)
        } else {
            base_config
        };
        let report = run_pipeline(&batch, &policy, &config, &backends).unwrap();

        // Conservation: verdicts and quarantine partition the batch.
        let mut seen: Vec<&str> = report.verdicts.iter().map(|v| v.item_id.as_str()).collect();
        seen.extend(report.quarantine.iter().map(|q| q.item_id.as_str()));
        seen.sort_unstable();
        let mut ids: Vec<&str> = batch.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        prop_assert_eq!(seen, ids);
        prop_assert!(report.pending.is_empty());

        for v in &report.verdicts {
            // Monotone filtering: one terminal step per phase, in phase order.
            let phases: Vec<Phase> = v.phase_trail.iter().map(|s| s.phase).collect();
            let expected: &[Phase] = match v.case {
                CaseLabel::Negative => &[Phase::Recall],
                CaseLabel::CoveredPositive => &[Phase::Recall, Phase::Coverage],
                _ => &[Phase::Recall, Phase::Coverage, Phase::Clustering],
            };
            prop_assert_eq!(phases.as_slice(), expected);
            // Tool path: governance consulted exactly when the judge was unsure.
            for s in v.phase_trail.iter().filter(|s| s.phase == Phase::Coverage) {
                let used = s.tool_used.as_deref() == Some(GOVERNANCE_TOOL);
                prop_assert_eq!(used, s.confidence < config.confidence_threshold);
            }
            for s in &v.phase_trail {
                prop_assert!((0.0..=1.0).contains(&s.confidence));
            }
        }

        // Evolution safety.
        report.evolved_policy.validate().unwrap();
        prop_assert_eq!(report.evolved_policy.version, policy.version + 1);
        for s in &policy.sub_issues {
            prop_assert!(report.evolved_policy.contains_sub_issue(&s.id));
        }
        diff_policies(&policy, &report.evolved_policy).unwrap();
    }
}
