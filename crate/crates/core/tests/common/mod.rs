#![allow(dead_code)]

use std::sync::Arc;

use radar_core::backends::{Backends, Embedder, HashEmbedder, InMemoryStore, MockGovernance, MockJudge, MockOracle};
use radar_core::types::{CaseLabel, GoldLabel, Item, PolicyDoc, SubIssue};

pub fn policy(issue: &str, subs: &[&str]) -> PolicyDoc {
    PolicyDoc {
        issue_id: issue.into(),
        issue_name: format!("Issue {issue}"),
        essential_logic: vec!["The content misleads its audience.".into()],
        sub_issues: subs
            .iter()
            .map(|s| SubIssue {
                id: s.to_string(),
                name: format!("Sub-issue {s}"),
                definition: format!("Content showing pattern {s}."),
                examples: Vec::new(),
                version: 1,
            })
            .collect(),
        version: 1,
    }
}

pub fn gold(case: u8, sub: Option<&str>, tag: Option<&str>) -> GoldLabel {
    let mut g = GoldLabel::new(CaseLabel::from_number(case).unwrap());
    g.sub_issue_id = sub.map(str::to_string);
    g.novel_tag = tag.map(str::to_string);
    g
}

/// An item whose title carries `text`.
pub fn item(id: &str, text: &str, g: GoldLabel) -> Item {
    Item::new(id).with_text("title", text).with_gold(g)
}

/// Mock judge and governance keyed on the items' gold labels, a hash
/// embedder of dimension `dim` and a fresh memory store.
pub fn mock_backends(items: &[Item], policy: &PolicyDoc, noise: f64, seed: u64, dim: usize) -> Backends {
    let mut oracle = MockOracle::new().with_planted(policy.sub_issues.iter().map(|s| s.id.clone()));
    for it in items {
        if let Some(g) = &it.gold {
            oracle = oracle.with_gold(it.id.clone(), g.clone());
            oracle = oracle.with_planted(g.sub_issue_id.iter().chain(&g.novel_tag).cloned());
        }
    }
    let oracle = Arc::new(oracle);
    backends_with(oracle, noise, seed, Arc::new(HashEmbedder::new(dim, seed)))
}

pub fn backends_with(oracle: Arc<MockOracle>, noise: f64, seed: u64, embedder: Arc<dyn Embedder>) -> Backends {
    Backends::new(
        Arc::new(MockJudge::new(Arc::clone(&oracle)).with_noise(noise, seed)),
        Arc::new(MockGovernance::new(oracle)),
        embedder,
        Arc::new(InMemoryStore::new()),
    )
}
