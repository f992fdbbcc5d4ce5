use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::backends::{tokenize, Backends};
use crate::clustering::{cosine_sim, Cluster, ClusterMode, ClusterOrigin, ClusterSet, EmbeddingCache};
use crate::error::{Error, Result};
use crate::types::{ItemView, PolicyDoc, SubIssue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubIssueChange {
    pub id: String,
    pub before: SubIssue,
    pub after: SubIssue,
}

/// Machine-readable difference between two versions of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDiff {
    pub issue_id: String,
    pub from_version: u32,
    pub to_version: u32,
    pub added: Vec<SubIssue>,
    pub updated: Vec<SubIssueChange>,
    pub unchanged: usize,
}

impl PolicyDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.updated.is_empty()
    }

    /// Plain-text rendering for reviewers.
    pub fn render(&self) -> String {
        let mut out = format!(
            "policy {} v{} -> v{}: {} added, {} updated, {} unchanged\n",
            self.issue_id,
            self.from_version,
            self.to_version,
            self.added.len(),
            self.updated.len(),
            self.unchanged
        );
        for s in &self.added {
            out.push_str(&format!("+ {} ({})\n    definition: {}\n", s.id, s.name, s.definition));
            for e in &s.examples {
                out.push_str(&format!("    example: {e}\n"));
            }
        }
        for c in &self.updated {
            out.push_str(&format!("~ {} (v{} -> v{})\n", c.id, c.before.version, c.after.version));
            if c.before.name != c.after.name {
                out.push_str(&format!("  - name: {}\n  + name: {}\n", c.before.name, c.after.name));
            }
            if c.before.definition != c.after.definition {
                out.push_str(&format!("  - definition: {}\n  + definition: {}\n", c.before.definition, c.after.definition));
            }
            for e in c.after.examples.iter().filter(|e| !c.before.examples.contains(e)) {
                out.push_str(&format!("  + example: {e}\n"));
            }
            for e in c.before.examples.iter().filter(|e| !c.after.examples.contains(e)) {
                out.push_str(&format!("  - example: {e}\n"));
            }
        }
        out
    }
}

/// Compare two versions of a policy. Every sub-issue id of `old` must still
/// exist in `new`; a dropped or renamed id is an error.
pub fn diff_policies(old: &PolicyDoc, new: &PolicyDoc) -> Result<PolicyDiff> {
    old.validate()?;
    new.validate()?;
    if old.issue_id != new.issue_id {
        return Err(Error::invalid(format!("policies describe different issues: {} vs {}", old.issue_id, new.issue_id)));
    }
    let missing: Vec<&str> =
        old.sub_issues.iter().filter(|s| !new.contains_sub_issue(&s.id)).map(|s| s.id.as_str()).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("sub-issues removed or renamed: {}", missing.join(", "))));
    }
    let mut diff = PolicyDiff {
        issue_id: new.issue_id.clone(),
        from_version: old.version,
        to_version: new.version,
        added: Vec::new(),
        updated: Vec::new(),
        unchanged: 0,
    };
    for after in &new.sub_issues {
        match old.sub_issue(&after.id) {
            None => diff.added.push(after.clone()),
            Some(before) if before == after => diff.unchanged += 1,
            Some(before) => diff.updated.push(SubIssueChange { id: after.id.clone(), before: before.clone(), after: after.clone() }),
        }
    }
    Ok(diff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub policy: PolicyDoc,
    pub diff: PolicyDiff,
    pub flags: Vec<String>,
}

fn example_line(item: &ItemView) -> String {
    let text = item.combined_text().replace('\n', " / ");
    format!("{}: {}", item.id, text)
}

/// Up to `k` members most representative of `cluster`: highest cosine to
/// the centroid in embedding mode, most tokens shared with the synopsis in
/// memory mode. Ties keep member order.
pub fn representatives(
    cluster: &Cluster,
    mode: ClusterMode,
    items: &HashMap<&str, &ItemView>,
    embeddings: &EmbeddingCache,
    k: usize,
) -> Result<Vec<String>> {
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(cluster.member_ids.len());
    let synopsis_tokens: HashSet<String> = match (&cluster.synopsis, mode) {
        (Some(s), ClusterMode::Memory) => tokenize(&s.text).into_iter().collect(),
        _ => HashSet::new(),
    };
    for (i, id) in cluster.member_ids.iter().enumerate() {
        let score = match mode {
            ClusterMode::Embedding => {
                let centroid = cluster.centroid.as_deref().ok_or_else(|| Error::Invariant(format!("cluster {} has no centroid", cluster.id)))?;
                let emb = embeddings.get(id).ok_or_else(|| Error::Invariant(format!("no embedding for member {id}")))?;
                cosine_sim(emb, centroid)?
            }
            ClusterMode::Memory => {
                let text = items.get(id.as_str()).map(|v| v.combined_text()).unwrap_or_default();
                let own: HashSet<String> = tokenize(&text).into_iter().collect();
                own.intersection(&synopsis_tokens).count() as f64
            }
        };
        scored.push((score, i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| cluster.member_ids[i].clone()).collect())
}

/// Member texts, latest first, capped.
fn member_texts(cluster: &Cluster, items: &HashMap<&str, &ItemView>, cap: usize) -> Vec<String> {
    cluster
        .member_ids
        .iter()
        .rev()
        .filter_map(|id| items.get(id.as_str()).map(|v| v.combined_text()))
        .filter(|t| !t.trim().is_empty())
        .take(cap)
        .collect()
}

/// Phase 4: refine sub-issues that gained variant members and append one
/// sub-issue per new cluster. The policy version is always bumped.
pub fn phase4_evolve(
    policy: &PolicyDoc,
    cluster_set: Option<&ClusterSet>,
    items: &[ItemView],
    embeddings: &mut EmbeddingCache,
    backends: &Backends,
    config: &PipelineConfig,
) -> Result<Evolution> {
    let mut evolved = policy.clone();
    evolved.version = policy.version + 1;
    let mut flags = Vec::new();
    let by_id: HashMap<&str, &ItemView> = items.iter().map(|v| (v.id.as_str(), v)).collect();

    if let Some(cs) = cluster_set {
        if cs.mode == ClusterMode::Embedding {
            for c in cs.clusters.iter() {
                for id in &c.member_ids {
                    if !embeddings.contains_key(id) {
                        let view = by_id.get(id.as_str()).ok_or_else(|| Error::Invariant(format!("member {id} not in batch")))?;
                        embeddings.insert(id.clone(), backends.embed_item(view)?.0);
                    }
                }
            }
        }
        for cluster in cs.clusters.iter().filter(|c| c.member_count() > 0) {
            let reps = representatives(cluster, cs.mode, &by_id, embeddings, config.k_rep)?;
            let rep_lines: Vec<String> = reps.iter().filter_map(|id| by_id.get(id.as_str())).map(|v| example_line(v)).collect();
            let texts = member_texts(cluster, &by_id, config.cap_k);
            match &cluster.origin {
                ClusterOrigin::Existing { sub_issue_id } => {
                    let sub = evolved
                        .sub_issues
                        .iter_mut()
                        .find(|s| &s.id == sub_issue_id)
                        .ok_or_else(|| Error::Invariant(format!("cluster for unknown sub-issue {sub_issue_id}")))?;
                    let mut input = vec![sub.definition.clone()];
                    input.extend(texts);
                    match backends.summarize(&input, None) {
                        Ok(definition) => {
                            sub.definition = definition;
                            for line in rep_lines {
                                if !sub.examples.contains(&line) {
                                    sub.examples.push(line);
                                }
                            }
                            sub.version += 1;
                        }
                        Err(e) => flags.push(format!("sub-issue {sub_issue_id} left unchanged: summarizer failed ({e})")),
                    }
                }
                ClusterOrigin::New { index } => {
                    let definition = match backends.summarize(&texts, None) {
                        Ok(d) => d,
                        Err(e) => {
                            flags.push(format!("new sub-issue {} has a placeholder definition: summarizer failed ({e})", cluster.id));
                            format!("Emerging pattern {}; see examples", cluster.id)
                        }
                    };
                    evolved.sub_issues.push(SubIssue {
                        id: cluster.id.clone(),
                        name: format!("Emerging pattern {index}"),
                        definition,
                        examples: rep_lines,
                        version: 1,
                    });
                }
            }
        }
    }
    evolved.validate().map_err(|e| Error::Invariant(format!("evolved policy is invalid: {e}")))?;
    let diff = diff_policies(policy, &evolved).map_err(|e| Error::Invariant(e.to_string()))?;
    Ok(Evolution { policy: evolved, diff, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> PolicyDoc {
        PolicyDoc {
            issue_id: "cb".into(),
            issue_name: "Clickbait".into(),
            essential_logic: vec!["misleading".into()],
            sub_issues: vec![
                SubIssue { id: "s1".into(), name: "one".into(), definition: "d1".into(), examples: vec![], version: 1 },
                SubIssue { id: "s2".into(), name: "two".into(), definition: "d2".into(), examples: vec![], version: 1 },
            ],
            version: 1,
        }
    }

    #[test]
    fn identical_policies_have_empty_diff() {
        let d = diff_policies(&policy(), &policy()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.unchanged, 2);
    }

    #[test]
    fn appended_sub_issue_is_added() {
        let mut new = policy();
        new.sub_issues.push(SubIssue { id: "n1".into(), name: "n".into(), definition: "dn".into(), examples: vec![], version: 1 });
        let d = diff_policies(&policy(), &new).unwrap();
        assert_eq!(d.added.len(), 1);
        assert!(d.render().contains("+ n1"));
    }

    #[test]
    fn definition_edit_quotes_both_versions() {
        let mut new = policy();
        new.sub_issues[1].definition = "d2 revised".into();
        let d = diff_policies(&policy(), &new).unwrap();
        assert_eq!(d.updated.len(), 1);
        let text = d.render();
        assert!(text.contains("- definition: d2\n"));
        assert!(text.contains("+ definition: d2 revised"));
    }

    #[test]
    fn removed_id_is_rejected() {
        let mut new = policy();
        new.sub_issues[0].id = "s1_renamed".into();
        assert!(diff_policies(&policy(), &new).is_err());
    }
}
