//! Judge-driven clustering of inputs larger than one judge call.
//!
//! Items are fed to the judge in chunks of at most `max_chunk`. Every chunk
//! after the first starts with anchor items that already have a global
//! group (one representative per group, largest groups first), and the
//! per-chunk partitions are joined through those anchors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendResult, Backends};
use crate::error::{Error, Result};
use crate::types::ItemView;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedPartition {
    /// `(item_id, group)` in first-appearance order; groups are numbered by
    /// first appearance.
    pub groups: Vec<(String, usize)>,
    /// Human-readable notes on contradictory anchor evidence.
    pub conflicts: Vec<String>,
}

impl MergedPartition {
    pub fn group_count(&self) -> usize {
        self.groups.iter().map(|(_, g)| g + 1).max().unwrap_or(0)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn add(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Attach `b`'s set under `a`'s root.
    fn union_into(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

/// Join per-chunk partitions through items shared between chunks.
///
/// Earlier chunks take precedence: when a later chunk puts anchors from two
/// different global groups together, the groups stay apart, the chunk's new
/// items join the group of its first anchor, and a conflict is recorded.
pub fn merge_chunked_groups(chunks: &[Vec<(String, usize)>]) -> Result<MergedPartition> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut uf = UnionFind { parent: Vec::new() };
    let mut conflicts = Vec::new();

    for (c, chunk) in chunks.iter().enumerate() {
        let mut by_group: Vec<(usize, Vec<&str>)> = Vec::new();
        for (id, g) in chunk {
            match by_group.iter_mut().find(|(k, _)| k == g) {
                Some((_, members)) => members.push(id),
                None => by_group.push((*g, vec![id])),
            }
        }
        let mut seen_ids = std::collections::HashSet::new();
        if !chunk.iter().all(|(id, _)| seen_ids.insert(id.as_str())) {
            return Err(Error::invalid(format!("chunk {c} lists an item twice")));
        }
        order.extend(chunk.iter().filter(|(id, _)| !index.contains_key(id)).map(|(id, _)| id.clone()));
        let mut claimed: HashMap<usize, usize> = HashMap::new();
        for (g, members) in by_group {
            let mut roots: Vec<usize> = Vec::new();
            for id in &members {
                if let Some(&slot) = index.get(*id) {
                    let r = uf.find(slot);
                    if !roots.contains(&r) {
                        roots.push(r);
                    }
                }
            }
            if roots.len() > 1 {
                conflicts.push(format!(
                    "chunk {c} group {g} joins {} previously separate groups; kept apart",
                    roots.len()
                ));
            }
            if let Some(first) = roots.first() {
                if let Some(prev) = claimed.insert(*first, g) {
                    conflicts.push(format!(
                        "chunk {c} splits an earlier group across its groups {prev} and {g}; kept together"
                    ));
                }
            }
            let mut target = roots.first().copied();
            for id in members {
                if index.contains_key(id) {
                    continue;
                }
                let slot = uf.add();
                index.insert(id.to_string(), slot);
                match target {
                    Some(t) => uf.union_into(t, slot),
                    None => target = Some(slot),
                }
            }
        }
    }

    let mut labels: HashMap<usize, usize> = HashMap::new();
    let groups = order
        .into_iter()
        .map(|id| {
            let root = uf.find(index[&id]);
            let next = labels.len();
            let label = *labels.entry(root).or_insert(next);
            (id, label)
        })
        .collect();
    Ok(MergedPartition { groups, conflicts })
}

/// Ask the judge to partition `items`, chunking with anchors when the input
/// exceeds `max_chunk`.
pub fn judge_partition(
    items: &[ItemView],
    backends: &Backends,
    max_chunk: usize,
    anchors: usize,
) -> Result<MergedPartition> {
    if items.is_empty() {
        return Ok(MergedPartition { groups: Vec::new(), conflicts: Vec::new() });
    }
    if max_chunk == 0 || anchors >= max_chunk {
        return Err(Error::invalid("chunking needs max_chunk > anchors"));
    }
    let lookup: HashMap<&str, &ItemView> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut chunk_results: Vec<Vec<(String, usize)>> = Vec::new();
    let mut next = 0;
    while next < items.len() {
        let mut batch: Vec<ItemView> = Vec::new();
        if !chunk_results.is_empty() {
            let merged = merge_chunked_groups(&chunk_results)?;
            batch.extend(pick_anchors(&merged, anchors).into_iter().map(|id| lookup[id.as_str()].clone()));
        }
        let room = max_chunk - batch.len();
        let end = (next + room).min(items.len());
        batch.extend(items[next..end].iter().cloned());
        next = end;
        let result: BackendResult<_> = backends.cluster(&batch);
        chunk_results.push(result?);
    }
    merge_chunked_groups(&chunk_results)
}

/// One representative (earliest member) per group, largest groups first.
fn pick_anchors(merged: &MergedPartition, anchors: usize) -> Vec<String> {
    let mut reps: Vec<(usize, usize, String)> = Vec::new();
    for (id, g) in &merged.groups {
        match reps.iter_mut().find(|(group, _, _)| group == g) {
            Some(entry) => entry.1 += 1,
            None => reps.push((*g, 1, id.clone())),
        }
    }
    reps.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    reps.into_iter().take(anchors).map(|(_, _, id)| id).collect()
}
