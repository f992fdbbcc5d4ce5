use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use super::{BackendError, BackendResult, MemoryStore, Synopsis};

#[derive(Debug, Default)]
struct Namespace {
    order: Vec<String>,
    history: HashMap<String, Vec<Synopsis>>,
}

/// In-process memory store keeping the full version history of every
/// synopsis. Writes are serialized by a single lock.
#[derive(Debug, Default)]
pub struct InMemoryStore {
    inner: Mutex<BTreeMap<String, Namespace>>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every stored version of one cluster, oldest first.
    pub fn history(&self, namespace: &str, cluster_id: &str) -> Vec<Synopsis> {
        let guard = self.inner.lock().expect("memory lock poisoned");
        guard
            .get(namespace)
            .and_then(|ns| ns.history.get(cluster_id))
            .cloned()
            .unwrap_or_default()
    }
}

fn check_text(s: &Synopsis) -> BackendResult<()> {
    if s.text.trim().is_empty() {
        return Err(BackendError::invalid(format!("synopsis for {:?} has empty text", s.cluster_id)));
    }
    Ok(())
}

impl MemoryStore for InMemoryStore {
    fn write(&self, namespace: &str, synopsis: &Synopsis) -> BackendResult<()> {
        check_text(synopsis)?;
        let mut guard = self.inner.lock().expect("memory lock poisoned");
        let ns = guard.entry(namespace.to_string()).or_default();
        let expected = ns
            .history
            .get(&synopsis.cluster_id)
            .and_then(|h| h.last())
            .map_or(1, |s| s.version + 1);
        if synopsis.version != expected {
            return Err(BackendError::Conflict {
                cluster_id: synopsis.cluster_id.clone(),
                expected,
                got: synopsis.version,
            });
        }
        if expected == 1 {
            ns.order.push(synopsis.cluster_id.clone());
        }
        ns.history.entry(synopsis.cluster_id.clone()).or_default().push(synopsis.clone());
        Ok(())
    }

    fn read_all(&self, namespace: &str) -> BackendResult<Vec<Synopsis>> {
        let guard = self.inner.lock().expect("memory lock poisoned");
        Ok(guard
            .get(namespace)
            .map(|ns| {
                ns.order
                    .iter()
                    .filter_map(|id| ns.history.get(id).and_then(|h| h.last()).cloned())
                    .collect()
            })
            .unwrap_or_default())
    }

    fn read(&self, namespace: &str, cluster_id: &str) -> BackendResult<Synopsis> {
        let guard = self.inner.lock().expect("memory lock poisoned");
        guard
            .get(namespace)
            .and_then(|ns| ns.history.get(cluster_id))
            .and_then(|h| h.last())
            .cloned()
            .ok_or_else(|| BackendError::NotFound { message: format!("no synopsis for {cluster_id:?}") })
    }

    fn import(&self, namespace: &str, synopses: &[Synopsis]) -> BackendResult<()> {
        synopses.iter().try_for_each(check_text)?;
        let mut guard = self.inner.lock().expect("memory lock poisoned");
        let ns = guard.entry(namespace.to_string()).or_default();
        if !ns.order.is_empty() {
            return Err(BackendError::precondition(format!("namespace {namespace:?} is not empty")));
        }
        for s in synopses {
            if ns.history.contains_key(&s.cluster_id) {
                return Err(BackendError::invalid(format!("duplicate synopsis {:?} in import", s.cluster_id)));
            }
            ns.order.push(s.cluster_id.clone());
            ns.history.insert(s.cluster_id.clone(), vec![s.clone()]);
        }
        Ok(())
    }
}
