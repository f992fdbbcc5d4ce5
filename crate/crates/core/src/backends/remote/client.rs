use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::*;
use crate::backends::{
    BackendResult, CoverageDecision, EmbeddingVector, Embedder, GovernanceModel, Judge, JudgeAnswer, MemoryStore,
    NoveltyDecision, RecallDecision, Selection,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after the first one, for retryable failures only.
    pub retries: u32,
    pub backoff: Duration,
    pub api_key: Option<String>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            api_key: None,
        }
    }

    /// Read base URL, timeout, retry count and API key from the environment.
    pub fn from_env() -> BackendResult<Self> {
        let base = std::env::var(ENV_BASE_URL)
            .map_err(|_| BackendError::invalid(format!("{ENV_BASE_URL} is not set")))?;
        let mut config = Self::new(base);
        if let Ok(ms) = std::env::var(ENV_TIMEOUT_MS) {
            let ms: u64 = ms.parse().map_err(|_| BackendError::invalid(format!("{ENV_TIMEOUT_MS} must be an integer")))?;
            config.timeout = Duration::from_millis(ms);
        }
        if let Ok(n) = std::env::var(ENV_RETRIES) {
            config.retries = n.parse().map_err(|_| BackendError::invalid(format!("{ENV_RETRIES} must be an integer")))?;
        }
        config.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(config)
    }
}

/// Client side of the remote adapter. One value implements all four
/// backend contracts against a single base URL.
pub struct RemoteBackend {
    agent: ureq::Agent,
    config: RemoteConfig,
    id_prefix: String,
    next_id: AtomicU64,
    dim: usize,
}

impl RemoteBackend {
    /// Connects and asks the server for its embedding dimension.
    pub fn connect(config: RemoteConfig) -> BackendResult<Self> {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(nanos.to_le_bytes());
        h.update(std::process::id().to_le_bytes());
        let id_prefix = hex::encode(&h.finalize()[..6]);
        let mut client = Self { agent, config, id_prefix, next_id: AtomicU64::new(0), dim: 0 };
        let info: EmbedInfoResponse = client.call(Op::EmbedInfo, &Empty {})?;
        client.dim = info.dim;
        Ok(client)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, op: Op, payload: &Req) -> BackendResult<Resp> {
        let request_id = format!("{}-{}", self.id_prefix, self.next_id.fetch_add(1, Ordering::Relaxed));
        let body = serde_json::to_value(RequestEnvelope { request_id: request_id.clone(), payload })
            .map_err(|e| BackendError::invalid(e.to_string()))?;
        let url = format!("{}/v1/{}", self.config.base_url, op.path());
        let mut attempt = 0;
        loop {
            match self.send_once(&url, &body, &request_id) {
                Ok(value) => {
                    return serde_json::from_value(value)
                        .map_err(|e| BackendError::Protocol { message: format!("{}: {e}", op.path()) });
                }
                Err(err) if err.is_retryable() && attempt < self.config.retries => {
                    std::thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn send_once(&self, url: &str, body: &serde_json::Value, request_id: &str) -> BackendResult<serde_json::Value> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(BackendError::unavailable(t.to_string())),
        };
        let status = response.status();
        let text = response.into_string().map_err(|e| BackendError::unavailable(e.to_string()))?;
        let envelope: ResponseEnvelope = match serde_json::from_str(&text) {
            Ok(env) => env,
            // Proxies and load balancers answer without an envelope.
            Err(_) if status >= 500 || status == 429 => {
                return Err(BackendError::unavailable(format!("HTTP {status}")));
            }
            Err(e) => return Err(BackendError::Protocol { message: format!("HTTP {status}: {e}") }),
        };
        if envelope.request_id != request_id {
            return Err(BackendError::Protocol { message: "response request_id does not match".into() });
        }
        match (envelope.ok, envelope.result, envelope.error) {
            (true, Some(result), _) => Ok(result),
            (false, _, Some(err)) => Err(err.into()),
            _ => Err(BackendError::Protocol { message: "envelope has neither result nor error".into() }),
        }
    }

    fn item_policy(item: &ItemView, policy: &PolicyDoc) -> ItemPolicyRequest {
        ItemPolicyRequest { item: item.clone(), policy: policy.clone() }
    }
}

impl Judge for RemoteBackend {
    fn recall(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<RecallDecision>> {
        self.call(Op::JudgeRecall, &Self::item_policy(item, policy))
    }

    fn coverage(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<CoverageDecision>> {
        self.call(Op::JudgeCoverage, &Self::item_policy(item, policy))
    }

    fn novelty(&self, item: &ItemView, policy: &PolicyDoc) -> BackendResult<JudgeAnswer<NoveltyDecision>> {
        self.call(Op::JudgeNovelty, &Self::item_policy(item, policy))
    }

    fn summarize(&self, texts: &[String], prior: Option<&Synopsis>) -> BackendResult<String> {
        let req = SummarizeRequest { texts: texts.to_vec(), prior: prior.cloned() };
        let resp: SummarizeResponse = self.call(Op::JudgeSummarize, &req)?;
        Ok(resp.summary)
    }

    fn select(&self, item: &ItemView, synopses: &[Synopsis]) -> BackendResult<Selection> {
        self.call(Op::JudgeSelect, &SelectRequest { item: item.clone(), synopses: synopses.to_vec() })
    }

    fn cluster(&self, items: &[ItemView]) -> BackendResult<Vec<(String, usize)>> {
        let resp: ClusterResponse = self.call(Op::JudgeCluster, &ClusterRequest { items: items.to_vec() })?;
        Ok(resp.groups.into_iter().map(|g| (g.item_id, g.group)).collect())
    }
}

impl GovernanceModel for RemoteBackend {
    fn score(&self, item: &ItemView, issue_id: &str) -> BackendResult<f64> {
        let req = GovernanceRequest { item: item.clone(), issue_id: issue_id.to_string() };
        let resp: ScoreResponse = self.call(Op::GovernanceScore, &req)?;
        Ok(resp.score)
    }
}

impl Embedder for RemoteBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbeddingVector> {
        let resp: EmbedResponse = self.call(Op::EmbedText, &EmbedRequest { text: text.to_string() })?;
        Ok(EmbeddingVector(resp.values))
    }
}

impl MemoryStore for RemoteBackend {
    fn write(&self, namespace: &str, synopsis: &Synopsis) -> BackendResult<()> {
        let req = MemoryWriteRequest { namespace: namespace.to_string(), synopsis: synopsis.clone() };
        let _: Empty = self.call(Op::MemoryWrite, &req)?;
        Ok(())
    }

    fn read_all(&self, namespace: &str) -> BackendResult<Vec<Synopsis>> {
        let resp: SynopsesBody = self.call(Op::MemoryReadAll, &NamespaceRequest { namespace: namespace.to_string() })?;
        Ok(resp.synopses)
    }

    fn read(&self, namespace: &str, cluster_id: &str) -> BackendResult<Synopsis> {
        let req = MemoryReadRequest { namespace: namespace.to_string(), cluster_id: cluster_id.to_string() };
        self.call(Op::MemoryRead, &req)
    }

    fn import(&self, namespace: &str, synopses: &[Synopsis]) -> BackendResult<()> {
        let req = MemoryImportRequest { namespace: namespace.to_string(), synopses: synopses.to_vec() };
        let _: Empty = self.call(Op::MemoryImport, &req)?;
        Ok(())
    }
}
