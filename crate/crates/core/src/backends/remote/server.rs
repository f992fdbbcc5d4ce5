use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::*;
use crate::backends::{BackendResult, Backends};

const REPLAY_CAPACITY: usize = 4096;
const WORKERS: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Required bearer token, if any.
    pub api_key: Option<String>,
    /// Answer the first N requests with a retryable 503 (fault injection).
    pub fail_first: usize,
}

/// Serves any in-process [`Backends`] over the remote wire format. Used as
/// a loopback reference server and in tests.
pub struct RemoteServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    url: String,
}

struct Shared {
    backends: Backends,
    options: ServerOptions,
    failures_left: AtomicUsize,
    replay: Mutex<Replay>,
}

#[derive(Default)]
struct Replay {
    responses: HashMap<String, (u16, String)>,
    order: VecDeque<String>,
}

impl RemoteServer {
    /// Bind to `addr` (use port 0 for an ephemeral port) and start serving.
    pub fn start(addr: &str, backends: Backends, options: ServerOptions) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let server = Arc::new(server);
        let url = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => format!("http://{a}"),
            #[allow(unreachable_patterns)]
            _ => return Err(std::io::Error::other("unsupported listen address")),
        };
        let shared = Arc::new(Shared {
            backends,
            failures_left: AtomicUsize::new(options.fail_first),
            options,
            replay: Mutex::default(),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(&shared, request);
                    }
                })
            })
            .collect();
        Ok(Self { server, workers, url })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for RemoteServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn handle(shared: &Shared, mut request: tiny_http::Request) {
    let (status, body) = respond(shared, &mut request);
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let response = tiny_http::Response::from_string(body).with_status_code(status).with_header(header);
    let _ = request.respond(response);
}

fn error_envelope(request_id: &str, err: &BackendError) -> (u16, String) {
    let status = match err {
        BackendError::Unavailable { .. } => 503,
        BackendError::Conflict { .. } => 409,
        BackendError::NotFound { .. } => 404,
        BackendError::Protocol { .. } => 502,
        BackendError::InvalidInput { .. } | BackendError::Precondition { .. } => 400,
    };
    let env = ResponseEnvelope {
        request_id: request_id.to_string(),
        ok: false,
        result: None,
        error: Some(ErrorBody::from(err)),
    };
    (status, serde_json::to_string(&env).expect("envelope serializes"))
}

fn respond(shared: &Shared, request: &mut tiny_http::Request) -> (u16, String) {
    if let Some(key) = &shared.options.api_key {
        let expected = format!("Bearer {key}");
        let ok = request
            .headers()
            .iter()
            .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
        if !ok {
            return error_envelope("", &BackendError::invalid("missing or wrong API key"));
        }
    }
    if *request.method() != tiny_http::Method::Post {
        return error_envelope("", &BackendError::invalid("only POST is supported"));
    }
    let Some(op) = Op::from_path(request.url()) else {
        return error_envelope("", &BackendError::NotFound { message: format!("no endpoint {}", request.url()) });
    };
    let mut raw = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut raw) {
        return error_envelope("", &BackendError::invalid(e.to_string()));
    }
    let envelope: RequestEnvelope<Value> = match serde_json::from_str(&raw) {
        Ok(env) => env,
        Err(e) => return error_envelope("", &BackendError::invalid(format!("bad envelope: {e}"))),
    };
    let request_id = envelope.request_id;
    if let Some(hit) = shared.replay.lock().expect("replay lock").responses.get(&request_id) {
        return hit.clone();
    }
    if shared
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return error_envelope(&request_id, &BackendError::unavailable("injected failure"));
    }
    let outcome = dispatch(&shared.backends, op, envelope.payload);
    let answer = match outcome {
        Ok(result) => {
            let env = ResponseEnvelope { request_id: request_id.clone(), ok: true, result: Some(result), error: None };
            (200, serde_json::to_string(&env).expect("envelope serializes"))
        }
        Err(err) => error_envelope(&request_id, &err),
    };
    // Retryable failures are not replayed so a retry can succeed.
    if answer.0 != 503 {
        let mut replay = shared.replay.lock().expect("replay lock");
        replay.responses.insert(request_id.clone(), answer.clone());
        replay.order.push_back(request_id);
        if replay.order.len() > REPLAY_CAPACITY {
            if let Some(old) = replay.order.pop_front() {
                replay.responses.remove(&old);
            }
        }
    }
    answer
}

fn parse<T: DeserializeOwned>(payload: Value) -> BackendResult<T> {
    serde_json::from_value(payload).map_err(|e| BackendError::invalid(format!("bad payload: {e}")))
}

fn to_value<T: Serialize>(v: T) -> BackendResult<Value> {
    serde_json::to_value(v).map_err(|e| BackendError::Protocol { message: e.to_string() })
}

fn dispatch(b: &Backends, op: Op, payload: Value) -> BackendResult<Value> {
    match op {
        Op::JudgeRecall => {
            let r: ItemPolicyRequest = parse(payload)?;
            to_value(b.judge.recall(&r.item, &r.policy)?)
        }
        Op::JudgeCoverage => {
            let r: ItemPolicyRequest = parse(payload)?;
            to_value(b.judge.coverage(&r.item, &r.policy)?)
        }
        Op::JudgeNovelty => {
            let r: ItemPolicyRequest = parse(payload)?;
            to_value(b.judge.novelty(&r.item, &r.policy)?)
        }
        Op::JudgeSummarize => {
            let r: SummarizeRequest = parse(payload)?;
            to_value(SummarizeResponse { summary: b.judge.summarize(&r.texts, r.prior.as_ref())? })
        }
        Op::JudgeSelect => {
            let r: SelectRequest = parse(payload)?;
            to_value(b.judge.select(&r.item, &r.synopses)?)
        }
        Op::JudgeCluster => {
            let r: ClusterRequest = parse(payload)?;
            let groups = b.judge.cluster(&r.items)?;
            to_value(ClusterResponse {
                groups: groups.into_iter().map(|(item_id, group)| GroupEntry { item_id, group }).collect(),
            })
        }
        Op::GovernanceScore => {
            let r: GovernanceRequest = parse(payload)?;
            to_value(ScoreResponse { score: b.governance.score(&r.item, &r.issue_id)? })
        }
        Op::EmbedText => {
            let r: EmbedRequest = parse(payload)?;
            to_value(EmbedResponse { values: b.embedder.embed_text(&r.text)?.0 })
        }
        Op::EmbedInfo => to_value(EmbedInfoResponse { dim: b.embedder.dim() }),
        Op::MemoryWrite => {
            let r: MemoryWriteRequest = parse(payload)?;
            b.memory.write(&r.namespace, &r.synopsis)?;
            to_value(Empty {})
        }
        Op::MemoryReadAll => {
            let r: NamespaceRequest = parse(payload)?;
            to_value(SynopsesBody { synopses: b.memory.read_all(&r.namespace)? })
        }
        Op::MemoryRead => {
            let r: MemoryReadRequest = parse(payload)?;
            to_value(b.memory.read(&r.namespace, &r.cluster_id)?)
        }
        Op::MemoryImport => {
            let r: MemoryImportRequest = parse(payload)?;
            b.memory.import(&r.namespace, &r.synopses)?;
            to_value(Empty {})
        }
    }
}
