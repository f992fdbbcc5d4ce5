//! JSON-over-HTTP adapter for hosted backends.
//!
//! Every operation is a `POST /v1/<op>` whose body is a request envelope
//! `{"request_id": "...", "payload": {...}}`. Responses always carry an
//! envelope: `{"request_id", "ok": true, "result": ...}` or
//! `{"request_id", "ok": false, "error": {"code", "message", "retryable", "detail"}}`.
//! `docs/FORMATS.md` lists the payload of every operation.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Synopsis};
use crate::types::{ItemView, PolicyDoc};

mod client;
mod server;

pub use client::{RemoteBackend, RemoteConfig};
pub use server::{RemoteServer, ServerOptions};

pub const ENV_BASE_URL: &str = "RADAR_BACKEND_URL";
pub const ENV_TIMEOUT_MS: &str = "RADAR_BACKEND_TIMEOUT_MS";
pub const ENV_RETRIES: &str = "RADAR_BACKEND_RETRIES";
pub const ENV_API_KEY: &str = "RADAR_BACKEND_API_KEY";

/// Remote operations and their endpoint paths below `/v1/`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    JudgeRecall,
    JudgeCoverage,
    JudgeNovelty,
    JudgeSummarize,
    JudgeSelect,
    JudgeCluster,
    GovernanceScore,
    EmbedText,
    EmbedInfo,
    MemoryWrite,
    MemoryReadAll,
    MemoryRead,
    MemoryImport,
}

impl Op {
    pub const ALL: [Op; 13] = [
        Op::JudgeRecall,
        Op::JudgeCoverage,
        Op::JudgeNovelty,
        Op::JudgeSummarize,
        Op::JudgeSelect,
        Op::JudgeCluster,
        Op::GovernanceScore,
        Op::EmbedText,
        Op::EmbedInfo,
        Op::MemoryWrite,
        Op::MemoryReadAll,
        Op::MemoryRead,
        Op::MemoryImport,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Op::JudgeRecall => "judge/recall",
            Op::JudgeCoverage => "judge/coverage",
            Op::JudgeNovelty => "judge/novelty",
            Op::JudgeSummarize => "judge/summarize",
            Op::JudgeSelect => "judge/select",
            Op::JudgeCluster => "judge/cluster",
            Op::GovernanceScore => "governance/score",
            Op::EmbedText => "embed/text",
            Op::EmbedInfo => "embed/info",
            Op::MemoryWrite => "memory/write",
            Op::MemoryReadAll => "memory/read_all",
            Op::MemoryRead => "memory/read",
            Op::MemoryImport => "memory/import",
        }
    }

    pub fn from_path(path: &str) -> Option<Op> {
        let rest = path.strip_prefix("/v1/")?;
        Op::ALL.into_iter().find(|op| op.path() == rest)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestEnvelope<T> {
    pub request_id: String,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retryable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub request_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl From<&BackendError> for ErrorBody {
    fn from(err: &BackendError) -> Self {
        let (code, detail) = match err {
            BackendError::Unavailable { .. } => ("unavailable", None),
            BackendError::InvalidInput { .. } => ("invalid_input", None),
            BackendError::Precondition { .. } => ("precondition", None),
            BackendError::Conflict { cluster_id, expected, got } => (
                "conflict",
                Some(serde_json::json!({ "cluster_id": cluster_id, "expected": expected, "got": got })),
            ),
            BackendError::NotFound { .. } => ("not_found", None),
            BackendError::Protocol { .. } => ("protocol", None),
        };
        let message = match err {
            BackendError::Unavailable { message, .. }
            | BackendError::InvalidInput { message }
            | BackendError::Precondition { message }
            | BackendError::NotFound { message }
            | BackendError::Protocol { message } => message.clone(),
            BackendError::Conflict { .. } => err.to_string(),
        };
        ErrorBody { code: code.to_string(), message, retryable: err.is_retryable(), detail }
    }
}

impl From<ErrorBody> for BackendError {
    fn from(body: ErrorBody) -> Self {
        let message = body.message;
        match body.code.as_str() {
            "unavailable" => BackendError::Unavailable { message, retryable: body.retryable },
            "invalid_input" => BackendError::InvalidInput { message },
            "precondition" => BackendError::Precondition { message },
            "not_found" => BackendError::NotFound { message },
            "conflict" => {
                let detail = body.detail.unwrap_or_default();
                let field = |k: &str| detail.get(k).and_then(Value::as_u64).unwrap_or(0) as u32;
                BackendError::Conflict {
                    cluster_id: detail.get("cluster_id").and_then(Value::as_str).unwrap_or_default().to_string(),
                    expected: field("expected"),
                    got: field("got"),
                }
            }
            _ if body.retryable => BackendError::Unavailable { message, retryable: true },
            _ => BackendError::Protocol { message },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemPolicyRequest {
    pub item: ItemView,
    pub policy: PolicyDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummarizeRequest {
    pub texts: Vec<String>,
    #[serde(default)]
    pub prior: Option<Synopsis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummarizeResponse {
    pub summary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectRequest {
    pub item: ItemView,
    pub synopses: Vec<Synopsis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRequest {
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEntry {
    pub item_id: String,
    pub group: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResponse {
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GovernanceRequest {
    pub item: ItemView,
    pub issue_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Empty {}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedInfoResponse {
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryWriteRequest {
    pub namespace: String,
    pub synopsis: Synopsis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamespaceRequest {
    pub namespace: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryReadRequest {
    pub namespace: String,
    pub cluster_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynopsesBody {
    pub synopses: Vec<Synopsis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryImportRequest {
    pub namespace: String,
    pub synopses: Vec<Synopsis>,
}
