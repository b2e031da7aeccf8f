//! Single boundary to the language model.
//!
//! Chat-completion and embedding requests travel over a configurable
//! JSON-over-HTTP endpoint in the de-facto commercial shape (`messages` array
//! in, `choices[0].message.content` out). Besides the remote backend there is
//! a record backend that tees replies into a transcript file, and a replay
//! backend that serves a recorded transcript deterministically: an entire
//! pipeline run under replay is a pure function of its inputs and the
//! transcript.
//!
//! Credentials come from the environment (`LLM_API_KEY`), never from config
//! files. `LLM_BASE_URL` and `LLM_MODEL` configure the endpoint and model.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the API credential.
pub const ENV_API_KEY: &str = "LLM_API_KEY";
/// Environment variable holding the endpoint base URL.
pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
/// Environment variable holding the model id.
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("authentication failed (HTTP {0})")]
    AuthFailure(u16),
    #[error("rate limited after retries (retry-after {retry_after:?}s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("provider returned HTTP {0}")]
    ProviderStatus(u16),
    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),
    #[error("no transcript entry for request digest {0}")]
    TranscriptMiss(String),
    #[error("embeddings are not available on this backend")]
    EmbeddingsUnsupported,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

/// Model id, temperature and token cap shared by all requests of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestProfile {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for RequestProfile {
    fn default() -> Self {
        Self { model: "gpt-4o".into(), temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(profile: &RequestProfile, messages: Vec<ChatMessage>) -> Result<Self, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        Ok(Self {
            model: profile.model.clone(),
            messages,
            temperature: profile.temperature,
            max_tokens: profile.max_tokens,
        })
    }

    /// Digest of the canonical JSON form (sorted keys), stable across
    /// construction order and processes.
    pub fn canonical_digest(&self) -> String {
        let mut messages = Vec::new();
        for m in &self.messages {
            let mut obj = serde_json::Map::new();
            obj.insert("content".into(), m.content.clone().into());
            obj.insert(
                "role".into(),
                serde_json::to_value(m.role).expect("role serializes"),
            );
            messages.push(serde_json::Value::Object(obj));
        }
        let mut root = serde_json::Map::new();
        root.insert("max_tokens".into(), serde_json::to_value(self.max_tokens).unwrap());
        root.insert("messages".into(), serde_json::Value::Array(messages));
        root.insert("model".into(), self.model.clone().into());
        root.insert("temperature".into(), serde_json::to_value(self.temperature).unwrap());
        let canonical = serde_json::Value::Object(root).to_string();
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Assistant reply, content verbatim and untrimmed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub usage: Usage,
    pub provider_id: String,
}

impl ChatReply {
    /// Digest of the verbatim content; referenced by extracted scripts.
    pub fn digest(&self) -> String {
        format!("{:x}", Sha256::digest(self.content.as_bytes()))
    }
}

/// One recorded exchange: request digest plus the reply that answered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub content: String,
    #[serde(default)]
    pub usage: Usage,
}

/// An ordered list of recorded exchanges, JSON-lines on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries }
    }

    /// Convenience for tests and fixtures: entries with empty digests, which
    /// ordered replay accepts for any request.
    pub fn from_replies<S: Into<String>>(replies: Vec<S>) -> Self {
        Self {
            entries: replies
                .into_iter()
                .map(|content| TranscriptEntry {
                    digest: String::new(),
                    content: content.into(),
                    usage: Usage::default(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = fs::File::open(path)?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::MalformedProviderResponse(format!("transcript: {e}")))?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut out = Vec::new();
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry).expect("entry serializes");
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// How replay matches requests to transcript entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Consume entries strictly in order. An entry with a non-empty digest
    /// must still match the request.
    #[default]
    Ordered,
    /// Serve the first unconsumed entry whose digest matches the request.
    ByDigest,
}

/// Remote endpoint settings.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Maximum retries after a rate-limit response; total attempts are
    /// `max_retries + 1`.
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub request_timeout: Duration,
    /// Concurrent in-flight request cap.
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            request_timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    /// Read endpoint and credential from the environment, keeping defaults
    /// for anything unset.
    pub fn from_env() -> Self {
        let mut config = Self::default();
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            if !url.is_empty() {
                config.base_url = url;
            }
        }
        config.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        config
    }
}

struct SlotPool {
    available: Mutex<usize>,
    freed: Condvar,
}

impl SlotPool {
    fn new(slots: usize) -> Self {
        Self { available: Mutex::new(slots.max(1)), freed: Condvar::new() }
    }

    fn run<T>(&self, work: impl FnOnce() -> T) -> T {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        drop(available);
        let result = work();
        *self.available.lock().unwrap() += 1;
        self.freed.notify_one();
        result
    }
}

struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    slots: SlotPool,
}

struct ReplayState {
    entries: Vec<TranscriptEntry>,
    consumed: Vec<bool>,
    cursor: usize,
}

enum BackendImpl {
    Remote(RemoteBackend),
    Replay { state: Mutex<ReplayState>, mode: ReplayMode },
    Record { remote: RemoteBackend, sink: Mutex<PathBuf> },
}

/// The LLM boundary. Thread-safe; the remote backend bounds concurrent
/// in-flight requests, the replay backend serializes consumption.
pub struct Gateway {
    backend: BackendImpl,
    requests: AtomicUsize,
}

impl Gateway {
    pub fn remote(config: RemoteConfig) -> Self {
        Self { backend: BackendImpl::Remote(remote_backend(config)), requests: AtomicUsize::new(0) }
    }

    pub fn replay(transcript: Transcript, mode: ReplayMode) -> Self {
        let consumed = vec![false; transcript.entries.len()];
        Self {
            backend: BackendImpl::Replay {
                state: Mutex::new(ReplayState { entries: transcript.entries, consumed, cursor: 0 }),
                mode,
            },
            requests: AtomicUsize::new(0),
        }
    }

    /// Forward to the remote endpoint and append every exchange to the
    /// transcript file at `sink`.
    pub fn record(config: RemoteConfig, sink: PathBuf) -> Self {
        Self {
            backend: BackendImpl::Record { remote: remote_backend(config), sink: Mutex::new(sink) },
            requests: AtomicUsize::new(0),
        }
    }

    /// Number of completion requests issued so far.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            BackendImpl::Remote(remote) => complete_remote(remote, request),
            BackendImpl::Replay { state, mode } => {
                replay_lookup(&mut state.lock().unwrap(), *mode, &request.canonical_digest())
            }
            BackendImpl::Record { remote, sink } => {
                let reply = complete_remote(remote, request)?;
                let entry = TranscriptEntry {
                    digest: request.canonical_digest(),
                    content: reply.content.clone(),
                    usage: reply.usage,
                };
                let sink = sink.lock().unwrap();
                let mut file = fs::OpenOptions::new().create(true).append(true).open(&*sink)?;
                serde_json::to_writer(&mut file, &entry).expect("entry serializes");
                file.write_all(b"\n")?;
                Ok(reply)
            }
        }
    }

    /// Request embeddings for `texts`. Only remote-capable backends support
    /// this; offline runs use the fallback embedder instead.
    pub fn embed_texts(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let remote = match &self.backend {
            BackendImpl::Remote(remote) => remote,
            BackendImpl::Record { remote, .. } => remote,
            BackendImpl::Replay { .. } => return Err(GatewayError::EmbeddingsUnsupported),
        };
        let body = serde_json::json!({ "model": model, "input": texts });
        let response: EmbeddingsWire = send_json(remote, "/embeddings", &body)?;
        Ok(response.data.into_iter().map(|d| d.embedding).collect())
    }
}

fn remote_backend(config: RemoteConfig) -> RemoteBackend {
    let client = reqwest::blocking::Client::builder()
        .timeout(config.request_timeout)
        .build()
        .expect("client builds");
    let slots = SlotPool::new(config.max_in_flight);
    RemoteBackend { config, client, slots }
}

fn replay_lookup(
    state: &mut ReplayState,
    mode: ReplayMode,
    digest: &str,
) -> Result<ChatReply, GatewayError> {
    let position = match mode {
        ReplayMode::Ordered => {
            let i = state.cursor;
            if i >= state.entries.len() {
                return Err(GatewayError::TranscriptMiss(digest.to_string()));
            }
            if !state.entries[i].digest.is_empty() && state.entries[i].digest != digest {
                return Err(GatewayError::TranscriptMiss(digest.to_string()));
            }
            state.cursor += 1;
            i
        }
        ReplayMode::ByDigest => state
            .entries
            .iter()
            .enumerate()
            .position(|(i, e)| !state.consumed[i] && e.digest == digest)
            .ok_or_else(|| GatewayError::TranscriptMiss(digest.to_string()))?,
    };
    state.consumed[position] = true;
    let entry = &state.entries[position];
    Ok(ChatReply {
        content: entry.content.clone(),
        usage: entry.usage,
        provider_id: "replay".into(),
    })
}

#[derive(Serialize)]
struct ChatWireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatWireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingsWire {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

fn complete_remote(remote: &RemoteBackend, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
    let body = ChatWireRequest {
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    let wire: ChatWireReply = send_json(remote, "/chat/completions", &body)?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedProviderResponse("no choices".into()))?;
    let usage = wire.usage.unwrap_or_default();
    Ok(ChatReply {
        content: choice.message.content,
        usage: Usage { prompt_tokens: usage.prompt_tokens, completion_tokens: usage.completion_tokens },
        provider_id: wire.model.unwrap_or_else(|| remote.config.base_url.clone()),
    })
}

/// POST with auth, bounded concurrency, and retry-with-backoff on HTTP 429.
fn send_json<T: serde::de::DeserializeOwned>(
    remote: &RemoteBackend,
    route: &str,
    body: &impl Serialize,
) -> Result<T, GatewayError> {
    let url = format!("{}{}", remote.config.base_url.trim_end_matches('/'), route);
    let mut attempt = 0u32;
    loop {
        let response = remote.slots.run(|| {
            let mut req = remote.client.post(&url).json(body);
            if let Some(key) = &remote.config.api_key {
                req = req.bearer_auth(key);
            }
            req.send()
        });
        let response = match response {
            Ok(r) => r,
            Err(e) => return Err(GatewayError::EndpointUnreachable(e.to_string())),
        };
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::AuthFailure(status.as_u16()));
        }
        if status.as_u16() == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok());
            if attempt >= remote.config.max_retries {
                return Err(GatewayError::RateLimited { retry_after });
            }
            let backoff = retry_after
                .map(Duration::from_secs)
                .unwrap_or_else(|| remote.config.backoff_base * 2u32.pow(attempt));
            std::thread::sleep(backoff);
            attempt += 1;
            continue;
        }
        if !status.is_success() {
            return Err(GatewayError::ProviderStatus(status.as_u16()));
        }
        return response
            .json::<T>()
            .map_err(|e| GatewayError::MalformedProviderResponse(e.to_string()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(content: &str) -> ChatRequest {
        ChatRequest::new(
            &RequestProfile::default(),
            vec![ChatMessage::system("sys"), ChatMessage::user(content)],
        )
        .unwrap()
    }

    #[test]
    fn digest_is_stable_for_identical_fields() {
        let a = request("hello");
        let b = request("hello");
        assert_eq!(a.canonical_digest(), b.canonical_digest());
        assert_ne!(a.canonical_digest(), request("other").canonical_digest());
    }

    #[test]
    fn first_message_must_not_be_assistant() {
        let err = ChatRequest::new(
            &RequestProfile::default(),
            vec![ChatMessage { role: Role::Assistant, content: "hi".into() }],
        );
        assert!(matches!(err, Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(
            ChatRequest::new(&RequestProfile::default(), vec![]),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn ordered_replay_consumes_in_order() {
        let gateway =
            Gateway::replay(Transcript::from_replies(vec!["first", "second"]), ReplayMode::Ordered);
        assert_eq!(gateway.complete(&request("a")).unwrap().content, "first");
        assert_eq!(gateway.complete(&request("b")).unwrap().content, "second");
        assert!(matches!(
            gateway.complete(&request("c")),
            Err(GatewayError::TranscriptMiss(_))
        ));
        assert_eq!(gateway.requests_sent(), 3);
    }

    #[test]
    fn ordered_replay_checks_non_empty_digests() {
        let req = request("a");
        let transcript = Transcript::new(vec![TranscriptEntry {
            digest: req.canonical_digest(),
            content: "ok".into(),
            usage: Usage::default(),
        }]);
        let gateway = Gateway::replay(transcript.clone(), ReplayMode::Ordered);
        assert_eq!(gateway.complete(&req).unwrap().content, "ok");

        let gateway = Gateway::replay(transcript, ReplayMode::Ordered);
        assert!(matches!(
            gateway.complete(&request("different")),
            Err(GatewayError::TranscriptMiss(_))
        ));
    }

    #[test]
    fn digest_replay_matches_out_of_order() {
        let (ra, rb) = (request("a"), request("b"));
        let transcript = Transcript::new(vec![
            TranscriptEntry { digest: ra.canonical_digest(), content: "A".into(), usage: Usage::default() },
            TranscriptEntry { digest: rb.canonical_digest(), content: "B".into(), usage: Usage::default() },
        ]);
        let gateway = Gateway::replay(transcript, ReplayMode::ByDigest);
        assert_eq!(gateway.complete(&rb).unwrap().content, "B");
        assert_eq!(gateway.complete(&ra).unwrap().content, "A");
        // Both entries consumed now.
        assert!(matches!(
            gateway.complete(&ra),
            Err(GatewayError::TranscriptMiss(_))
        ));
    }

    #[test]
    fn replay_never_serves_embeddings() {
        let gateway = Gateway::replay(Transcript::default(), ReplayMode::Ordered);
        assert!(matches!(
            gateway.embed_texts("m", &["x".into()]),
            Err(GatewayError::EmbeddingsUnsupported)
        ));
    }

    #[test]
    fn transcript_round_trips() {
        let transcript = Transcript::new(vec![TranscriptEntry {
            digest: "d1".into(),
            content: "line one\nline two".into(),
            usage: Usage { prompt_tokens: 3, completion_tokens: 7 },
        }]);
        let file = tempfile::NamedTempFile::new().unwrap();
        transcript.save(file.path()).unwrap();
        assert_eq!(Transcript::load(file.path()).unwrap(), transcript);
    }
}
