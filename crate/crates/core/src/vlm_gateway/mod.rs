//! Model backends behind one retrying, rate-limited entry point.
//!
//! Frames are always passed by URL. [`RemoteChat`] speaks the
//! OpenAI-compatible chat-completion protocol; [`MockOracle`] answers
//! deterministically by replaying the synthetic corpus oracle on the
//! trajectory behind the requested frames.

pub mod limiter;
mod mock;
mod remote;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::{Duration, Instant};

use crate::media_ingest::{store::is_valid_hash, FrameSet, FrameStore};
use crate::prompt_forge::{ChatMessage, ContentPart, MessageContent, PromptBundle};
use crate::synth_arena::OracleThresholds;
pub use limiter::{Limiter, TokenBucket};
pub use mock::{mock_reason, MockOracle};
pub use remote::RemoteChat;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "remote")]
    RemoteChat,
    #[serde(rename = "mock")]
    MockOracle,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::RemoteChat),
            "mock" => Ok(BackendKind::MockOracle),
            other => Err(format!("unknown backend {other:?} (expected remote or mock)")),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::RemoteChat => "remote",
            BackendKind::MockOracle => "mock",
        })
    }
}

/// Where the mock backend finds frame-set origins and trajectory sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    pub store: PathBuf,
    pub sidecars: PathBuf,
    #[serde(default)]
    pub thresholds: OracleThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_ref: String,
    pub max_inflight: usize,
    pub requests_per_minute: u32,
    pub temperature: f64,
    /// Per-attempt timeout, seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// First retry delay, seconds; doubles on each further retry.
    pub backoff_base: f64,
    #[serde(default)]
    pub mock: Option<MockSettings>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::RemoteChat,
            endpoint_url: Some(DEFAULT_ENDPOINT.to_string()),
            model_name: "gpt-4o".to_string(),
            api_key_ref: "OPENAI_API_KEY".to_string(),
            max_inflight: 4,
            requests_per_minute: 60,
            temperature: 0.0,
            timeout: 60.0,
            max_retries: 3,
            backoff_base: 1.0,
            mock: None,
        }
    }
}

impl BackendConfig {
    pub fn mock(store: impl Into<PathBuf>, sidecars: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::MockOracle,
            endpoint_url: None,
            model_name: "mock-oracle".to_string(),
            max_inflight: 8,
            requests_per_minute: 60_000,
            mock: Some(MockSettings {
                store: store.into(),
                sidecars: sidecars.into(),
                thresholds: OracleThresholds::default(),
            }),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if self.max_inflight < 1 {
            return bad("max_inflight must be >= 1");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.requests_per_minute < 1 {
            return bad("requests_per_minute must be >= 1");
        }
        if !(self.timeout > 0.0) || !(self.backoff_base >= 0.0) {
            return bad("timeout must be > 0 and backoff_base >= 0");
        }
        if self.kind == BackendKind::MockOracle && self.mock.is_none() {
            return bad("mock backend needs store and sidecar locations");
        }
        Ok(())
    }

    /// Label used in reports, e.g. `remote:gpt-4o`.
    pub fn describe(&self) -> String {
        format!("{}:{}", self.kind, self.model_name)
    }
}

#[derive(Debug, Clone)]
pub struct InferenceRequest {
    pub request_id: String,
    pub bundle: PromptBundle,
    /// Exemplar frames first (few-shot only), then the query frames.
    pub frame_urls: Vec<String>,
    /// Extra instruction appended after the frames, used for repair retries.
    pub reminder: Option<String>,
    /// Unix milliseconds.
    pub created_at: u64,
}

impl InferenceRequest {
    pub fn new(request_id: impl Into<String>, bundle: PromptBundle, frame_urls: Vec<String>) -> Result<Self, GatewayError> {
        if frame_urls.len() != bundle.total_frames() {
            return Err(GatewayError::InvalidRequest(format!(
                "{} frame URLs for {} slots",
                frame_urls.len(),
                bundle.total_frames()
            )));
        }
        Ok(Self {
            request_id: request_id.into(),
            bundle,
            frame_urls,
            reminder: None,
            created_at: unix_millis(),
        })
    }

    pub fn with_reminder(mut self, reminder: &str) -> Self {
        self.reminder = Some(reminder.to_string());
        self
    }

    /// The query frames, without exemplar frames.
    pub fn query_urls(&self) -> &[String] {
        &self.frame_urls[self.frame_urls.len() - self.bundle.frame_slots..]
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut messages = self.bundle.to_messages(&self.frame_urls);
        if let Some(reminder) = &self.reminder {
            if let Some(ChatMessage {
                content: MessageContent::Parts(parts),
                ..
            }) = messages.last_mut()
            {
                parts.push(ContentPart::text(reminder.clone()));
            }
        }
        messages
    }
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub request_id: String,
    pub body: String,
    /// Seconds spent in the successful attempt.
    pub latency: f64,
    pub attempt: u32,
    pub backend: BackendKind,
}

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CallError {
    #[error("timed out")]
    Timeout,
    #[error("rate limited (429)")]
    RateLimited,
    #[error("server error {0}: {1}")]
    Server(u16, String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected {0}: {1}")]
    Rejected(u16, String),
    #[error("cannot answer: {0}")]
    Unresolvable(String),
}

impl CallError {
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            CallError::Timeout | CallError::RateLimited | CallError::Server(..) | CallError::Transport(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("authentication failed after {attempts} attempt(s): {reason}")]
    AuthFailure { attempts: u32, reason: String },
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    fn from_call(err: CallError, attempts: u32) -> Self {
        match err {
            CallError::Timeout => GatewayError::Timeout { attempts },
            CallError::RateLimited => GatewayError::RateLimited { attempts },
            CallError::Auth(reason) => GatewayError::AuthFailure { attempts, reason },
            other => GatewayError::BackendUnavailable {
                attempts,
                reason: other.to_string(),
            },
        }
    }

    pub fn attempts(&self) -> Option<u32> {
        match self {
            GatewayError::Timeout { attempts }
            | GatewayError::RateLimited { attempts }
            | GatewayError::AuthFailure { attempts, .. }
            | GatewayError::BackendUnavailable { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// One attempt; returns the model's answer text verbatim.
    async fn call(&self, request: &InferenceRequest) -> Result<String, CallError>;
}

#[derive(Debug, Serialize)]
struct WireEntry<'a> {
    request_id: &'a str,
    attempt: u32,
    at_ms: u64,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    body: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    latency: f64,
}

/// JSON-lines log of every attempt: request messages and response body or error.
#[derive(Debug)]
pub struct WireLog {
    out: Mutex<BufWriter<File>>,
}

impl WireLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, entry: &WireEntry<'_>) {
        let mut out = self.out.lock().unwrap();
        let res = serde_json::to_writer(&mut *out, entry)
            .map_err(std::io::Error::from)
            .and_then(|_| out.write_all(b"\n"))
            .and_then(|_| out.flush());
        if let Err(e) = res {
            tracing::warn!(error = %e, "wire log write failed");
        }
    }
}

/// Shared entry point: admission control, per-attempt timeout and retries.
#[derive(Clone)]
pub struct Gateway {
    cfg: BackendConfig,
    backend: Arc<dyn Backend>,
    limiter: Limiter,
    wire: Option<Arc<WireLog>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(cfg: BackendConfig, backend: Arc<dyn Backend>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Self {
            limiter: Limiter::new(cfg.max_inflight, cfg.requests_per_minute),
            cfg,
            backend,
            wire: None,
        })
    }

    /// Build the backend named by the config.
    pub fn from_config(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend: Arc<dyn Backend> = match cfg.kind {
            BackendKind::RemoteChat => Arc::new(RemoteChat::from_config(&cfg)?),
            BackendKind::MockOracle => Arc::new(MockOracle::new(cfg.mock.clone().expect("validated"))),
        };
        Self::new(cfg, backend)
    }

    pub fn with_wire_log(mut self, log: WireLog) -> Self {
        self.wire = Some(Arc::new(log));
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.cfg.backoff_base * 2f64.powi(attempt as i32 - 1))
    }

    pub async fn infer(&self, request: &InferenceRequest) -> Result<RawResponse, GatewayError> {
        let messages = if self.wire.is_some() { request.messages() } else { Vec::new() };
        let timeout = Duration::from_secs_f64(self.cfg.timeout);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let permit = self.limiter.admit().await;
            let started = Instant::now();
            let result = tokio::time::timeout(timeout, self.backend.call(request))
                .await
                .unwrap_or(Err(CallError::Timeout));
            let latency = started.elapsed().as_secs_f64();
            drop(permit);

            if let Some(wire) = &self.wire {
                wire.record(&WireEntry {
                    request_id: &request.request_id,
                    attempt,
                    at_ms: unix_millis(),
                    messages: &messages,
                    body: result.as_ref().ok().map(String::as_str),
                    error: result.as_ref().err().map(ToString::to_string),
                    latency,
                });
            }

            match result {
                Ok(body) => {
                    return Ok(RawResponse {
                        request_id: request.request_id.clone(),
                        body,
                        latency,
                        attempt,
                        backend: self.backend.kind(),
                    })
                }
                Err(e) if e.retryable() && attempt <= self.cfg.max_retries => {
                    tracing::debug!(request = %request.request_id, attempt, error = %e, "retrying");
                    tokio::time::sleep(self.backoff(attempt)).await;
                }
                Err(e) => return Err(GatewayError::from_call(e, attempt)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("invalid base URL {0:?}")]
    InvalidBaseUrl(String),
    #[error("frame {0} is not in the store")]
    MissingFrame(String),
}

/// Public URLs for a frame set, `<base_url>/frames/<hash>.jpg`, in frame order.
pub fn host_frames(frameset: &FrameSet, base_url: &str, store: &FrameStore) -> Result<Vec<String>, HostError> {
    let base = base_url.trim_end_matches('/');
    let parsed = reqwest::Url::parse(base).map_err(|_| HostError::InvalidBaseUrl(base_url.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
        return Err(HostError::InvalidBaseUrl(base_url.to_string()));
    }
    frameset
        .hashes()
        .map(|h| {
            if store.contains(h) {
                Ok(frame_url(base, h))
            } else {
                Err(HostError::MissingFrame(h.to_string()))
            }
        })
        .collect()
}

pub fn frame_url(base: &str, hash: &str) -> String {
    format!("{}/frames/{hash}.jpg", base.trim_end_matches('/'))
}

/// Content hash named by a frame URL, if it has the expected shape.
pub fn hash_from_url(url: &str) -> Option<&str> {
    let name = url.rsplit('/').next()?;
    let hash = name.strip_suffix(".jpg")?;
    is_valid_hash(hash).then_some(hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_ingest::FrameRef;
    use crate::prompt_forge::{build_prompt, PromptVariant};
    use crate::taxonomy::Stage;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn stored_frameset(store: &FrameStore, n: usize) -> FrameSet {
        FrameSet {
            segment_id: "s".into(),
            frames: (0..n)
                .map(|i| {
                    let hash = store.put(format!("frame {i}").as_bytes()).unwrap();
                    FrameRef {
                        timestamp: i as f64,
                        location: FrameStore::relative_location(&hash),
                        content_hash: hash,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn hosting_examples() {
        let dir = tempfile::tempdir().unwrap();
        let store = FrameStore::new(dir.path());
        let fs = stored_frameset(&store, 6);
        let urls = host_frames(&fs, "http://localhost:8080/", &store).unwrap();
        assert_eq!(urls.len(), 6);
        for (url, frame) in urls.iter().zip(&fs.frames) {
            assert_eq!(*url, format!("http://localhost:8080/frames/{}.jpg", frame.content_hash));
            assert_eq!(hash_from_url(url), Some(frame.content_hash.as_str()));
        }
        assert_eq!(host_frames(&fs, "http://localhost:8080", &store).unwrap(), urls);
        assert!(matches!(host_frames(&fs, "", &store), Err(HostError::InvalidBaseUrl(_))));
        assert!(matches!(host_frames(&fs, "ftp://x", &store), Err(HostError::InvalidBaseUrl(_))));

        let mut missing = fs.clone();
        missing.frames[2].content_hash = "0".repeat(64);
        assert!(matches!(host_frames(&missing, "http://h", &store), Err(HostError::MissingFrame(_))));
    }

    struct Scripted {
        failures: Vec<CallError>,
        calls: AtomicU32,
    }

    #[async_trait]
    impl Backend for Scripted {
        fn kind(&self) -> BackendKind {
            BackendKind::RemoteChat
        }

        async fn call(&self, _: &InferenceRequest) -> Result<String, CallError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            match self.failures.get(n) {
                Some(e) => Err(e.clone()),
                None => Ok("{\"label\": \"Benign\", \"reason\": \"ok\"}".into()),
            }
        }
    }

    fn request() -> InferenceRequest {
        let bundle = build_prompt(Stage::Stage1, PromptVariant::Baseline, 2, None).unwrap();
        InferenceRequest::new("r", bundle, vec!["http://h/a.jpg".into(), "http://h/b.jpg".into()]).unwrap()
    }

    async fn run_with(failures: Vec<CallError>) -> (Result<RawResponse, GatewayError>, u32, Duration) {
        let backend = Arc::new(Scripted {
            failures,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::new(BackendConfig::default(), backend.clone()).unwrap();
        let start = Instant::now();
        let res = gw.infer(&request()).await;
        (res, backend.calls.load(Ordering::SeqCst), start.elapsed())
    }

    #[tokio::test(start_paused = true)]
    async fn retries_transient_errors_with_backoff() {
        let (res, calls, elapsed) = run_with(vec![CallError::RateLimited, CallError::Server(503, "x".into())]).await;
        let raw = res.unwrap();
        assert_eq!(raw.attempt, 3);
        assert_eq!(calls, 3);
        // 1 s + 2 s of backoff
        assert!((elapsed.as_secs_f64() - 3.0).abs() < 0.01, "{elapsed:?}");
    }

    #[tokio::test(start_paused = true)]
    async fn gives_up_after_max_retries() {
        let (res, calls, elapsed) = run_with(vec![CallError::Timeout; 10]).await;
        assert_eq!(res.unwrap_err(), GatewayError::Timeout { attempts: 4 });
        assert_eq!(calls, 4);
        assert!((elapsed.as_secs_f64() - 7.0).abs() < 0.01);
        let (res, _, _) = run_with(vec![CallError::RateLimited; 10]).await;
        assert_eq!(res.unwrap_err(), GatewayError::RateLimited { attempts: 4 });
    }

    #[tokio::test(start_paused = true)]
    async fn auth_failures_are_not_retried() {
        let (res, calls, _) = run_with(vec![CallError::Auth("bad key".into())]).await;
        assert!(matches!(res, Err(GatewayError::AuthFailure { attempts: 1, .. })));
        assert_eq!(calls, 1);
        let (res, calls, _) = run_with(vec![CallError::Rejected(400, "bad".into())]).await;
        assert!(matches!(res, Err(GatewayError::BackendUnavailable { attempts: 1, .. })));
        assert_eq!(calls, 1);
    }

    #[test]
    fn request_frame_count_must_match() {
        let bundle = build_prompt(Stage::Stage1, PromptVariant::Baseline, 6, None).unwrap();
        assert!(InferenceRequest::new("r", bundle, vec![]).is_err());
    }

    #[test]
    fn reminder_is_appended_to_last_message() {
        let req = request().with_reminder("fix it");
        let msgs = req.messages();
        let MessageContent::Parts(parts) = &msgs.last().unwrap().content else { panic!() };
        assert_eq!(parts.last().unwrap(), &ContentPart::text("fix it"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.max_inflight = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::default();
        cfg.temperature = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::default();
        cfg.kind = BackendKind::MockOracle;
        assert!(cfg.validate().is_err());
    }

    #[tokio::test]
    async fn wire_log_records_each_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs/x/wire.log");
        let backend = Arc::new(Scripted {
            failures: vec![CallError::Server(500, "boom".into())],
            calls: AtomicU32::new(0),
        });
        let mut cfg = BackendConfig::default();
        cfg.backoff_base = 0.0;
        let gw = Gateway::new(cfg, backend).unwrap().with_wire_log(WireLog::open(&path).unwrap());
        gw.infer(&request()).await.unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0]["error"].as_str().unwrap().contains("500"));
        assert_eq!(lines[1]["attempt"], 2);
        assert_eq!(lines[1]["messages"][0]["role"], "system");
    }
}
