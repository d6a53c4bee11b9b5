//! Moderation service: clip intake, frame hosting for the model's URL
//! fetches, cascade classification, a review queue and the audit log.
//!
//! All writes go through one audit-log writer; HTTP reads take a shared
//! lock on the materialized [`State`].

mod http;
pub mod state;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, Semaphore};

use crate::finetune_export::{gold_reason, sft_record, SftRecord};
use crate::media_ingest::{
    is_vrclip_bytes, store::sha256_hex, ClipDecoder, ClipOutcome, ClipRecord, IngestStore, MediaDecoder, Room,
    DEFAULT_FRAMES_PER_SEGMENT,
};
use crate::pipeline::{Pipeline, PipelineError, RunConfig, StageMode};
use crate::prompt_forge::PromptVariant;
use crate::taxonomy::{Stage, StageLabel, Subcategory};
use crate::vlm_gateway::{host_frames, unix_millis, BackendConfig, BackendKind, DEFAULT_ENDPOINT};
pub use http::router;
pub use state::{AuditEvent, AuditLog, ClipStatus, Decision, Event, ReviewItem, ReviewStatus, State, StateError};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub store: PathBuf,
    /// Base of the frame URLs handed to the model; must reach this service.
    pub public_base_url: String,
    pub backend: BackendConfig,
    pub variant: PromptVariant,
    pub frames_per_segment: usize,
    pub ingest_workers: usize,
    pub classify_workers: usize,
    /// Required as `Authorization: Bearer <token>` on everything but frames.
    pub auth_token: Option<String>,
    pub store_quota_bytes: u64,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// On-disk shape of the service config. Everything is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    bind: Option<SocketAddr>,
    store: Option<PathBuf>,
    public_base_url: Option<String>,
    backend: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    rpm: Option<u32>,
    max_inflight: Option<usize>,
    temperature: Option<f64>,
    timeout: Option<f64>,
    max_retries: Option<u32>,
    mock_sidecars: Option<PathBuf>,
    variant: Option<PromptVariant>,
    frames_per_segment: Option<usize>,
    ingest_workers: Option<usize>,
    classify_workers: Option<usize>,
    auth_token: Option<String>,
    store_quota_bytes: Option<u64>,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        Self {
            bind: "127.0.0.1:8080".parse().expect("literal address"),
            store: store.into(),
            public_base_url: "http://127.0.0.1:8080".into(),
            backend,
            variant: PromptVariant::CoT,
            frames_per_segment: DEFAULT_FRAMES_PER_SEGMENT,
            ingest_workers: 2,
            classify_workers: 4,
            auth_token: None,
            store_quota_bytes: 10 * 1024 * 1024 * 1024,
        }
    }

    /// Service over `store` classifying with the trajectory oracle.
    pub fn mock(store: impl Into<PathBuf>, sidecars: impl Into<PathBuf>) -> Self {
        let store = store.into();
        let backend = BackendConfig::mock(store.join("ingest"), sidecars);
        Self::new(store, backend)
    }

    /// Parse a TOML config. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let f: ConfigFile = toml::from_str(text)?;
        let path = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let mut cfg = Self::new(base_dir.join("service-data"), BackendConfig::default());
        let b = &mut cfg.backend;
        if let Some(kind) = f.backend {
            b.kind = kind.parse().map_err(ConfigError::Invalid)?;
        }
        b.endpoint_url = f.endpoint.or(b.endpoint_url.take());
        b.model_name = f.model.unwrap_or(std::mem::take(&mut b.model_name));
        b.api_key_ref = f.api_key_env.unwrap_or(std::mem::take(&mut b.api_key_ref));
        b.temperature = f.temperature.unwrap_or(b.temperature);
        b.timeout = f.timeout.unwrap_or(b.timeout);
        b.max_retries = f.max_retries.unwrap_or(b.max_retries);
        if let Some(store) = f.store {
            cfg.store = path(store);
        }
        cfg.bind = f.bind.unwrap_or(cfg.bind);
        cfg.public_base_url = f.public_base_url.unwrap_or(cfg.public_base_url);
        cfg.variant = f.variant.unwrap_or(cfg.variant);
        cfg.frames_per_segment = f.frames_per_segment.unwrap_or(cfg.frames_per_segment);
        cfg.ingest_workers = f.ingest_workers.unwrap_or(cfg.ingest_workers);
        cfg.classify_workers = f.classify_workers.unwrap_or(cfg.classify_workers);
        cfg.auth_token = f.auth_token.filter(|t| !t.is_empty());
        cfg.store_quota_bytes = f.store_quota_bytes.unwrap_or(cfg.store_quota_bytes);

        if cfg.backend.kind == BackendKind::MockOracle {
            let sidecars = f
                .mock_sidecars
                .map(path)
                .ok_or_else(|| ConfigError::Invalid("backend = \"mock\" needs mock_sidecars".into()))?;
            let defaults = BackendConfig::mock(cfg.ingest_root(), &sidecars);
            let b = &mut cfg.backend;
            b.endpoint_url = None;
            if b.model_name == BackendConfig::default().model_name {
                b.model_name = defaults.model_name.clone();
            }
            b.requests_per_minute = f.rpm.unwrap_or(defaults.requests_per_minute);
            b.max_inflight = f.max_inflight.unwrap_or(defaults.max_inflight);
            b.mock = defaults.mock;
        } else {
            let b = &mut cfg.backend;
            b.requests_per_minute = f.rpm.unwrap_or(b.requests_per_minute);
            b.max_inflight = f.max_inflight.unwrap_or(b.max_inflight);
            if b.endpoint_url.is_none() {
                b.endpoint_url = Some(DEFAULT_ENDPOINT.into());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ingest_workers < 1 || self.classify_workers < 1 {
            return Err(ConfigError::Invalid("worker counts must be >= 1".into()));
        }
        if self.frames_per_segment < 2 {
            return Err(ConfigError::Invalid("frames_per_segment must be >= 2".into()));
        }
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    fn ingest_root(&self) -> PathBuf {
        self.store.join("ingest")
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error("store is full ({used} of {quota} bytes used)")]
    StoreFull { used: u64, quota: u64 },
    #[error("clip id {0:?} is taken by a different file")]
    DuplicateClip(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("audit log: {0}")]
    Log(#[from] state::LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Metadata accompanying an upload.
#[derive(Debug, Clone, Default)]
pub struct SubmitMeta {
    pub clip_id: Option<String>,
    pub room: Option<Room>,
    pub participant_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitReceipt {
    pub clip_id: String,
    pub status: ClipStatus,
    /// False when the same file had already been submitted under this id.
    pub created: bool,
}

pub fn parse_room(s: &str) -> Option<Room> {
    let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    Room::ALL
        .into_iter()
        .find(|r| format!("{r:?}").to_ascii_lowercase() == norm)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

struct Shared {
    cfg: ServiceConfig,
    store: IngestStore,
    uploads: PathBuf,
    decoder: MediaDecoder,
    pipeline: Pipeline,
    log: Mutex<AuditLog>,
    state: RwLock<State>,
    jobs: mpsc::UnboundedSender<String>,
    busy: AtomicUsize,
}

/// Handle to a running service; cheap to clone.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("store", &self.shared.cfg.store).finish_non_exhaustive()
    }
}

impl Service {
    /// Open the store, replay the audit log and start background processing.
    /// Clips whose processing was interrupted are picked up again. Must be
    /// called inside a tokio runtime.
    pub fn start(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        std::fs::create_dir_all(&cfg.store)?;
        let store = IngestStore::open(cfg.ingest_root())?;
        let uploads = cfg.store.join("uploads");
        std::fs::create_dir_all(&uploads)?;
        let (log, state) = AuditLog::open(&cfg.store.join("audit.jsonl"))?;
        let unfinished: Vec<String> = state
            .clips
            .values()
            .filter(|c| !c.status.is_terminal())
            .map(|c| c.clip.clip_id.clone())
            .collect();
        let (tx, rx) = mpsc::unbounded_channel();
        let service = Service {
            shared: Arc::new(Shared {
                pipeline: Pipeline::new(store.clone(), cfg.store.join("runs")),
                store,
                uploads,
                decoder: MediaDecoder::new(),
                log: Mutex::new(log),
                state: RwLock::new(state),
                jobs: tx,
                busy: AtomicUsize::new(0),
                cfg,
            }),
        };
        for clip_id in unfinished {
            tracing::info!(clip = %clip_id, "resuming unfinished clip");
            service.enqueue(clip_id);
        }
        tokio::spawn(service.clone().process_jobs(rx));
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.cfg
    }

    pub fn ingest_store(&self) -> &IngestStore {
        &self.shared.store
    }

    /// Read access to the current state.
    pub fn read<R>(&self, f: impl FnOnce(&State) -> R) -> R {
        f(&self.shared.state.read().unwrap())
    }

    fn commit(&self, actor: &str, event: Event) -> Result<AuditEvent, ServiceError> {
        let mut log = self.shared.log.lock().unwrap();
        let mut state = self.shared.state.write().unwrap();
        Ok(log.commit(&mut state, actor, event, unix_millis())?)
    }

    pub fn audit_since(&self, since: u64, limit: usize) -> Result<Vec<AuditEvent>, ServiceError> {
        let log = self.shared.log.lock().unwrap();
        Ok(log.read_since(since, limit)?)
    }

    /// Clips submitted or being processed.
    pub fn busy(&self) -> usize {
        self.shared.busy.load(Ordering::SeqCst)
    }

    /// Wait until no clip is being processed.
    pub async fn wait_idle(&self) {
        while self.busy() > 0 {
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
    }

    fn enqueue(&self, clip_id: String) {
        self.shared.busy.fetch_add(1, Ordering::SeqCst);
        if self.shared.jobs.send(clip_id).is_err() {
            self.shared.busy.fetch_sub(1, Ordering::SeqCst);
        }
    }

    /// Store an upload, probe it and queue it for processing.
    pub async fn submit(&self, bytes: Vec<u8>, meta: SubmitMeta, actor: &str) -> Result<SubmitReceipt, ServiceError> {
        let sha = sha256_hex(&bytes);
        let clip_id = match meta.clip_id {
            Some(id) if !valid_id(&id) => return Err(ServiceError::BadRequest(format!("invalid clip id {id:?}"))),
            Some(id) => id,
            None => format!("clip-{}", &sha[..16]),
        };
        if let Some((status, same)) = self.read(|s| s.clips.get(&clip_id).map(|c| (c.status, c.file_sha256 == sha))) {
            return if same {
                Ok(SubmitReceipt {
                    clip_id,
                    status,
                    created: false,
                })
            } else {
                Err(ServiceError::DuplicateClip(clip_id))
            };
        }
        let used = self.read(|s| s.upload_bytes);
        let quota = self.shared.cfg.store_quota_bytes;
        if used + bytes.len() as u64 > quota {
            return Err(ServiceError::StoreFull { used, quota });
        }

        let ext = if is_vrclip_bytes(&bytes) { "vrclip" } else { "bin" };
        let path = self.shared.uploads.join(format!("{sha}.{ext}"));
        let size = bytes.len() as u64;
        let shared = self.shared.clone();
        let probe_path = path.clone();
        let probe = tokio::task::spawn_blocking(move || {
            if !probe_path.exists() {
                let mut tmp = tempfile::NamedTempFile::new_in(&shared.uploads)?;
                std::io::Write::write_all(&mut tmp, &bytes)?;
                tmp.as_file().sync_all()?;
                tmp.persist(&probe_path).map_err(|e| e.error)?;
            }
            Ok::<_, std::io::Error>(shared.decoder.probe(&probe_path))
        })
        .await
        .expect("probe task panicked")?;
        let probe = match probe {
            Ok(p) => p,
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                return Err(ServiceError::UnsupportedMedia(e.to_string()));
            }
        };
        let clip = ClipRecord {
            clip_id: clip_id.clone(),
            path,
            duration: probe.duration,
            fps: probe.fps,
            participant_count: meta.participant_count.unwrap_or(2),
            room: meta.room.unwrap_or(Room::Communication),
            truth: None,
        };
        clip.check().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        self.commit(
            actor,
            Event::ClipSubmitted {
                clip,
                file_sha256: sha,
                bytes: size,
            },
        )?;
        self.enqueue(clip_id.clone());
        Ok(SubmitReceipt {
            clip_id,
            status: ClipStatus::Queued,
            created: true,
        })
    }

    async fn process_jobs(self, mut rx: mpsc::UnboundedReceiver<String>) {
        let slots = Arc::new(Semaphore::new(self.shared.cfg.ingest_workers));
        while let Some(clip_id) = rx.recv().await {
            let permit = slots.clone().acquire_owned().await.expect("semaphore is never closed");
            let service = self.clone();
            tokio::spawn(async move {
                if let Err(e) = service.process(&clip_id).await {
                    tracing::error!(clip = %clip_id, error = %e, "clip processing failed");
                    let _ = service.commit(
                        "system",
                        Event::ClipFailed {
                            clip_id: clip_id.clone(),
                            reason: e.to_string(),
                        },
                    );
                }
                service.shared.busy.fetch_sub(1, Ordering::SeqCst);
                drop(permit);
            });
        }
    }

    /// Ingest and classify one clip, continuing from wherever it stopped.
    async fn process(&self, clip_id: &str) -> Result<(), ServiceError> {
        let Some((clip, status)) = self.read(|s| s.clips.get(clip_id).map(|c| (c.clip.clone(), c.status))) else {
            return Ok(());
        };
        if status == ClipStatus::Queued {
            let shared = self.shared.clone();
            let c = clip.clone();
            let ingested = tokio::task::spawn_blocking(move || {
                shared.store.ingest_clip(&c, shared.cfg.frames_per_segment, &shared.decoder)
            })
            .await
            .expect("ingest task panicked");
            let event = match ingested {
                Ok((ClipOutcome::Ingested { .. }, segments)) => Event::ClipIngested {
                    clip_id: clip_id.into(),
                    segments,
                },
                Ok((ClipOutcome::DiscardedShort, _)) => Event::ClipDiscardedShort { clip_id: clip_id.into() },
                Ok((ClipOutcome::Excluded, _)) => Event::ClipExcluded { clip_id: clip_id.into() },
                Ok((ClipOutcome::Failed { reason }, _)) => Event::ClipFailed {
                    clip_id: clip_id.into(),
                    reason,
                },
                Err(e) => Event::ClipFailed {
                    clip_id: clip_id.into(),
                    reason: e.to_string(),
                },
            };
            let ingested = matches!(event, Event::ClipIngested { .. });
            self.commit("system", event)?;
            if !ingested {
                return Ok(());
            }
        }
        self.classify(clip_id).await
    }

    async fn classify(&self, clip_id: &str) -> Result<(), ServiceError> {
        let segments = self.read(|s| {
            s.clips[clip_id]
                .segments
                .iter()
                .map(|id| s.segments[id].ingested.clone())
                .collect::<Vec<_>>()
        });
        let run_id = format!("svc-{clip_id}");
        let pipeline = &self.shared.pipeline;
        let result = if pipeline.run_dir(&run_id).exists() {
            pipeline.resume(&run_id).await
        } else {
            let mut cfg = RunConfig::new(run_id, self.shared.cfg.backend.clone());
            cfg.stage_mode = StageMode::Cascade;
            cfg.variant = self.shared.cfg.variant;
            cfg.n_frames = self.shared.cfg.frames_per_segment;
            cfg.workers = self.shared.cfg.classify_workers;
            cfg.base_url = self.shared.cfg.public_base_url.clone();
            pipeline.run(cfg, segments).await
        };
        let result = match result {
            Ok(r) => r,
            Err(e @ PipelineError::Aborted { .. }) => {
                self.commit(
                    "system",
                    Event::ClipFailed {
                        clip_id: clip_id.into(),
                        reason: e.to_string(),
                    },
                )?;
                return Ok(());
            }
            Err(e) => return Err(ServiceError::BadRequest(e.to_string())),
        };
        for outcome in result.outcomes {
            let already = self.read(|s| {
                s.segments
                    .get(&outcome.segment_id)
                    .is_some_and(|e| !e.verdicts.is_empty())
            });
            if !already {
                self.commit(
                    "system",
                    Event::SegmentClassified {
                        segment_id: outcome.segment_id,
                        verdicts: outcome.verdicts,
                    },
                )?;
            }
        }
        self.commit("system", Event::ClipClassified { clip_id: clip_id.into() })?;
        Ok(())
    }

    pub fn review(&self, item_id: &str, decision: Decision, note: Option<String>, actor: &str) -> Result<ReviewItem, ServiceError> {
        self.commit(
            actor,
            Event::ItemReviewed {
                item_id: item_id.to_string(),
                decision,
                note,
            },
        )?;
        Ok(self.read(|s| s.items[item_id].clone()))
    }

    /// Fine-tuning records for overridden items, labeled with the
    /// moderator's decision.
    pub fn override_records(&self) -> Result<Vec<SftRecord>, ServiceError> {
        let items: Vec<(ReviewItem, crate::media_ingest::IngestedSegment)> = self.read(|s| {
            s.queue(Some(ReviewStatus::Overridden))
                .into_iter()
                .map(|i| (i.clone(), s.segments[&i.segment_id].ingested.clone()))
                .collect()
        });
        let mut out = Vec::new();
        for (item, seg) in items {
            let label = item.moderator_label.expect("overridden items carry a label");
            let urls = host_frames(&seg.frameset, &self.shared.cfg.public_base_url, self.shared.store.frames())
                .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
            let reason = item
                .moderator_note
                .clone()
                .filter(|n| !n.trim().is_empty())
                .unwrap_or_else(|| default_reason(label));
            for stage in [Stage::Stage1, Stage::Stage2] {
                out.push(
                    sft_record(stage, self.shared.cfg.variant, &urls, StageLabel::from_truth(stage, label), &reason)
                        .map_err(|e| ServiceError::BadRequest(e.to_string()))?,
                );
            }
        }
        Ok(out)
    }
}

fn default_reason(label: crate::taxonomy::Stage2Label) -> String {
    let sub = Subcategory::ALL
        .into_iter()
        .find(|s| s.parent() == label)
        .expect("every label has a subcategory");
    gold_reason(sub)
}

/// Start the service and serve HTTP until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let bind = cfg.bind;
    let service = Service::start(cfg)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(service)).await?;
    Ok(())
}
