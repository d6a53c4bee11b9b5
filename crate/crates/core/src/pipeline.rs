//! Two-stage classification runs over ingested segments.
//!
//! A run lives in `runs/<run-id>/`:
//!
//! - `run.json`: the [`RunConfig`]
//! - `segments.jsonl`: the segments the run covers
//! - `progress.jsonl`: one line per finished segment, in completion order
//! - `verdicts.jsonl`: every verdict, ordered by clip and segment index
//! - `summary.json`: parse counts, call counts and latency
//! - `wire.log`: raw request and response bodies
//!
//! `progress.jsonl` is the source of truth. A run that stops early keeps
//! it and [`Pipeline::resume`] continues with the unfinished segments.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;

use crate::finetune_export::gold_reason;
use crate::media_ingest::{IngestStore, IngestedSegment};
use crate::prompt_forge::{build_prompt, expected_schema, repair_reminder, Exemplar, PromptError, PromptVariant};
use crate::taxonomy::{Stage, Stage1Label, Stage2Label, StageLabel};
use crate::verdict_parser::{parse, ParseStatus, RawRef, Verdict};
use crate::vlm_gateway::{host_frames, Backend, BackendConfig, Gateway, GatewayError, HostError, InferenceRequest, WireLog};

pub const DEFAULT_BASE_URL: &str = "http://127.0.0.1:8080";
const FALLBACK_REASON: &str = "no valid answer after a repair retry; fallback label applied";
const CASCADE_REASON: &str = "Stage 1 found no anomaly";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageMode {
    Stage1Only,
    Stage2Only,
    Independent,
    Cascade,
}

impl std::str::FromStr for StageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "stage1-only" | "stage1" => Ok(StageMode::Stage1Only),
            "stage2-only" | "stage2" => Ok(StageMode::Stage2Only),
            "independent" => Ok(StageMode::Independent),
            "cascade" => Ok(StageMode::Cascade),
            other => Err(format!("unknown stage mode {other:?}")),
        }
    }
}

impl StageMode {
    pub fn stages(self) -> &'static [Stage] {
        match self {
            StageMode::Stage1Only => &[Stage::Stage1],
            StageMode::Stage2Only => &[Stage::Stage2],
            StageMode::Independent | StageMode::Cascade => &[Stage::Stage1, Stage::Stage2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub stage_mode: StageMode,
    pub variant: PromptVariant,
    pub backend: BackendConfig,
    pub n_frames: usize,
    pub fallback_stage1: Stage1Label,
    pub fallback_stage2: Stage2Label,
    pub workers: usize,
    /// Frames are handed to the model as `<base_url>/frames/<hash>.jpg`.
    pub base_url: String,
}

impl RunConfig {
    pub fn new(run_id: impl Into<String>, backend: BackendConfig) -> Self {
        Self {
            run_id: run_id.into(),
            stage_mode: StageMode::Independent,
            variant: PromptVariant::Baseline,
            backend,
            n_frames: crate::media_ingest::DEFAULT_FRAMES_PER_SEGMENT,
            fallback_stage1: Stage1Label::Benign,
            fallback_stage2: Stage2Label::BenignBehavior,
            workers: 4,
            base_url: DEFAULT_BASE_URL.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        let id_ok = !self.run_id.is_empty()
            && self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !self.run_id.starts_with('.');
        if !id_ok {
            return bad(format!("run id {:?} must be non-empty [A-Za-z0-9._-]", self.run_id));
        }
        if self.workers < 1 {
            return bad("workers must be >= 1".into());
        }
        if self.n_frames < 2 {
            return bad("n_frames must be >= 2".into());
        }
        self.backend.validate().map_err(PipelineError::Gateway)
    }

    fn fallback(&self, stage: Stage) -> StageLabel {
        match stage {
            Stage::Stage1 => StageLabel::Stage1(self.fallback_stage1),
            Stage::Stage2 => StageLabel::Stage2(self.fallback_stage2),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("run {0} already exists")]
    RunExists(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {run_id} stopped after {completed} segment(s): {source}")]
    Aborted {
        run_id: String,
        completed: usize,
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("segment {segment}: {source}")]
    Hosting { segment: String, source: HostError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("corrupt run file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything decided about one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub segment_id: String,
    pub clip_id: String,
    pub index: usize,
    pub verdicts: Vec<Verdict>,
    /// Gateway calls made, repair retries included.
    pub calls: u32,
    /// Seconds of model latency summed over those calls.
    pub latency: f64,
}

impl SegmentOutcome {
    pub fn verdict(&self, stage: Stage) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.stage == stage)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub clean: usize,
    pub salvaged: usize,
    pub failed: usize,
    /// Verdicts whose label came from fallback policy.
    pub fallback: usize,
    /// Cascade verdicts assigned without a model call.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub stage_mode: StageMode,
    pub variant: PromptVariant,
    pub backend: String,
    pub segments: usize,
    pub per_stage: BTreeMap<Stage, StatusCounts>,
    pub model_calls: u64,
    pub mean_segment_latency: f64,
    /// Wall-clock seconds of the last invocation (a resume counts only itself).
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    /// Ordered by clip id, then segment index.
    pub outcomes: Vec<SegmentOutcome>,
    pub summary: RunSummary,
}

impl RunResult {
    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.outcomes.iter().flat_map(|o| o.verdicts.iter())
    }
}

fn summarize(cfg: &RunConfig, outcomes: &[SegmentOutcome], wall_clock: f64) -> RunSummary {
    let mut per_stage: BTreeMap<Stage, StatusCounts> = BTreeMap::new();
    for v in outcomes.iter().flat_map(|o| &o.verdicts) {
        let c = per_stage.entry(v.stage).or_default();
        if v.raw.is_none() {
            c.skipped += 1;
            continue;
        }
        match v.parse_status {
            ParseStatus::Clean => c.clean += 1,
            ParseStatus::Salvaged => c.salvaged += 1,
            ParseStatus::Failed => c.failed += 1,
        }
        c.fallback += v.fallback as usize;
    }
    let latency: f64 = outcomes.iter().map(|o| o.latency).sum();
    RunSummary {
        run_id: cfg.run_id.clone(),
        stage_mode: cfg.stage_mode,
        variant: cfg.variant,
        backend: cfg.backend.describe(),
        segments: outcomes.len(),
        per_stage,
        model_calls: outcomes.iter().map(|o| o.calls as u64).sum(),
        mean_segment_latency: if outcomes.is_empty() {
            0.0
        } else {
            latency / outcomes.len() as f64
        },
        wall_clock,
    }
}

/// Files of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        Self {
            root: runs_root.join(run_id),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn segments(&self) -> PathBuf {
        self.root.join("segments.jsonl")
    }

    pub fn progress(&self) -> PathBuf {
        self.root.join("progress.jsonl")
    }

    pub fn verdicts(&self) -> PathBuf {
        self.root.join("verdicts.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn wire_log(&self) -> PathBuf {
        self.root.join("wire.log")
    }

    pub fn exists(&self) -> bool {
        self.config().is_file()
    }

    pub fn load_config(&self) -> Result<RunConfig, PipelineError> {
        let bytes = fs::read(self.config())?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt {
            path: self.config(),
            reason: e.to_string(),
        })
    }

    pub fn load_segments(&self) -> Result<Vec<IngestedSegment>, PipelineError> {
        read_jsonl(&self.segments(), false)
    }

    /// Finished segments. A torn final line, left by a crash mid-write, is
    /// cut off so later appends start on a fresh line.
    pub fn load_progress(&self) -> Result<Vec<SegmentOutcome>, PipelineError> {
        let path = self.progress();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path)?;
        let mut out = Vec::new();
        let mut valid_len = 0;
        for line in text.split_inclusive('\n') {
            let complete = line.ends_with('\n');
            match serde_json::from_str::<SegmentOutcome>(line.trim_end()) {
                Ok(o) if complete => {
                    out.push(o);
                    valid_len += line.len();
                }
                _ if valid_len + line.len() == text.len() => break,
                Err(e) => {
                    return Err(PipelineError::Corrupt {
                        path,
                        reason: e.to_string(),
                    })
                }
                Ok(_) => unreachable!("only the final line can lack a newline"),
            }
        }
        if valid_len < text.len() {
            tracing::warn!(path = %path.display(), "dropping torn progress line");
            OpenOptions::new().write(true).open(&path)?.set_len(valid_len as u64)?;
        }
        Ok(out)
    }

    pub fn load_verdicts(&self) -> Result<Vec<Verdict>, PipelineError> {
        read_jsonl(&self.verdicts(), false)
    }

    pub fn load_summary(&self) -> Result<RunSummary, PipelineError> {
        let bytes = fs::read(self.summary())?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt {
            path: self.summary(),
            reason: e.to_string(),
        })
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, allow_missing: bool) -> Result<Vec<T>, PipelineError> {
    let text = match fs::read_to_string(path) {
        Err(e) if allow_missing && e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        other => other?,
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| PipelineError::Corrupt {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let dir = path.parent().expect("run files live in a directory");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_jsonl_atomic<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> std::io::Result<()> {
    let dir = path.parent().expect("run files live in a directory");
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut w = BufWriter::new(tmp);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    let tmp = w.into_inner().map_err(|e| e.into_error())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Appends finished segments to `progress.jsonl`, one synced line each.
struct ProgressWriter {
    file: File,
}

impl ProgressWriter {
    fn open(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    fn append(&mut self, outcome: &SegmentOutcome) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(outcome)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

/// Labeled segments that few-shot prompts draw their examples from.
#[derive(Debug, Clone, Default)]
struct ExemplarPool {
    /// Ordered by clip id and index, so choices are deterministic.
    segments: Vec<IngestedSegment>,
}

impl ExemplarPool {
    fn new(segments: &[IngestedSegment]) -> Self {
        let mut segments: Vec<IngestedSegment> =
            segments.iter().filter(|s| s.segment.truth.is_some()).cloned().collect();
        segments.sort_by(|a, b| order_key(a).cmp(&order_key(b)));
        Self { segments }
    }

    /// Stage 1 takes two examples per class, Stage 2 one per class, never
    /// from the query's own clip.
    fn pick(&self, stage: Stage, query_clip: &str) -> Vec<&IngestedSegment> {
        let per_class = match stage {
            Stage::Stage1 => 2,
            Stage::Stage2 => 1,
        };
        let mut out = Vec::new();
        for label in stage.wire_labels() {
            out.extend(
                self.segments
                    .iter()
                    .filter(|s| s.segment.clip_id != query_clip)
                    .filter(|s| {
                        let truth = s.segment.truth.expect("pool holds labeled segments");
                        StageLabel::from_truth(stage, truth.label).as_str() == label
                    })
                    .take(per_class),
            );
        }
        out
    }
}

fn order_key(s: &IngestedSegment) -> (&str, usize) {
    (&s.segment.clip_id, s.segment.index)
}

struct Worker {
    cfg: RunConfig,
    gateway: Gateway,
    store: IngestStore,
    pool: ExemplarPool,
}

struct StageResult {
    verdict: Verdict,
    calls: u32,
    latency: f64,
}

impl Worker {
    fn urls(&self, seg: &IngestedSegment) -> Result<Vec<String>, PipelineError> {
        host_frames(&seg.frameset, &self.cfg.base_url, self.store.frames()).map_err(|source| PipelineError::Hosting {
            segment: seg.segment.segment_id.clone(),
            source,
        })
    }

    fn request_parts(
        &self,
        seg: &IngestedSegment,
        stage: Stage,
    ) -> Result<(crate::prompt_forge::PromptBundle, Vec<String>), PipelineError> {
        let mut urls = Vec::new();
        let exemplars = if self.cfg.variant == PromptVariant::FewShot {
            let mut ex = Vec::new();
            for s in self.pool.pick(stage, &seg.segment.clip_id) {
                let truth = s.segment.truth.expect("pool holds labeled segments");
                urls.extend(self.urls(s)?);
                ex.push(Exemplar {
                    frames: s.frameset.clone(),
                    label: StageLabel::from_truth(stage, truth.label),
                    reason: gold_reason(truth.subcategory),
                });
            }
            Some(ex)
        } else {
            None
        };
        let bundle = build_prompt(stage, self.cfg.variant, seg.frameset.len(), exemplars)?;
        urls.extend(self.urls(seg)?);
        Ok((bundle, urls))
    }

    async fn classify_stage(&self, seg: &IngestedSegment, stage: Stage) -> Result<StageResult, PipelineError> {
        let (bundle, urls) = self.request_parts(seg, stage)?;
        let schema = expected_schema(stage);
        let id = &seg.segment.segment_id;
        let mut latency = 0.0;
        for try_no in 1..=2u32 {
            let request_id = format!("{}:{id}:{stage}:{try_no}", self.cfg.run_id);
            let mut request = InferenceRequest::new(request_id.clone(), bundle.clone(), urls.clone())?;
            if try_no > 1 {
                request = request.with_reminder(repair_reminder());
            }
            let raw = self.gateway.infer(&request).await?;
            latency += raw.latency;
            let parsed = parse(&raw.body, &schema);
            let raw_ref = RawRef {
                request_id,
                attempt: raw.attempt,
                backend: raw.backend,
            };
            if parsed.status != ParseStatus::Failed {
                return Ok(StageResult {
                    verdict: Verdict::from_parsed(id, stage, parsed, Some(raw_ref)),
                    calls: try_no,
                    latency,
                });
            }
            if try_no == 2 {
                let mut verdict = Verdict::from_parsed(id, stage, parsed, Some(raw_ref));
                verdict.label = Some(self.cfg.fallback(stage));
                verdict.reason = FALLBACK_REASON.to_string();
                verdict.fallback = true;
                return Ok(StageResult {
                    verdict,
                    calls: 2,
                    latency,
                });
            }
        }
        unreachable!("the loop returns on its second pass")
    }

    async fn classify(&self, seg: IngestedSegment) -> Result<SegmentOutcome, PipelineError> {
        let mut results = Vec::new();
        match self.cfg.stage_mode {
            StageMode::Stage1Only => results.push(self.classify_stage(&seg, Stage::Stage1).await?),
            StageMode::Stage2Only => results.push(self.classify_stage(&seg, Stage::Stage2).await?),
            StageMode::Independent => {
                results.push(self.classify_stage(&seg, Stage::Stage1).await?);
                results.push(self.classify_stage(&seg, Stage::Stage2).await?);
            }
            StageMode::Cascade => {
                let first = self.classify_stage(&seg, Stage::Stage1).await?;
                let anomaly = first.verdict.label == Some(StageLabel::Stage1(Stage1Label::Anomaly));
                results.push(first);
                if anomaly {
                    results.push(self.classify_stage(&seg, Stage::Stage2).await?);
                } else {
                    results.push(StageResult {
                        verdict: Verdict {
                            segment_id: seg.segment.segment_id.clone(),
                            stage: Stage::Stage2,
                            label: Some(StageLabel::Stage2(Stage2Label::BenignBehavior)),
                            reason: CASCADE_REASON.to_string(),
                            parse_status: ParseStatus::Clean,
                            fallback: false,
                            raw: None,
                        },
                        calls: 0,
                        latency: 0.0,
                    });
                }
            }
        }
        Ok(SegmentOutcome {
            segment_id: seg.segment.segment_id.clone(),
            clip_id: seg.segment.clip_id.clone(),
            index: seg.segment.index,
            calls: results.iter().map(|r| r.calls).sum(),
            latency: results.iter().map(|r| r.latency).sum(),
            verdicts: results.into_iter().map(|r| r.verdict).collect(),
        })
    }
}

/// Runs classification against one ingest store.
#[derive(Clone)]
pub struct Pipeline {
    store: IngestStore,
    runs_root: PathBuf,
    backend: Option<Arc<dyn Backend>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("store", &self.store.root())
            .field("runs_root", &self.runs_root)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(store: IngestStore, runs_root: impl Into<PathBuf>) -> Self {
        Self {
            store,
            runs_root: runs_root.into(),
            backend: None,
        }
    }

    /// Use this backend instead of the one named in each run's config.
    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn run_dir(&self, run_id: &str) -> RunDir {
        RunDir::new(&self.runs_root, run_id)
    }

    pub fn store(&self) -> &IngestStore {
        &self.store
    }

    /// Start a new run over `segments`.
    pub async fn run(&self, cfg: RunConfig, segments: Vec<IngestedSegment>) -> Result<RunResult, PipelineError> {
        cfg.validate()?;
        let dir = self.run_dir(&cfg.run_id);
        if dir.exists() {
            return Err(PipelineError::RunExists(cfg.run_id));
        }
        fs::create_dir_all(dir.root())?;
        let mut segments = segments;
        segments.sort_by(|a, b| order_key(a).cmp(&order_key(b)));
        write_jsonl_atomic(&dir.segments(), &segments)?;
        // run.json last: its presence marks a run as resumable
        write_json_atomic(&dir.config(), &cfg)?;
        self.execute(cfg, segments, Vec::new()).await
    }

    /// Continue a run, classifying only segments without a recorded outcome.
    pub async fn resume(&self, run_id: &str) -> Result<RunResult, PipelineError> {
        let dir = self.run_dir(run_id);
        if !dir.exists() {
            return Err(PipelineError::UnknownRun(run_id.to_string()));
        }
        let cfg = dir.load_config()?;
        let segments = dir.load_segments()?;
        let done = dir.load_progress()?;
        self.execute(cfg, segments, done).await
    }

    fn gateway(&self, cfg: &RunConfig, dir: &RunDir) -> Result<Gateway, PipelineError> {
        let gateway = match &self.backend {
            Some(b) => Gateway::new(cfg.backend.clone(), b.clone())?,
            None => Gateway::from_config(cfg.backend.clone())?,
        };
        Ok(gateway.with_wire_log(WireLog::open(&dir.wire_log())?))
    }

    async fn execute(
        &self,
        cfg: RunConfig,
        segments: Vec<IngestedSegment>,
        mut outcomes: Vec<SegmentOutcome>,
    ) -> Result<RunResult, PipelineError> {
        let started = Instant::now();
        let dir = self.run_dir(&cfg.run_id);
        let done: HashSet<String> = outcomes.iter().map(|o| o.segment_id.clone()).collect();
        let mut pending = segments
            .iter()
            .filter(|s| !done.contains(&s.segment.segment_id))
            .cloned()
            .collect::<Vec<_>>()
            .into_iter();

        let worker = Arc::new(Worker {
            gateway: self.gateway(&cfg, &dir)?,
            store: self.store.clone(),
            pool: if cfg.variant == PromptVariant::FewShot {
                ExemplarPool::new(&segments)
            } else {
                ExemplarPool::default()
            },
            cfg: cfg.clone(),
        });
        let mut progress = ProgressWriter::open(&dir.progress())?;
        let mut tasks = JoinSet::new();
        let mut failure: Option<PipelineError> = None;
        loop {
            while failure.is_none() && tasks.len() < cfg.workers {
                let Some(seg) = pending.next() else { break };
                let w = worker.clone();
                tasks.spawn(async move { w.classify(seg).await });
            }
            let Some(joined) = tasks.join_next().await else { break };
            match joined.expect("segment task panicked") {
                Ok(outcome) => {
                    if let Err(e) = progress.append(&outcome) {
                        failure.get_or_insert(e.into());
                    } else {
                        outcomes.push(outcome);
                    }
                }
                Err(e) => {
                    tracing::error!(run = %cfg.run_id, error = %e, "stopping run");
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(source) = failure {
            return Err(PipelineError::Aborted {
                run_id: cfg.run_id.clone(),
                completed: outcomes.len(),
                source: Box::new(source),
            });
        }

        outcomes.sort_by(|a, b| (&a.clip_id, a.index).cmp(&(&b.clip_id, b.index)));
        write_jsonl_atomic(&dir.verdicts(), outcomes.iter().flat_map(|o| &o.verdicts))?;
        let summary = summarize(&cfg, &outcomes, started.elapsed().as_secs_f64());
        write_json_atomic(&dir.summary(), &summary)?;
        Ok(RunResult {
            config: cfg,
            outcomes,
            summary,
        })
    }
}
