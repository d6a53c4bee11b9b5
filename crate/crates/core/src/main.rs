use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vrmod::evalkit::{render_table, score_verdicts, EvalReport};
use vrmod::finetune_export::{export_sft, sample_clips};
use vrmod::media_ingest::{load_manifest, validate_manifest, IngestStore, IngestedSegment, MediaDecoder};
use vrmod::mod_service::{serve, ServiceConfig};
use vrmod::pipeline::{Pipeline, RunConfig, RunDir, StageMode, DEFAULT_BASE_URL};
use vrmod::prompt_forge::PromptVariant;
use vrmod::synth_arena::{generate_corpus, CorpusSpec};
use vrmod::taxonomy::{Stage, StageLabel};
use vrmod::vlm_gateway::{BackendConfig, BackendKind};

#[derive(Parser)]
#[command(name = "vrmod", version, about = "Social-VR harassment moderation with vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment clips from a manifest and store their sampled frames.
    Ingest(IngestArgs),
    /// Classify ingested segments with a model backend.
    Classify(ClassifyArgs),
    /// Score finished runs against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a chat-format fine-tuning file from labeled segments.
    ExportFinetune(ExportArgs),
    /// Generate a synthetic labeled corpus.
    GenFixtures(GenArgs),
    /// Run the moderation HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "store")]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    frames_per_segment: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, default_value = "remote")]
    backend: BackendKind,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    rpm: Option<u32>,
    #[arg(long)]
    max_inflight: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Trajectory sidecars for the mock backend. Defaults to `sidecars/`
    /// next to the manifest.
    #[arg(long)]
    sidecars: Option<PathBuf>,
}

impl BackendArgs {
    fn config(&self, store: &Path, manifest: Option<&Path>) -> Result<BackendConfig> {
        let mut cfg = match self.backend {
            BackendKind::RemoteChat => BackendConfig::default(),
            BackendKind::MockOracle => {
                let sidecars = match (&self.sidecars, manifest) {
                    (Some(s), _) => s.clone(),
                    (None, Some(m)) => m.parent().unwrap_or(Path::new(".")).join("sidecars"),
                    (None, None) => bail!("the mock backend needs --sidecars or --manifest"),
                };
                BackendConfig::mock(store, sidecars)
            }
        };
        if let Some(m) = &self.model {
            cfg.model_name = m.clone();
        }
        if self.endpoint.is_some() {
            cfg.endpoint_url = self.endpoint.clone();
        }
        if let Some(k) = &self.api_key_env {
            cfg.api_key_ref = k.clone();
        }
        if let Some(r) = self.rpm {
            cfg.requests_per_minute = r;
        }
        if let Some(m) = self.max_inflight {
            cfg.max_inflight = m;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    run_id: String,
    /// Ingest this manifest first and classify its segments. Without it the
    /// store's current segment index is used.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "store")]
    store: PathBuf,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long, default_value = "independent")]
    stage_mode: StageMode,
    #[arg(long, default_value = "baseline")]
    variant: PromptVariant,
    #[arg(long, default_value_t = 6)]
    frames_per_segment: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Base URL under which the model fetches `/frames/<hash>.jpg`.
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    /// Continue an interrupted run; other run settings come from its run.json.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// One or more runs to score.
    #[arg(long = "run-id", required = true)]
    run_ids: Vec<String>,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    /// Manifest carrying ground truth, for runs whose segments have none.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report destination; `.json` gets the full reports, anything else the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageChoice {
    Stage1,
    Stage2,
    Both,
}

impl StageChoice {
    fn stages(self) -> &'static [Stage] {
        match self {
            StageChoice::Stage1 => &[Stage::Stage1],
            StageChoice::Stage2 => &[Stage::Stage2],
            StageChoice::Both => &[Stage::Stage1, Stage::Stage2],
        }
    }
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value = "store")]
    store: PathBuf,
    /// Number of clips to draw; 0 exports every segment.
    #[arg(long, default_value_t = 200)]
    k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    stage: StageChoice,
    #[arg(long, default_value = "baseline")]
    variant: PromptVariant,
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    #[arg(long, default_value = "sft.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "fixtures")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 22.0)]
    max_duration: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(manifest: &Path, store: &Path, n: usize, workers: usize) -> Result<vrmod::media_ingest::IngestReport> {
    let clips = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let decoder = MediaDecoder::new();
    decoder.check_inputs(clips.iter().map(|c| c.path.as_path()))?;
    let store = IngestStore::open(store)?;
    Ok(store.ingest_manifest(&clips, n, &decoder, workers)?)
}

async fn classify(args: ClassifyArgs) -> Result<()> {
    let store_root = &args.store;
    let mut segments = None;
    if let Some(m) = &args.manifest {
        if !args.resume {
            ingest(m, store_root, args.frames_per_segment, args.workers)?;
        }
        let ids: HashSet<String> = load_manifest(m)?.into_iter().map(|c| c.clip_id).collect();
        let all = IngestStore::open(store_root)?.load_segments()?;
        segments = Some(all.into_iter().filter(|s| ids.contains(&s.segment.clip_id)).collect::<Vec<_>>());
    }
    let store = IngestStore::open(store_root)?;
    let pipeline = Pipeline::new(store.clone(), &args.runs);
    let result = if args.resume {
        pipeline.resume(&args.run_id).await?
    } else {
        let backend = args.backend.config(store_root, args.manifest.as_deref())?;
        let mut cfg = RunConfig::new(&args.run_id, backend);
        cfg.stage_mode = args.stage_mode;
        cfg.variant = args.variant;
        cfg.n_frames = args.frames_per_segment;
        cfg.workers = args.workers;
        cfg.base_url = args.base_url.clone();
        let segments = match segments {
            Some(s) => s,
            None => store.load_segments()?,
        };
        if segments.is_empty() {
            bail!("no ingested segments to classify");
        }
        pipeline.run(cfg, segments).await?
    };
    print_json(&result.summary)
}

fn truth_table(segments: &[IngestedSegment], manifest: Option<&Path>) -> Result<HashMap<String, vrmod::media_ingest::Truth>> {
    let by_clip = match manifest {
        Some(m) => load_manifest(m)?
            .into_iter()
            .filter_map(|c| c.truth.map(|t| (c.clip_id, t)))
            .collect(),
        None => HashMap::new(),
    };
    let mut out = HashMap::new();
    for s in segments {
        let truth = s.segment.truth.or_else(|| by_clip.get(&s.segment.clip_id).copied());
        match truth {
            Some(t) => {
                out.insert(s.segment.segment_id.clone(), t);
            }
            None => bail!("segment {} has no ground truth", s.segment.segment_id),
        }
    }
    Ok(out)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for run_id in &args.run_ids {
        let dir = RunDir::new(&args.runs, run_id);
        if !dir.exists() {
            bail!("no run {run_id:?} under {}", args.runs.display());
        }
        let cfg = dir.load_config()?;
        let truth = truth_table(&dir.load_segments()?, args.truth.as_deref())?;
        let verdicts = dir.load_verdicts()?;
        for &stage in cfg.stage_mode.stages() {
            let per_stage: HashMap<String, StageLabel> = truth
                .iter()
                .map(|(id, t)| (id.clone(), StageLabel::from_truth(stage, t.label)))
                .collect();
            reports.push(score_verdicts(stage, cfg.variant, &cfg.backend.describe(), &verdicts, &per_stage)?);
        }
    }
    let table = render_table(&reports);
    print!("{table}");
    if let Some(out) = &args.out {
        let body = if out.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(&reports)?
        } else {
            table
        };
        std::fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let store = IngestStore::open(&args.store)?;
    let segments = store.load_segments()?;
    let chosen = if args.k == 0 {
        segments
    } else {
        sample_clips(&segments, args.k, args.seed)?
    };
    let summary = export_sft(
        &chosen,
        args.stage.stages(),
        args.variant,
        &args.base_url,
        store.frames(),
        &args.out,
    )?;
    print_json(&summary)
}

fn gen_fixtures(args: GenArgs) -> Result<()> {
    let spec = CorpusSpec {
        count_per_class: args.per_class,
        seed: args.seed,
        min_duration: args.min_duration,
        max_duration: args.max_duration,
        ..CorpusSpec::default()
    };
    let clips = generate_corpus(&spec, &args.out)?;
    print_json(&validate_manifest(&clips)?)
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Ingest(a) => print_json(&ingest(&a.manifest, &a.out, a.frames_per_segment, a.workers)?),
        Command::Classify(a) => classify(a).await,
        Command::Evaluate(a) => evaluate(a),
        Command::ExportFinetune(a) => export(a),
        Command::GenFixtures(a) => gen_fixtures(a),
        Command::Serve(a) => serve(ServiceConfig::load(&a.config)?).await,
    }
}
