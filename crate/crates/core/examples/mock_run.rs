//! Classify a synthetic corpus with the mock oracle backend, in cascade and
//! few-shot modes, then interrupt and resume a run.
//!
//! ```bash
//! cargo run --example mock_run
//! ```

use vrmod::media_ingest::{IngestStore, MediaDecoder};
use vrmod::pipeline::{Pipeline, RunConfig, StageMode};
use vrmod::prompt_forge::PromptVariant;
use vrmod::synth_arena::{generate_corpus, CorpusSpec};
use vrmod::vlm_gateway::BackendConfig;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = dir.path().join("corpus");
    let spec = CorpusSpec {
        count_per_class: 4,
        ..CorpusSpec::default()
    };
    let mut clips = generate_corpus(&spec, &corpus)?;
    for c in &mut clips {
        c.path = corpus.join(&c.path);
    }
    let store = IngestStore::open(dir.path().join("store"))?;
    store.ingest_manifest(&clips, 6, &MediaDecoder::new(), 2)?;
    let segments = store.load_segments()?;
    let backend = BackendConfig::mock(store.root(), corpus.join("sidecars"));
    let pipeline = Pipeline::new(store, dir.path().join("runs"));

    let mut cascade = RunConfig::new("cascade", backend.clone());
    cascade.stage_mode = StageMode::Cascade;
    cascade.variant = PromptVariant::CoT;
    let result = pipeline.run(cascade, segments.clone()).await?;
    println!(
        "cascade: {} segments, {} model calls",
        result.summary.segments, result.summary.model_calls
    );
    for o in result.outcomes.iter().take(6) {
        let labels: Vec<String> = o
            .verdicts
            .iter()
            .map(|v| format!("{}={} ({})", v.stage, v.label.map_or("-", |l| l.as_str()), v.reason))
            .collect();
        println!("  {:<22} {}", o.segment_id, labels.join("  "));
    }

    let mut fewshot = RunConfig::new("fewshot", backend);
    fewshot.variant = PromptVariant::FewShot;
    fewshot.stage_mode = StageMode::Stage2Only;
    let result = pipeline.run(fewshot, segments).await?;
    println!("few-shot stage 2: {} calls", result.summary.model_calls);

    // Drop the progress log's second half, as if the process had died, and resume.
    let dir_run = pipeline.run_dir("fewshot");
    let progress = std::fs::read_to_string(dir_run.progress())?;
    let lines: Vec<&str> = progress.lines().collect();
    std::fs::write(dir_run.progress(), lines[..lines.len() / 2].join("\n") + "\n")?;
    let resumed = pipeline.resume("fewshot").await?;
    let calls: u32 = resumed.outcomes.iter().map(|o| o.calls).sum();
    println!("resumed: {} outcomes, {} of them re-classified", resumed.outcomes.len(), lines.len() - lines.len() / 2);
    println!("verdicts at {}, {calls} calls recorded", dir_run.verdicts().display());
    Ok(())
}
