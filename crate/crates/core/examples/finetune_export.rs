//! Stratified clip draw and chat-format fine-tuning records.
//!
//! ```bash
//! cargo run --example finetune_export
//! ```

use vrmod::finetune_export::{apportion, export_sft, sample_clips};
use vrmod::media_ingest::{IngestStore, MediaDecoder};
use vrmod::prompt_forge::PromptVariant;
use vrmod::synth_arena::{generate_corpus, CorpusSpec};
use vrmod::taxonomy::Stage;

fn main() -> anyhow::Result<()> {
    // segment counts per label: aggressive, personal space, disruptive, benign
    println!("quotas for 200 of 1408/880/304/816: {:?}", apportion(&[1408, 880, 304, 816], 200));

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

    let chosen = sample_clips(&store.load_segments()?, 10, 7)?;
    let out = dir.path().join("sft.jsonl");
    let summary = export_sft(
        &chosen,
        &[Stage::Stage1, Stage::Stage2],
        PromptVariant::Baseline,
        "https://frames.example",
        store.frames(),
        &out,
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);

    let first = std::fs::read_to_string(&out)?;
    let record: serde_json::Value = serde_json::from_str(first.lines().next().unwrap_or("{}"))?;
    println!("last message of the first record: {}", record["messages"].as_array().and_then(|m| m.last()).unwrap_or(&serde_json::Value::Null));
    Ok(())
}
