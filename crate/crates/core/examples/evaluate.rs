//! Score a mock run per stage and render the report tables next to
//! published reference rows.
//!
//! ```bash
//! cargo run --example evaluate
//! ```

use std::collections::HashMap;

use vrmod::evalkit::{render_table, score_verdicts, EvalReport};
use vrmod::media_ingest::{IngestStore, MediaDecoder};
use vrmod::pipeline::{Pipeline, RunConfig};
use vrmod::prompt_forge::PromptVariant;
use vrmod::synth_arena::{generate_corpus, CorpusSpec};
use vrmod::taxonomy::{Stage, StageLabel};
use vrmod::vlm_gateway::BackendConfig;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = dir.path().join("corpus");
    let spec = CorpusSpec {
        count_per_class: 3,
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

    let mut reports = vec![
        EvalReport::from_values(Stage::Stage1, PromptVariant::CoT, "GPT-4o fine-tuned (reference)", [0.8809, 0.8407, 0.8260, 0.8329]),
        EvalReport::from_values(Stage::Stage2, PromptVariant::FewShot, "GPT-4o fine-tuned (reference)", [0.6885, 0.6035, 0.5716, 0.5678]),
    ];
    for variant in [PromptVariant::Baseline, PromptVariant::Context] {
        let mut cfg = RunConfig::new(format!("eval-{variant}"), backend.clone());
        cfg.variant = variant;
        let result = pipeline.run(cfg, segments.clone()).await?;
        let verdicts: Vec<_> = result.verdicts().cloned().collect();
        for stage in Stage::ALL {
            let truth: HashMap<String, StageLabel> = segments
                .iter()
                .filter_map(|s| Some((s.segment.segment_id.clone(), StageLabel::from_truth(stage, s.segment.truth?.label))))
                .collect();
            reports.push(score_verdicts(stage, variant, &backend.describe(), &verdicts, &truth)?);
        }
    }
    print!("{}", render_table(&reports));

    let stage2 = reports.iter().rfind(|r| r.stage == Stage::Stage2).unwrap();
    println!("\nper class, stage 2:");
    for c in &stage2.per_class {
        println!("  {:<26} P {:.4}  R {:.4}  F1 {:.4}  n={}", c.label, c.precision, c.recall, c.f1, c.support);
    }
    Ok(())
}
