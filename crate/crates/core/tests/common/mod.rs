#![allow(dead_code)]

use std::path::Path;

use vrmod::media_ingest::ClipRecord;
use vrmod::synth_arena::{generate_corpus, CorpusSpec};

/// Synthetic corpus with `per_class` clips per behavior under `dir`.
pub fn corpus(dir: &Path, per_class: usize, seed: u64, max_duration: f64) -> Vec<ClipRecord> {
    let spec = CorpusSpec {
        count_per_class: per_class,
        seed,
        min_duration: 10.0,
        max_duration,
        ..CorpusSpec::default()
    };
    let mut clips = generate_corpus(&spec, dir).expect("corpus generation");
    for c in &mut clips {
        c.path = dir.join(&c.path);
    }
    clips
}

/// Segment count per clip as the ingest step computes it.
pub fn segment_count(clip: &ClipRecord) -> usize {
    vrmod::media_ingest::segment_spans(clip.duration).len()
}
