//! Cut clips into 10 s segments and store six sampled frames per segment.
//!
//! ```bash
//! cargo run --example ingest_frames
//! ```

use vrmod::media_ingest::{sample_indices, segment_spans, IngestStore, MediaDecoder};
use vrmod::synth_arena::{generate_corpus, CorpusSpec};

fn main() -> anyhow::Result<()> {
    for d in [9.9, 10.0, 42.0, 122.1] {
        println!("{d:>6.1} s -> {} segments", segment_spans(d).len());
    }
    println!("300 frames, 6 samples -> {:?}\n", sample_indices(300, 6)?);

    let dir = tempfile::tempdir()?;
    let spec = CorpusSpec {
        count_per_class: 1,
        max_duration: 25.0,
        ..CorpusSpec::default()
    };
    let mut clips = generate_corpus(&spec, &dir.path().join("corpus"))?;
    for c in &mut clips {
        c.path = dir.path().join("corpus").join(&c.path);
    }

    let store = IngestStore::open(dir.path().join("store"))?;
    let report = store.ingest_manifest(&clips, 6, &MediaDecoder::new(), 2)?;
    println!("{} segments from {} clips", report.segments, report.clips.len());
    for seg in store.load_segments()?.iter().take(3) {
        println!("{} [{:.0}s..{:.0}s]", seg.segment.segment_id, seg.segment.start, seg.segment.start + seg.segment.length);
        for f in &seg.frameset.frames {
            println!("  t={:>5.2}s {}", f.timestamp, f.location);
        }
    }
    Ok(())
}
