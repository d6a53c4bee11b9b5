//! Simulate scripted avatar behavior, label it with the rule oracle and
//! write a small synthetic corpus.
//!
//! ```bash
//! cargo run --example synth_corpus -- /tmp/vrmod-corpus
//! ```

use vrmod::synth_arena::oracle::{oracle_classify, OracleThresholds};
use vrmod::synth_arena::{generate_corpus, simulate, BehaviorScript, CorpusSpec};
use vrmod::taxonomy::Subcategory;

fn main() -> anyhow::Result<()> {
    let th = OracleThresholds::default();
    for sub in Subcategory::ALL {
        let traj = simulate(&BehaviorScript::new(sub, 20.0, 42))?;
        let first = oracle_classify(&traj, 0.0, 10.0, &th)?;
        let second = oracle_classify(&traj, 10.0, 10.0, &th)?;
        println!(
            "{:<20} {} ticks  window 0: {:<18} window 1: {}",
            sub.as_str(),
            traj.ticks(),
            first.subcategory.as_str(),
            second.subcategory.as_str()
        );
    }

    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vrmod-corpus"));
    let spec = CorpusSpec {
        count_per_class: 3,
        ..CorpusSpec::default()
    };
    let clips = generate_corpus(&spec, &out)?;
    println!("\nwrote {} clips and manifest.jsonl to {}", clips.len(), out.display());
    Ok(())
}
