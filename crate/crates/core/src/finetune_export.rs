//! Supervised fine-tuning data: stratified draws and chat-format JSONL records.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media_ingest::{FrameStore, IngestedSegment, Truth};
use crate::prompt_forge::{answer_json, build_prompt, ChatMessage, PromptError, PromptVariant};
use crate::taxonomy::{Stage, Stage2Label, StageLabel, Subcategory};
use crate::vlm_gateway::{host_frames, HostError};

/// Training epochs recorded as metadata alongside an export.
pub const RECOMMENDED_EPOCHS: u32 = 3;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("asked for {k} items from a population of {population}")]
    InsufficientPopulation { k: usize, population: usize },
    #[error("class {class} needs {quota} members but has {available}")]
    InsufficientClassMembers { class: String, quota: usize, available: usize },
    #[error("segment {0} has no ground truth")]
    MissingTruth(String),
    #[error("segment {segment}: {source}")]
    MissingFrames { segment: String, source: HostError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Largest-remainder apportionment of `k` over class sizes, in exact
/// integer arithmetic. Ties on the remainder go to the earlier class.
pub fn apportion(sizes: &[usize], k: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&n| k * n / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(k * sizes[i] % total));
    let short = k - quotas.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quotas[i] += 1;
    }
    quotas
}

/// Draw `k` items preserving the class distribution.
///
/// Classes are visited in key order and members are chosen uniformly with
/// a ChaCha8 stream seeded by `seed`. The result keeps population order.
pub fn stratified_sample<T: Clone, K: Ord + Clone + std::fmt::Debug>(
    population: &[(T, K)],
    k: usize,
    seed: u64,
) -> Result<Vec<T>, ExportError> {
    if k > population.len() {
        return Err(ExportError::InsufficientPopulation {
            k,
            population: population.len(),
        });
    }
    let mut classes: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, (_, class)) in population.iter().enumerate() {
        classes.entry(class.clone()).or_default().push(i);
    }
    let sizes: Vec<usize> = classes.values().map(Vec::len).collect();
    let quotas = apportion(&sizes, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    for ((class, members), quota) in classes.iter().zip(quotas) {
        if quota > members.len() {
            return Err(ExportError::InsufficientClassMembers {
                class: format!("{class:?}"),
                quota,
                available: members.len(),
            });
        }
        chosen.extend(index::sample(&mut rng, members.len(), quota).iter().map(|j| members[j]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| population[i].0.clone()).collect())
}

/// Stratified draw of `k` clips by clip label; every segment of a chosen
/// clip is kept, in input order.
pub fn sample_clips(segments: &[IngestedSegment], k: usize, seed: u64) -> Result<Vec<IngestedSegment>, ExportError> {
    let mut clips: Vec<(&str, Stage2Label)> = Vec::new();
    let mut seen = HashSet::new();
    for seg in segments {
        let truth = truth_of(seg)?;
        if seen.insert(seg.segment.clip_id.as_str()) {
            clips.push((seg.segment.clip_id.as_str(), truth.label));
        }
    }
    let chosen: HashSet<&str> = stratified_sample(&clips, k, seed)?.into_iter().collect();
    Ok(segments
        .iter()
        .filter(|s| chosen.contains(s.segment.clip_id.as_str()))
        .cloned()
        .collect())
}

/// Gold rationale for a behavior, taken from its taxonomy definition.
pub fn gold_reason(sub: Subcategory) -> String {
    let def = sub.definition();
    let mut chars = def.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub messages: Vec<ChatMessage>,
}

/// One training record: the variant's prompt over the given frames,
/// answered with the gold label.
pub fn sft_record(
    stage: Stage,
    variant: PromptVariant,
    frame_urls: &[String],
    label: StageLabel,
    reason: &str,
) -> Result<SftRecord, ExportError> {
    let bundle = build_prompt(stage, variant, frame_urls.len(), None)?;
    let mut messages = bundle.to_messages(frame_urls);
    messages.push(ChatMessage::assistant(answer_json(label, reason)));
    Ok(SftRecord { messages })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub records: usize,
    /// Characters / 4 over the serialized records.
    pub approx_tokens: usize,
    /// Keyed by `stage:label`.
    pub per_label: BTreeMap<String, usize>,
    pub recommended_epochs: u32,
}

fn truth_of(seg: &IngestedSegment) -> Result<Truth, ExportError> {
    seg.segment
        .truth
        .ok_or_else(|| ExportError::MissingTruth(seg.segment.segment_id.clone()))
}

/// Write one record per (segment, stage) to `out`.
pub fn export_sft(
    segments: &[IngestedSegment],
    stages: &[Stage],
    variant: PromptVariant,
    base_url: &str,
    store: &FrameStore,
    out: &Path,
) -> Result<ExportSummary, ExportError> {
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    let mut summary = ExportSummary {
        recommended_epochs: RECOMMENDED_EPOCHS,
        ..Default::default()
    };
    for seg in segments {
        let truth = truth_of(seg)?;
        let urls = host_frames(&seg.frameset, base_url, store).map_err(|source| ExportError::MissingFrames {
            segment: seg.segment.segment_id.clone(),
            source,
        })?;
        for &stage in stages {
            let label = StageLabel::from_truth(stage, truth.label);
            let record = sft_record(stage, variant, &urls, label, &gold_reason(truth.subcategory))?;
            let line = serde_json::to_string(&record).map_err(std::io::Error::from)?;
            summary.approx_tokens += line.chars().count() / 4;
            summary.records += 1;
            *summary.per_label.entry(format!("{stage}:{}", label.as_str())).or_default() += 1;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_ingest::{FrameRef, FrameSet, Segment};
    use crate::prompt_forge::{expected_schema, MessageContent};
    use crate::taxonomy::Stage2Label;
    use crate::verdict_parser::{parse, ParseStatus};
    use proptest::prelude::*;

    #[test]
    fn table_two_quotas() {
        // Aggressive, PersonalSpace, Disruptive, Benign segment counts
        assert_eq!(apportion(&[1408, 880, 304, 816], 200), vec![82, 52, 18, 48]);
        assert_eq!(apportion(&[5, 5], 2), vec![1, 1]);
        assert_eq!(apportion(&[3, 1], 4), vec![3, 1]);
    }

    #[test]
    fn sampling_examples() {
        let pop: Vec<(usize, &str)> = (0..10).map(|i| (i, if i < 5 { "a" } else { "b" })).collect();
        let all = stratified_sample(&pop, 10, 1).unwrap();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let two = stratified_sample(&pop, 2, 1).unwrap();
        assert!(two[0] < 5 && two[1] >= 5);
        assert!(matches!(
            stratified_sample(&pop, 11, 1),
            Err(ExportError::InsufficientPopulation { .. })
        ));
    }

    #[test]
    fn table_two_draw_is_deterministic() {
        let counts = [
            (Stage2Label::AggressiveBehavior, 1408),
            (Stage2Label::PersonalSpaceViolation, 880),
            (Stage2Label::DisruptiveBehavior, 304),
            (Stage2Label::BenignBehavior, 816),
        ];
        let pop: Vec<(usize, Stage2Label)> = counts
            .iter()
            .flat_map(|&(l, n)| std::iter::repeat(l).take(n))
            .enumerate()
            .collect();
        let a = stratified_sample(&pop, 200, 7).unwrap();
        assert_eq!(a, stratified_sample(&pop, 200, 7).unwrap());
        assert_ne!(a, stratified_sample(&pop, 200, 8).unwrap());
        let per = |l| a.iter().filter(|&&i| pop[i].1 == l).count();
        assert_eq!(
            counts.map(|(l, _)| per(l)),
            [82, 52, 18, 48]
        );
    }

    proptest! {
        #[test]
        fn quotas_sum_and_stay_within_one(sizes in prop::collection::vec(1usize..200, 1..6), frac in 0.0f64..1.0) {
            let total: usize = sizes.iter().sum();
            let k = (total as f64 * frac) as usize;
            let q = apportion(&sizes, k);
            prop_assert_eq!(q.iter().sum::<usize>(), k);
            for (&n, &qi) in sizes.iter().zip(&q) {
                prop_assert!(qi <= n);
                let exact = k as f64 * n as f64 / total as f64;
                prop_assert!((qi as f64 - exact).abs() < 1.0);
            }
        }
    }

    fn segment(store: &FrameStore, id: &str, sub: Option<Subcategory>) -> IngestedSegment {
        let frames = (0..6)
            .map(|i| {
                let hash = store.put(format!("{id}/{i}").as_bytes()).unwrap();
                FrameRef {
                    timestamp: i as f64,
                    location: FrameStore::relative_location(&hash),
                    content_hash: hash,
                }
            })
            .collect();
        IngestedSegment {
            segment: Segment {
                segment_id: id.into(),
                clip_id: "c".into(),
                index: 0,
                start: 0.0,
                length: 10.0,
                truth: sub.map(Truth::from_subcategory),
            },
            frameset: FrameSet {
                segment_id: id.into(),
                frames,
            },
            clip_sha256: "0".repeat(64),
        }
    }

    #[test]
    fn clip_sampling_keeps_whole_clips() {
        let dir = tempfile::tempdir().unwrap();
        let store = FrameStore::new(dir.path());
        let mut segs = Vec::new();
        for (clip, sub, n) in [
            ("p1", Subcategory::Punching, 3),
            ("p2", Subcategory::Slapping, 1),
            ("b1", Subcategory::BenignOther, 2),
            ("b2", Subcategory::BenignOther, 4),
        ] {
            for i in 0..n {
                let mut s = segment(&store, &format!("{clip}-{i}"), Some(sub));
                s.segment.clip_id = clip.into();
                segs.push(s);
            }
        }
        let picked = sample_clips(&segs, 2, 7).unwrap();
        let clips: HashSet<&str> = picked.iter().map(|s| s.segment.clip_id.as_str()).collect();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips.iter().filter(|c| c.starts_with('p')).count(), 1);
        for c in &clips {
            let all = segs.iter().filter(|s| s.segment.clip_id == *c).count();
            assert_eq!(picked.iter().filter(|s| s.segment.clip_id == *c).count(), all);
        }
        assert_eq!(sample_clips(&segs, 2, 7).unwrap(), picked);
    }

    #[test]
    fn export_records_round_trip_clean() {
        let dir = tempfile::tempdir().unwrap();
        let store = FrameStore::new(dir.path());
        let segs = vec![
            segment(&store, "a", Some(Subcategory::Punching)),
            segment(&store, "b", Some(Subcategory::BenignOther)),
        ];
        let out = dir.path().join("sft.jsonl");
        let summary = export_sft(
            &segs,
            &[Stage::Stage1, Stage::Stage2],
            PromptVariant::CoT,
            "http://frames.local",
            &store,
            &out,
        )
        .unwrap();
        assert_eq!(summary.records, 4);
        assert_eq!(summary.per_label["stage1:Anomaly"], 1);
        assert_eq!(summary.per_label["stage2:Benign"], 1);
        assert_eq!(summary.recommended_epochs, 3);
        assert!(summary.approx_tokens > 0);

        let text = std::fs::read_to_string(&out).unwrap();
        for (line, stage) in text.lines().zip([Stage::Stage1, Stage::Stage2].iter().cycle()) {
            let rec: SftRecord = serde_json::from_str(line).unwrap();
            assert_eq!(rec.messages[0].role, "system");
            let last = rec.messages.last().unwrap();
            assert_eq!(last.role, "assistant");
            let MessageContent::Text(answer) = &last.content else { panic!() };
            let parsed = parse(answer, &expected_schema(*stage));
            assert_eq!(parsed.status, ParseStatus::Clean);
        }
        assert!(text.contains("attacking another avatar with a fist"));
    }

    #[test]
    fn export_errors_and_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let store = FrameStore::new(dir.path());
        let out = dir.path().join("e.jsonl");
        let s = export_sft(&[], &[Stage::Stage1], PromptVariant::Baseline, "http://h", &store, &out).unwrap();
        assert_eq!(s.records, 0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");

        let unlabeled = vec![segment(&store, "u", None)];
        assert!(matches!(
            export_sft(&unlabeled, &[Stage::Stage1], PromptVariant::Baseline, "http://h", &store, &out),
            Err(ExportError::MissingTruth(_))
        ));
        let mut missing = segment(&store, "m", Some(Subcategory::Looming));
        missing.frameset.frames[0].content_hash = "f".repeat(64);
        assert!(matches!(
            export_sft(&[missing], &[Stage::Stage1], PromptVariant::Baseline, "http://h", &store, &out),
            Err(ExportError::MissingFrames { .. })
        ));
    }
}
