//! Clip ingest: fixed 10-second segmentation, uniform frame sampling and
//! content-addressed frame storage.

pub mod decode;
pub mod store;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Stage1Label, Stage2Label, Subcategory};
pub use decode::{is_vrclip_bytes, ClipDecoder, ClipProbe, MediaDecoder, VrClipDecoder, VrClipWriter};
pub use store::FrameStore;

pub const SEGMENT_SECONDS: f64 = 10.0;
pub const DEFAULT_FRAMES_PER_SEGMENT: usize = 6;
/// Clips with more participants than this are excluded.
pub const MAX_PARTICIPANTS: u32 = 2;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable media {path}: {reason}")]
    UnreadableMedia { path: PathBuf, reason: String },
    #[error("decode failure in {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("segment has {available} frames, {requested} requested")]
    TooFewFrames { available: usize, requested: usize },
    #[error("frame count must be at least 2, got {0}")]
    InvalidFrameCount(usize),
    #[error("duplicate clip id {0:?}")]
    DuplicateClipId(String),
    #[error("invalid clip record {clip_id:?}: {reason}")]
    InvalidClip { clip_id: String, reason: String },
    #[error("video decoder unavailable: {0}")]
    DecoderUnavailable(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub(crate) fn unreadable(path: &Path, reason: impl ToString) -> Self {
        IngestError::UnreadableMedia {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Room {
    Communication,
    WhackAPig,
    SlingShot,
    Climbing,
}

impl Room {
    pub const ALL: [Room; 4] = [Room::Communication, Room::WhackAPig, Room::SlingShot, Room::Climbing];
}

/// Ground truth attached to a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub label: Stage2Label,
    pub subcategory: Subcategory,
}

impl Truth {
    pub fn from_subcategory(subcategory: Subcategory) -> Self {
        Self {
            label: subcategory.parent(),
            subcategory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub path: PathBuf,
    pub duration: f64,
    pub fps: f64,
    pub participant_count: u32,
    pub room: Room,
    #[serde(default)]
    pub truth: Option<Truth>,
}

impl ClipRecord {
    pub fn check(&self) -> Result<(), IngestError> {
        let bad = |reason: &str| {
            Err(IngestError::InvalidClip {
                clip_id: self.clip_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.clip_id.is_empty() {
            return bad("empty clip_id");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be > 0");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be > 0");
        }
        if self.participant_count < 1 {
            return bad("participant_count must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub clip_id: String,
    pub index: usize,
    pub start: f64,
    pub length: f64,
    #[serde(default)]
    pub truth: Option<Truth>,
}

impl Segment {
    pub fn id_for(clip_id: &str, index: usize) -> String {
        format!("{clip_id}-s{index:03}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub timestamp: f64,
    pub content_hash: String,
    /// Store-relative path of the JPEG bytes.
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    pub segment_id: String,
    pub frames: Vec<FrameRef>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn hashes(&self) -> impl Iterator<Item = &str> {
        self.frames.iter().map(|f| f.content_hash.as_str())
    }

    /// Digest over the ordered frame hashes; identifies the set's content.
    pub fn digest(&self) -> String {
        frameset_digest(self.hashes())
    }
}

pub fn frameset_digest<'a>(hashes: impl IntoIterator<Item = &'a str>) -> String {
    let joined: Vec<&str> = hashes.into_iter().collect();
    store::sha256_hex(joined.join("\n").as_bytes())
}

/// Where a frame set came from, recorded under `framesets/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSetOrigin {
    pub segment_id: String,
    pub clip_id: String,
    pub clip_sha256: String,
    pub start: f64,
    pub length: f64,
}

/// Non-overlapping 10 s windows from t=0; the trailing remainder is dropped.
pub fn segment_spans(duration: f64) -> Vec<(usize, f64)> {
    if !(duration >= SEGMENT_SECONDS) {
        return Vec::new();
    }
    let count = (duration / SEGMENT_SECONDS).floor() as usize;
    (0..count).map(|i| (i, i as f64 * SEGMENT_SECONDS)).collect()
}

/// Split a clip into segments. Short clips yield an empty list.
pub fn segment_clip(clip: &ClipRecord, decoder: &dyn ClipDecoder) -> Result<Vec<Segment>, IngestError> {
    clip.check()?;
    decoder.probe(&clip.path)?;
    Ok(segments_for(clip))
}

/// Segmentation arithmetic only, without touching the media file.
pub fn segments_for(clip: &ClipRecord) -> Vec<Segment> {
    segment_spans(clip.duration)
        .into_iter()
        .map(|(index, start)| Segment {
            segment_id: Segment::id_for(&clip.clip_id, index),
            clip_id: clip.clip_id.clone(),
            index,
            start,
            length: SEGMENT_SECONDS,
            truth: clip.truth,
        })
        .collect()
}

/// Endpoint-inclusive uniform indices `round(i·(F−1)/(n−1))`, ties rounding up.
pub fn sample_indices(frame_count: usize, n: usize) -> Result<Vec<usize>, IngestError> {
    if n < 2 {
        return Err(IngestError::InvalidFrameCount(n));
    }
    if frame_count < n {
        return Err(IngestError::TooFewFrames {
            available: frame_count,
            requested: n,
        });
    }
    let span = (frame_count - 1) as u64;
    let steps = (n - 1) as u64;
    Ok((0..n as u64)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect())
}

/// Absolute frame range `[first, end)` covered by a segment.
fn segment_frame_range(segment: &Segment, probe: &ClipProbe) -> (usize, usize) {
    const EPS: f64 = 1e-9;
    let first = (segment.start * probe.fps - EPS).ceil().max(0.0) as usize;
    let end = ((segment.start + segment.length) * probe.fps - EPS).ceil() as usize;
    (first.min(probe.frame_count), end.min(probe.frame_count))
}

/// Uniformly sample `n` frames of a segment and store them as JPEGs.
pub fn sample_frames(
    clip: &ClipRecord,
    segment: &Segment,
    n: usize,
    decoder: &dyn ClipDecoder,
    store: &FrameStore,
) -> Result<FrameSet, IngestError> {
    if n < 2 {
        return Err(IngestError::InvalidFrameCount(n));
    }
    let probe = decoder.probe(&clip.path)?;
    let (first, end) = segment_frame_range(segment, &probe);
    let local = sample_indices(end.saturating_sub(first), n)?;
    let absolute: Vec<usize> = local.iter().map(|i| first + i).collect();
    let images = decoder.frames(&clip.path, &absolute)?;
    let mut frames = Vec::with_capacity(n);
    for (idx, img) in absolute.iter().zip(&images) {
        let hash = store.put(&store::encode_frame(img))?;
        frames.push(FrameRef {
            timestamp: *idx as f64 / probe.fps,
            location: FrameStore::relative_location(&hash),
            content_hash: hash,
        });
    }
    Ok(FrameSet {
        segment_id: segment.segment_id.clone(),
        frames,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelTally {
    pub count: usize,
    pub ratio: f64,
}

fn tally<K: Ord + Clone>(counts: &BTreeMap<K, usize>, total: usize) -> BTreeMap<K, LabelTally> {
    counts
        .iter()
        .map(|(k, &count)| {
            let ratio = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (k.clone(), LabelTally { count, ratio })
        })
        .collect()
}

/// Manifest summary. Tallies cover included clips, weighted by the number of
/// 10 s segments each clip yields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total_clips: usize,
    pub excluded: Vec<String>,
    pub included_clips: usize,
    pub total_segments: usize,
    pub per_room: BTreeMap<Room, LabelTally>,
    pub per_stage1: BTreeMap<Stage1Label, LabelTally>,
    pub per_stage2: BTreeMap<Stage2Label, LabelTally>,
}

pub fn validate_manifest(clips: &[ClipRecord]) -> Result<ValidationReport, IngestError> {
    let mut seen = HashSet::new();
    for c in clips {
        if !seen.insert(c.clip_id.as_str()) {
            return Err(IngestError::DuplicateClipId(c.clip_id.clone()));
        }
    }
    let mut report = ValidationReport {
        total_clips: clips.len(),
        ..Default::default()
    };
    let mut rooms = BTreeMap::new();
    let mut s1 = BTreeMap::new();
    let mut s2 = BTreeMap::new();
    let mut labelled = 0;
    for c in clips {
        if c.participant_count > MAX_PARTICIPANTS {
            report.excluded.push(c.clip_id.clone());
            continue;
        }
        report.included_clips += 1;
        let segs = segment_spans(c.duration).len();
        report.total_segments += segs;
        *rooms.entry(c.room).or_insert(0) += segs;
        if let Some(t) = c.truth {
            labelled += segs;
            *s1.entry(t.label.coarsen()).or_insert(0) += segs;
            *s2.entry(t.label).or_insert(0) += segs;
        }
    }
    report.per_room = tally(&rooms, report.total_segments);
    report.per_stage1 = tally(&s1, labelled);
    report.per_stage2 = tally(&s2, labelled);
    Ok(report)
}

/// Read a JSON-lines manifest. Relative clip paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>, IngestError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut clips = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut clip: ClipRecord = serde_json::from_str(&line).map_err(|e| IngestError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if clip.path.is_relative() {
            clip.path = base.join(&clip.path);
        }
        clips.push(clip);
    }
    Ok(clips)
}

pub fn write_manifest(path: &Path, clips: &[ClipRecord]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for c in clips {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedSegment {
    pub segment: Segment,
    pub frameset: FrameSet,
    pub clip_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClipOutcome {
    Ingested { segments: usize },
    DiscardedShort,
    Excluded,
    Failed { reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub clips: BTreeMap<String, ClipOutcome>,
    pub segments: usize,
}

/// Ingest store rooted at a directory: frames, frame-set origins and the
/// `segments.jsonl` index.
#[derive(Debug, Clone)]
pub struct IngestStore {
    root: PathBuf,
    frames: FrameStore,
}

impl IngestStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("frames"))?;
        fs::create_dir_all(root.join("framesets"))?;
        Ok(Self {
            frames: FrameStore::new(&root),
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frames(&self) -> &FrameStore {
        &self.frames
    }

    pub fn segments_path(&self) -> PathBuf {
        self.root.join("segments.jsonl")
    }

    fn origin_path(&self, digest: &str) -> PathBuf {
        self.root.join("framesets").join(format!("{digest}.json"))
    }

    pub fn record_origin(&self, frameset: &FrameSet, origin: &FrameSetOrigin) -> std::io::Result<()> {
        let path = self.origin_path(&frameset.digest());
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("framesets"))?;
        serde_json::to_writer(&mut tmp, origin)?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn origin(&self, digest: &str) -> Option<FrameSetOrigin> {
        if !store::is_valid_hash(digest) {
            return None;
        }
        let bytes = fs::read(self.origin_path(digest)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn load_segments(&self) -> std::io::Result<Vec<IngestedSegment>> {
        let path = self.segments_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(fs::File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }

    pub fn write_segments(&self, segs: &[IngestedSegment]) -> std::io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        {
            let mut w = std::io::BufWriter::new(tmp.as_file_mut());
            for s in segs {
                serde_json::to_writer(&mut w, s)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        tmp.persist(self.segments_path()).map_err(|e| e.error)?;
        Ok(())
    }

    /// Segment, sample and store one clip.
    pub fn ingest_clip(
        &self,
        clip: &ClipRecord,
        n: usize,
        decoder: &dyn ClipDecoder,
    ) -> Result<(ClipOutcome, Vec<IngestedSegment>), IngestError> {
        if clip.participant_count > MAX_PARTICIPANTS {
            return Ok((ClipOutcome::Excluded, Vec::new()));
        }
        let segments = segment_clip(clip, decoder)?;
        if segments.is_empty() {
            return Ok((ClipOutcome::DiscardedShort, Vec::new()));
        }
        let clip_sha256 = store::sha256_hex(&fs::read(&clip.path)?);
        let mut out = Vec::with_capacity(segments.len());
        for segment in segments {
            let frameset = sample_frames(clip, &segment, n, decoder, &self.frames)?;
            self.record_origin(
                &frameset,
                &FrameSetOrigin {
                    segment_id: segment.segment_id.clone(),
                    clip_id: clip.clip_id.clone(),
                    clip_sha256: clip_sha256.clone(),
                    start: segment.start,
                    length: segment.length,
                },
            )?;
            out.push(IngestedSegment {
                segment,
                frameset,
                clip_sha256: clip_sha256.clone(),
            });
        }
        Ok((
            ClipOutcome::Ingested {
                segments: out.len(),
            },
            out,
        ))
    }

    /// Ingest a whole manifest with `workers` threads. Unreadable clips are
    /// logged and skipped; the resulting `segments.jsonl` is ordered by
    /// `(clip_id, index)`.
    pub fn ingest_manifest(
        &self,
        clips: &[ClipRecord],
        n: usize,
        decoder: &dyn ClipDecoder,
        workers: usize,
    ) -> Result<IngestReport, IngestError> {
        if n < 2 {
            return Err(IngestError::InvalidFrameCount(n));
        }
        validate_manifest(clips)?;
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(clip) = clips.get(i) else { break };
                    let res = self.ingest_clip(clip, n, decoder);
                    results.lock().unwrap().push((clip.clip_id.clone(), res));
                });
            }
        });

        let mut report = IngestReport::default();
        let mut all = Vec::new();
        for (clip_id, res) in results.into_inner().unwrap() {
            let outcome = match res {
                Ok((outcome, segs)) => {
                    all.extend(segs);
                    outcome
                }
                Err(e @ (IngestError::Io(_) | IngestError::DecoderUnavailable(_))) => return Err(e),
                Err(e) => {
                    tracing::warn!(clip = %clip_id, error = %e, "skipping clip");
                    ClipOutcome::Failed {
                        reason: e.to_string(),
                    }
                }
            };
            report.clips.insert(clip_id, outcome);
        }
        all.sort_by(|a, b| {
            (&a.segment.clip_id, a.segment.index).cmp(&(&b.segment.clip_id, b.segment.index))
        });
        report.segments = all.len();
        self.write_segments(&all)?;
        let mut f = fs::File::create(self.root.join("ingest_report.json"))?;
        serde_json::to_writer_pretty(&mut f, &report).map_err(std::io::Error::from)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, duration: f64) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            path: PathBuf::from("/nonexistent"),
            duration,
            fps: 30.0,
            participant_count: 2,
            room: Room::Communication,
            truth: None,
        }
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(segments_for(&clip("a", 42.0)).len(), 4);
        let starts: Vec<f64> = segments_for(&clip("a", 42.0)).iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0.0, 10.0, 20.0, 30.0]);
        assert!(segments_for(&clip("a", 9.9)).is_empty());
        assert_eq!(segments_for(&clip("a", 10.0)).len(), 1);
        assert_eq!(segments_for(&clip("a", 122.1)).len(), 12);
    }

    #[test]
    fn segment_clip_requires_readable_file() {
        let err = segment_clip(&clip("a", 42.0), &MediaDecoder::native_only()).unwrap_err();
        assert!(matches!(err, IngestError::UnreadableMedia { .. }));
        let mut bad = clip("b", 42.0);
        bad.fps = 0.0;
        assert!(matches!(
            segment_clip(&bad, &MediaDecoder::native_only()),
            Err(IngestError::InvalidClip { .. })
        ));
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_indices(300, 6).unwrap(), vec![0, 60, 120, 179, 239, 299]);
        assert_eq!(sample_indices(6, 6).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert!(matches!(
            sample_indices(2, 6),
            Err(IngestError::TooFewFrames { available: 2, requested: 6 })
        ));
        assert!(matches!(sample_indices(10, 1), Err(IngestError::InvalidFrameCount(1))));
        // tie at exactly .5 rounds up: (F-1)/(n-1) = 1.5
        assert_eq!(sample_indices(4, 3).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn validation_flags_crowded_clips_and_duplicates() {
        let mut crowded = clip("c", 20.0);
        crowded.participant_count = 3;
        let report = validate_manifest(&[clip("a", 20.0), crowded]).unwrap();
        assert_eq!(report.excluded, vec!["c".to_string()]);
        assert_eq!(report.included_clips, 1);
        assert_eq!(report.total_segments, 2);

        let err = validate_manifest(&[clip("a", 20.0), clip("a", 30.0)]).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateClipId(id) if id == "a"));

        let empty = validate_manifest(&[]).unwrap();
        assert_eq!(empty.total_clips, 0);
        assert_eq!(empty.total_segments, 0);
        assert!(empty.per_stage2.is_empty());
    }

    #[test]
    fn validation_reproduces_reference_ratios() {
        // one 10 s clip per segment with the reference label counts
        let counts = [
            (Subcategory::Punching, 1408),
            (Subcategory::Looming, 880),
            (Subcategory::Blocking, 304),
            (Subcategory::BenignOther, 816),
        ];
        let mut clips = Vec::new();
        for (sub, n) in counts {
            for i in 0..n {
                let mut c = clip(&format!("{sub:?}-{i}"), 10.0);
                c.truth = Some(Truth::from_subcategory(sub));
                clips.push(c);
            }
        }
        let r = validate_manifest(&clips).unwrap();
        let ratio = |l| (r.per_stage1[&l].ratio * 1e4).round() / 1e4;
        assert_eq!(ratio(Stage1Label::Anomaly), 0.7606);
        assert_eq!(ratio(Stage1Label::Benign), 0.2394);
        assert_eq!(r.per_stage1[&Stage1Label::Anomaly].count, 2592);
        let r2 = |l| (r.per_stage2[&l].ratio * 1e4).round() / 1e4;
        assert_eq!(r2(Stage2Label::AggressiveBehavior), 0.4131);
        assert_eq!(r2(Stage2Label::PersonalSpaceViolation), 0.2582);
        assert_eq!(r2(Stage2Label::DisruptiveBehavior), 0.0892);
    }

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = clip("a", 12.0);
        c.path = PathBuf::from("clips/a.vrclip");
        c.truth = Some(Truth::from_subcategory(Subcategory::Blocking));
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &[c.clone()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""truth":{"label":"Disruptive Behavior","subcategory":"Blocking"}"#));
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded[0].path, dir.path().join("clips/a.vrclip"));
    }

    #[test]
    fn frame_range_of_segments() {
        let probe = ClipProbe { duration: 42.0, fps: 30.0, frame_count: 1260 };
        let segs = segments_for(&clip("a", 42.0));
        assert_eq!(segment_frame_range(&segs[0], &probe), (0, 300));
        assert_eq!(segment_frame_range(&segs[3], &probe), (900, 1200));
    }
}
