//! Event-sourced service state.
//!
//! Every mutation is an [`AuditEvent`] appended to `audit.jsonl` and synced
//! before it is applied in memory. On start the log is replayed; a torn
//! final line from a crash mid-append is cut off.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::media_ingest::{ClipRecord, IngestedSegment};
use crate::taxonomy::{Stage, Stage1Label, Stage2Label, StageLabel};
use crate::verdict_parser::Verdict;

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub actor: String,
    pub action: String,
    pub payload: Value,
    /// Unix milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipStatus {
    Queued,
    Ingested,
    Classified,
    DiscardedShort,
    Excluded,
    Failed,
}

impl ClipStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, ClipStatus::Queued | ClipStatus::Ingested)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Confirmed,
    Overridden,
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(ReviewStatus::Pending),
            "confirmed" => Ok(ReviewStatus::Confirmed),
            "overridden" => Ok(ReviewStatus::Overridden),
            other => Err(format!("unknown review status {other:?}")),
        }
    }
}

/// A moderator's decision on a flagged segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Confirm,
    Override { label: Stage2Label },
}

/// State changes, in the form they take in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "kebab-case")]
pub enum Event {
    ClipSubmitted {
        clip: ClipRecord,
        file_sha256: String,
        bytes: u64,
    },
    ClipIngested {
        clip_id: String,
        segments: Vec<IngestedSegment>,
    },
    ClipDiscardedShort {
        clip_id: String,
    },
    ClipExcluded {
        clip_id: String,
    },
    SegmentClassified {
        segment_id: String,
        verdicts: Vec<Verdict>,
    },
    ClipClassified {
        clip_id: String,
    },
    ClipFailed {
        clip_id: String,
        reason: String,
    },
    ItemReviewed {
        item_id: String,
        #[serde(flatten)]
        decision: Decision,
        #[serde(default)]
        note: Option<String>,
    },
}

impl Event {
    fn into_parts(self) -> (String, Value) {
        let Value::Object(mut obj) = serde_json::to_value(self).expect("events serialize") else {
            unreachable!("adjacently tagged enums serialize to objects")
        };
        let action = obj.remove("action").and_then(|a| a.as_str().map(String::from)).unwrap_or_default();
        (action, obj.remove("payload").unwrap_or(Value::Null))
    }

    fn from_record(e: &AuditEvent) -> Result<Self, serde_json::Error> {
        serde_json::from_value(serde_json::json!({"action": e.action, "payload": e.payload}))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipEntry {
    pub clip: ClipRecord,
    pub status: ClipStatus,
    pub file_sha256: String,
    pub submitted_seq: u64,
    pub submitted_at: u64,
    pub segments: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEntry {
    pub ingested: IngestedSegment,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub segment_id: String,
    pub clip_id: String,
    pub verdicts: Vec<Verdict>,
    pub status: ReviewStatus,
    pub moderator_label: Option<Stage2Label>,
    pub moderator_note: Option<String>,
    pub reviewed_by: Option<String>,
    pub created_at: u64,
    pub reviewed_at: Option<u64>,
    /// Sequence number of the event that queued the item.
    pub queued_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} was already reviewed")]
    AlreadyReviewed(String),
    #[error("unknown clip {0}")]
    UnknownClip(String),
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("event does not apply: {0}")]
    Invalid(String),
}

/// Materialized view of the log.
#[derive(Debug, Clone, Default)]
pub struct State {
    pub clips: BTreeMap<String, ClipEntry>,
    pub segments: HashMap<String, SegmentEntry>,
    pub items: HashMap<String, ReviewItem>,
    /// Item ids in queueing order.
    pub queue: Vec<String>,
    pub last_seq: u64,
    pub upload_bytes: u64,
}

pub fn stage1_anomaly(verdicts: &[Verdict]) -> bool {
    verdicts
        .iter()
        .any(|v| v.stage == Stage::Stage1 && v.label == Some(StageLabel::Stage1(Stage1Label::Anomaly)))
}

impl State {
    /// Reject events that would break an invariant, without changing state.
    pub fn check(&self, event: &Event) -> Result<(), StateError> {
        match event {
            Event::ClipSubmitted { clip, .. } => {
                if self.clips.contains_key(&clip.clip_id) {
                    return Err(StateError::Invalid(format!("clip {} exists", clip.clip_id)));
                }
            }
            Event::ClipIngested { clip_id, .. }
            | Event::ClipDiscardedShort { clip_id }
            | Event::ClipExcluded { clip_id }
            | Event::ClipClassified { clip_id }
            | Event::ClipFailed { clip_id, .. } => {
                if !self.clips.contains_key(clip_id) {
                    return Err(StateError::UnknownClip(clip_id.clone()));
                }
            }
            Event::SegmentClassified { segment_id, .. } => {
                if !self.segments.contains_key(segment_id) {
                    return Err(StateError::UnknownSegment(segment_id.clone()));
                }
            }
            Event::ItemReviewed { item_id, .. } => {
                let item = self
                    .items
                    .get(item_id)
                    .ok_or_else(|| StateError::UnknownItem(item_id.clone()))?;
                if item.status != ReviewStatus::Pending {
                    return Err(StateError::AlreadyReviewed(item_id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, record: &AuditEvent, event: Event) -> Result<(), StateError> {
        self.check(&event)?;
        let at = record.timestamp;
        match event {
            Event::ClipSubmitted {
                clip,
                file_sha256,
                bytes,
            } => {
                self.upload_bytes += bytes;
                self.clips.insert(
                    clip.clip_id.clone(),
                    ClipEntry {
                        clip,
                        status: ClipStatus::Queued,
                        file_sha256,
                        submitted_seq: record.seq,
                        submitted_at: at,
                        segments: Vec::new(),
                        error: None,
                    },
                );
            }
            Event::ClipIngested { clip_id, segments } => {
                let entry = self.clips.get_mut(&clip_id).expect("checked");
                entry.status = ClipStatus::Ingested;
                entry.segments = segments.iter().map(|s| s.segment.segment_id.clone()).collect();
                for s in segments {
                    self.segments.insert(
                        s.segment.segment_id.clone(),
                        SegmentEntry {
                            ingested: s,
                            verdicts: Vec::new(),
                        },
                    );
                }
            }
            Event::ClipDiscardedShort { clip_id } => self.set_status(&clip_id, ClipStatus::DiscardedShort),
            Event::ClipExcluded { clip_id } => self.set_status(&clip_id, ClipStatus::Excluded),
            Event::ClipClassified { clip_id } => self.set_status(&clip_id, ClipStatus::Classified),
            Event::ClipFailed { clip_id, reason } => {
                self.set_status(&clip_id, ClipStatus::Failed);
                self.clips.get_mut(&clip_id).expect("checked").error = Some(reason);
            }
            Event::SegmentClassified { segment_id, verdicts } => {
                let entry = self.segments.get_mut(&segment_id).expect("checked");
                entry.verdicts = verdicts.clone();
                if stage1_anomaly(&verdicts) {
                    match self.items.get_mut(&segment_id) {
                        Some(item) => item.verdicts = verdicts,
                        None => {
                            self.queue.push(segment_id.clone());
                            self.items.insert(
                                segment_id.clone(),
                                ReviewItem {
                                    item_id: segment_id.clone(),
                                    clip_id: entry.ingested.segment.clip_id.clone(),
                                    segment_id,
                                    verdicts,
                                    status: ReviewStatus::Pending,
                                    moderator_label: None,
                                    moderator_note: None,
                                    reviewed_by: None,
                                    created_at: at,
                                    reviewed_at: None,
                                    queued_seq: record.seq,
                                },
                            );
                        }
                    }
                }
            }
            Event::ItemReviewed {
                item_id,
                decision,
                note,
            } => {
                let item = self.items.get_mut(&item_id).expect("checked");
                match decision {
                    Decision::Confirm => item.status = ReviewStatus::Confirmed,
                    Decision::Override { label } => {
                        item.status = ReviewStatus::Overridden;
                        item.moderator_label = Some(label);
                    }
                }
                item.moderator_note = note;
                item.reviewed_by = Some(record.actor.clone());
                item.reviewed_at = Some(at);
            }
        }
        self.last_seq = record.seq;
        Ok(())
    }

    fn set_status(&mut self, clip_id: &str, status: ClipStatus) {
        self.clips.get_mut(clip_id).expect("checked").status = status;
    }

    /// Items with the given status, in queueing order.
    pub fn queue(&self, status: Option<ReviewStatus>) -> Vec<&ReviewItem> {
        self.queue
            .iter()
            .map(|id| &self.items[id])
            .filter(|item| status.map_or(true, |s| item.status == s))
            .collect()
    }
}

/// Append side of the audit log.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("audit log {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AuditLog {
    /// Open the log at `path` and rebuild state from it.
    pub fn open(path: &Path) -> Result<(Self, State), LogError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let mut state = State::default();
        let mut valid_len = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let corrupt = |reason: String| LogError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let is_last = valid_len + line.len() == text.len();
            let parsed = serde_json::from_str::<AuditEvent>(line.trim_end())
                .map_err(|e| e.to_string())
                .and_then(|r| Event::from_record(&r).map(|e| (r, e)).map_err(|e| e.to_string()));
            match parsed {
                Ok((record, event)) if line.ends_with('\n') => {
                    if record.seq != state.last_seq + 1 {
                        return Err(corrupt(format!("expected seq {}, found {}", state.last_seq + 1, record.seq)));
                    }
                    state.apply(&record, event)?;
                    valid_len += line.len();
                }
                _ if is_last => break,
                Err(reason) => return Err(corrupt(reason)),
                Ok(_) => unreachable!("only the final line can lack a newline"),
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if valid_len < text.len() {
            tracing::warn!(path = %path.display(), "dropping torn audit log line");
            file.set_len(valid_len as u64)?;
        }
        file.flush()?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq: state.last_seq + 1,
            },
            state,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validate, persist durably, then apply. The caller must hold the only
    /// writer so validation and application see the same state.
    pub fn commit(&mut self, state: &mut State, actor: &str, event: Event, at: u64) -> Result<AuditEvent, LogError> {
        state.check(&event)?;
        let (action, payload) = event.clone().into_parts();
        let record = AuditEvent {
            seq: self.next_seq,
            actor: actor.to_string(),
            action,
            payload,
            timestamp: at,
        };
        let mut line = serde_json::to_vec(&record).map_err(std::io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        state.apply(&record, event)?;
        Ok(record)
    }

    /// Events with `seq > since`, at most `limit`.
    pub fn read_since(&self, since: u64, limit: usize) -> Result<Vec<AuditEvent>, LogError> {
        let text = std::fs::read_to_string(&self.path)?;
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<AuditEvent>(l).ok())
            .filter(|e| e.seq > since)
            .take(limit)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_ingest::{FrameSet, Room, Segment};
    use crate::verdict_parser::ParseStatus;

    fn clip(id: &str) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            path: PathBuf::from("/x"),
            duration: 20.0,
            fps: 10.0,
            participant_count: 2,
            room: Room::Communication,
            truth: None,
        }
    }

    fn seg(clip_id: &str, index: usize) -> IngestedSegment {
        let id = Segment::id_for(clip_id, index);
        IngestedSegment {
            segment: Segment {
                segment_id: id.clone(),
                clip_id: clip_id.into(),
                index,
                start: index as f64 * 10.0,
                length: 10.0,
                truth: None,
            },
            frameset: FrameSet {
                segment_id: id,
                frames: vec![],
            },
            clip_sha256: "0".repeat(64),
        }
    }

    fn verdicts(seg: &str, l1: Stage1Label) -> Vec<Verdict> {
        vec![Verdict {
            segment_id: seg.into(),
            stage: Stage::Stage1,
            label: Some(StageLabel::Stage1(l1)),
            reason: "r".into(),
            parse_status: ParseStatus::Clean,
            fallback: false,
            raw: None,
        }]
    }

    fn populate(log: &mut AuditLog, state: &mut State) {
        log.commit(state, "api", Event::ClipSubmitted { clip: clip("c"), file_sha256: "f".into(), bytes: 10 }, 1)
            .unwrap();
        log.commit(state, "system", Event::ClipIngested { clip_id: "c".into(), segments: vec![seg("c", 0), seg("c", 1)] }, 2)
            .unwrap();
        log.commit(state, "system", Event::SegmentClassified { segment_id: "c-s000".into(), verdicts: verdicts("c-s000", Stage1Label::Anomaly) }, 3)
            .unwrap();
        log.commit(state, "system", Event::SegmentClassified { segment_id: "c-s001".into(), verdicts: verdicts("c-s001", Stage1Label::Benign) }, 4)
            .unwrap();
        log.commit(state, "system", Event::ClipClassified { clip_id: "c".into() }, 5).unwrap();
    }

    #[test]
    fn only_anomalies_are_queued_and_reviews_are_final() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, mut state) = AuditLog::open(&dir.path().join("audit.jsonl")).unwrap();
        populate(&mut log, &mut state);
        assert_eq!(state.queue(Some(ReviewStatus::Pending)).len(), 1);
        assert!(state.queue(Some(ReviewStatus::Confirmed)).is_empty());

        let review = |d| Event::ItemReviewed { item_id: "c-s000".into(), decision: d, note: Some("friendly high-five".into()) };
        log.commit(&mut state, "mod", review(Decision::Override { label: Stage2Label::BenignBehavior }), 6)
            .unwrap();
        let item = &state.items["c-s000"];
        assert_eq!(item.status, ReviewStatus::Overridden);
        assert_eq!(item.moderator_label, Some(Stage2Label::BenignBehavior));
        assert!(matches!(
            log.commit(&mut state, "mod", review(Decision::Confirm), 7),
            Err(LogError::State(StateError::AlreadyReviewed(_)))
        ));
        assert!(matches!(
            log.commit(&mut state, "mod", Event::ItemReviewed { item_id: "c-s001".into(), decision: Decision::Confirm, note: None }, 7),
            Err(LogError::State(StateError::UnknownItem(_)))
        ));
        // rejected events consume no sequence number
        assert_eq!(state.last_seq, 6);
        assert!(state.queue(Some(ReviewStatus::Pending)).is_empty());
    }

    #[test]
    fn replay_restores_state_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let (mut log, mut state) = AuditLog::open(&path).unwrap();
        populate(&mut log, &mut state);
        log.commit(&mut state, "mod", Event::ItemReviewed { item_id: "c-s000".into(), decision: Decision::Confirm, note: None }, 6)
            .unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":7,\"actor\":\"sys").unwrap();
        drop(f);

        let (mut log, mut replayed) = AuditLog::open(&path).unwrap();
        assert_eq!(replayed.last_seq, 6);
        assert_eq!(replayed.items["c-s000"].status, ReviewStatus::Confirmed);
        assert_eq!(replayed.clips["c"].status, ClipStatus::Classified);
        assert_eq!(replayed.queue, state.queue);
        let rec = log.commit(&mut replayed, "api", Event::ClipSubmitted { clip: clip("d"), file_sha256: "g".into(), bytes: 1 }, 7)
            .unwrap();
        assert_eq!(rec.seq, 7);
        let seqs: Vec<u64> = log.read_since(0, usize::MAX).unwrap().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (1..=7).collect::<Vec<_>>());
        assert_eq!(log.read_since(5, 1).unwrap()[0].seq, 6);
    }

    #[test]
    fn gaps_are_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let (mut log, mut state) = AuditLog::open(&path).unwrap();
        populate(&mut log, &mut state);
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let without_second: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
        std::fs::write(&path, without_second.join("\n") + "\n").unwrap();
        assert!(matches!(AuditLog::open(&path), Err(LogError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn event_wire_form() {
        let (action, payload) = Event::ItemReviewed {
            item_id: "i".into(),
            decision: Decision::Override { label: Stage2Label::DisruptiveBehavior },
            note: None,
        }
        .into_parts();
        assert_eq!(action, "item-reviewed");
        assert_eq!(payload["decision"], "override");
        assert_eq!(payload["label"], "Disruptive Behavior");
    }
}
