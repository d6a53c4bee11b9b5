//! Strict-JSON answer parsing.
//!
//! A body is `Clean` when it is exactly one JSON object with the two fields
//! `label` and `reason`, an allowed label and a non-empty reason. Bodies that
//! are not JSON at all get a second chance: the first balanced `{...}`
//! substring that validates is accepted as `Salvaged`. Everything else is
//! `Failed`; choosing a label for failures is the caller's policy.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::prompt_forge::{answer_json, ResponseSchema};
use crate::taxonomy::{Stage, StageLabel, UnknownLabel};
use crate::vlm_gateway::BackendKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseStatus {
    Clean,
    Salvaged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub status: ParseStatus,
    pub label: Option<StageLabel>,
    pub reason: String,
}

impl Parsed {
    fn failed() -> Self {
        Self {
            status: ParseStatus::Failed,
            label: None,
            reason: String::new(),
        }
    }
}

fn validate(obj: &Map<String, Value>, schema: &ResponseSchema) -> Option<(StageLabel, String)> {
    if obj.len() != 2 {
        return None;
    }
    let label = obj.get("label")?.as_str()?.trim();
    let reason = obj.get("reason")?.as_str()?.trim();
    if reason.is_empty() || !schema.allows(label) {
        return None;
    }
    let label = StageLabel::parse(schema.stage, label).ok()?;
    Some((label, reason.to_string()))
}

/// End offset (exclusive) of the balanced object starting at `start`,
/// skipping braces inside string literals.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse(body: &str, schema: &ResponseSchema) -> Parsed {
    let trimmed = body.trim();
    if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
        // well-formed JSON is judged as-is, never mined for fragments
        return match value.as_object().and_then(|o| validate(o, schema)) {
            Some((label, reason)) => Parsed {
                status: ParseStatus::Clean,
                label: Some(label),
                reason,
            },
            None => Parsed::failed(),
        };
    }
    let bytes = body.as_bytes();
    for (start, _) in body.match_indices('{') {
        let Some(end) = balanced_end(bytes, start) else {
            continue;
        };
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&body[start..end]) else {
            continue;
        };
        if let Some((label, reason)) = validate(&obj, schema) {
            return Parsed {
                status: ParseStatus::Salvaged,
                label: Some(label),
                reason,
            };
        }
    }
    Parsed::failed()
}

/// Provenance of the response a verdict came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRef {
    pub request_id: String,
    pub attempt: u32,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VerdictRecord", into = "VerdictRecord")]
pub struct Verdict {
    pub segment_id: String,
    pub stage: Stage,
    /// `None` only for a failed parse before fallback policy is applied.
    pub label: Option<StageLabel>,
    pub reason: String,
    pub parse_status: ParseStatus,
    /// Set when the label was assigned by fallback policy rather than the model.
    pub fallback: bool,
    /// `None` when no model call was made (cascade short-circuit).
    pub raw: Option<RawRef>,
}

impl Verdict {
    pub fn from_parsed(segment_id: &str, stage: Stage, parsed: Parsed, raw: Option<RawRef>) -> Self {
        Self {
            segment_id: segment_id.to_string(),
            stage,
            label: parsed.label,
            reason: parsed.reason,
            parse_status: parsed.status,
            fallback: false,
            raw,
        }
    }

    /// The answer object this verdict re-serializes to, if it has a label.
    pub fn answer(&self) -> Option<String> {
        self.label.map(|l| answer_json(l, &self.reason))
    }
}

#[derive(Serialize, Deserialize)]
struct VerdictRecord {
    segment_id: String,
    stage: Stage,
    label: Option<String>,
    reason: String,
    parse_status: ParseStatus,
    #[serde(default)]
    fallback: bool,
    raw: Option<RawRef>,
}

impl From<Verdict> for VerdictRecord {
    fn from(v: Verdict) -> Self {
        Self {
            segment_id: v.segment_id,
            stage: v.stage,
            label: v.label.map(|l| l.as_str().to_string()),
            reason: v.reason,
            parse_status: v.parse_status,
            fallback: v.fallback,
            raw: v.raw,
        }
    }
}

impl TryFrom<VerdictRecord> for Verdict {
    type Error = UnknownLabel;

    fn try_from(r: VerdictRecord) -> Result<Self, Self::Error> {
        Ok(Self {
            label: r.label.map(|l| StageLabel::parse(r.stage, &l)).transpose()?,
            segment_id: r.segment_id,
            stage: r.stage,
            reason: r.reason,
            parse_status: r.parse_status,
            fallback: r.fallback,
            raw: r.raw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt_forge::expected_schema;
    use crate::taxonomy::{Stage1Label, Stage2Label};
    use proptest::prelude::*;

    fn s1() -> ResponseSchema {
        expected_schema(Stage::Stage1)
    }

    #[test]
    fn canonical_examples() {
        let p = parse(r#"{"label":"Anomaly","reason":"punching another avatar"}"#, &s1());
        assert_eq!(p.status, ParseStatus::Clean);
        assert_eq!(p.label, Some(StageLabel::Stage1(Stage1Label::Anomaly)));

        let p = parse(r#"Sure! {"label":"Benign","reason":"normal play"}"#, &s1());
        assert_eq!(p.status, ParseStatus::Salvaged);
        assert_eq!(p.label, Some(StageLabel::Stage1(Stage1Label::Benign)));
        assert_eq!(p.reason, "normal play");

        let p = parse(r#"{"label":"Maybe","reason":"unclear"}"#, &s1());
        assert_eq!(p.status, ParseStatus::Failed);
        assert_eq!(p.label, None);

        let p = parse(r#"{"label":"Benign","reason":"ok","extra":1}"#, &s1());
        assert_eq!(p.status, ParseStatus::Failed);
    }

    #[test]
    fn surrounding_whitespace_is_still_clean() {
        let p = parse("\n  {\"label\": \" Benign \", \"reason\": \"ok\"}\n", &s1());
        assert_eq!(p.status, ParseStatus::Clean);
        assert_eq!(p.label, Some(StageLabel::Stage1(Stage1Label::Benign)));
    }

    #[test]
    fn wrong_stage_label_fails() {
        let p = parse(r#"{"label":"Aggressive Behavior","reason":"hit"}"#, &s1());
        assert_eq!(p.status, ParseStatus::Failed);
        let p = parse(
            r#"{"label":"Aggressive Behavior","reason":"hit"}"#,
            &expected_schema(Stage::Stage2),
        );
        assert_eq!(p.label, Some(StageLabel::Stage2(Stage2Label::AggressiveBehavior)));
    }

    #[test]
    fn salvage_edge_cases() {
        // fenced code block
        let p = parse("```json\n{\"label\": \"Anomaly\", \"reason\": \"slap\"}\n```", &s1());
        assert_eq!(p.status, ParseStatus::Salvaged);
        // braces inside strings do not break balancing
        let p = parse(r#"x {"label":"Benign","reason":"a } b {"} y"#, &s1());
        assert_eq!(p.status, ParseStatus::Salvaged);
        assert_eq!(p.reason, "a } b {");
        // first invalid object skipped, later valid one taken
        let p = parse(r#"a {"label":"Nope","reason":"x"} b {"label":"Anomaly","reason":"y"}"#, &s1());
        assert_eq!(p.status, ParseStatus::Salvaged);
        assert_eq!(p.reason, "y");
        // unbalanced
        assert_eq!(parse(r#"{"label":"Benign","reason":"x""#, &s1()).status, ParseStatus::Failed);
        // empty reason
        assert_eq!(parse(r#"{"label":"Benign","reason":"  "}"#, &s1()).status, ParseStatus::Failed);
        // not an object
        assert_eq!(parse(r#"["Benign"]"#, &s1()).status, ParseStatus::Failed);
        assert_eq!(parse("", &s1()).status, ParseStatus::Failed);
    }

    #[test]
    fn verdict_serialization_round_trip() {
        let v = Verdict {
            segment_id: "c-s000".into(),
            stage: Stage::Stage2,
            label: Some(StageLabel::Stage2(Stage2Label::PersonalSpaceViolation)),
            reason: "looming".into(),
            parse_status: ParseStatus::Clean,
            fallback: false,
            raw: Some(RawRef {
                request_id: "r1".into(),
                attempt: 1,
                backend: BackendKind::MockOracle,
            }),
        };
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains(r#""label":"Personal Space Violation""#));
        assert_eq!(serde_json::from_str::<Verdict>(&json).unwrap(), v);
    }

    #[test]
    fn clean_verdicts_reserialize_identically() {
        let body = r#"{"label":"Anomaly","reason":"punching another avatar"}"#;
        let v = Verdict::from_parsed("s", Stage::Stage1, parse(body, &s1()), None);
        let a: Value = serde_json::from_str(&v.answer().unwrap()).unwrap();
        let b: Value = serde_json::from_str(body).unwrap();
        assert_eq!(a, b);
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("{".to_string()),
            Just("}".to_string()),
            Just("\"".to_string()),
            Just(":".to_string()),
            Just(",".to_string()),
            Just("\\".to_string()),
            Just("\"label\"".to_string()),
            Just("\"reason\"".to_string()),
            Just("\"Anomal\"".to_string()),
            Just("\"benign\"".to_string()),
            Just("\"x\"".to_string()),
            "[ -~]{0,6}",
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn random_bytes_never_yield_labels(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let body = String::from_utf8_lossy(&bytes);
            let p = parse(&body, &s1());
            prop_assert_ne!(p.status, ParseStatus::Clean);
            prop_assert_eq!(p.label, None);
        }

        #[test]
        fn labels_only_come_from_the_body(parts in proptest::collection::vec(fragment(), 0..40)) {
            let body: String = parts.concat();
            for stage in Stage::ALL {
                let p = parse(&body, &expected_schema(stage));
                if let Some(label) = p.label {
                    prop_assert!(body.contains(label.as_str()));
                    prop_assert!(!p.reason.is_empty());
                } else {
                    prop_assert_eq!(p.status, ParseStatus::Failed);
                }
            }
        }
    }
}
