//! Prompt rendering for both stages in four variants.
//!
//! Each variant is a stack of text sections. Context adds behavior
//! definitions to Baseline, CoT adds the internal reasoning steps on top of
//! Context, and FewShot keeps the Baseline text but sends labeled exemplars
//! ahead of the query frames. The output-format block always comes last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media_ingest::FrameSet;
use crate::taxonomy::{Stage, StageLabel, UnknownLabel};

pub const SYSTEM_TEXT: &str = "You are a strict VR harassment video classifier";

const HEADER: &str = "You are given {N} sequential frames sampled from ONE short VR video (chronological order).\n\
Judge ONLY avatars' actions toward other avatars (ignore background/camera).";

const STAGE1_DEFINITIONS: &str = "Benign  = normal play with no hostile intent.\n\
Anomaly = clear hostile actions such as punching, slapping, or very close following.\n\
If you are uncertain, choose Benign.";

const STAGE2_DEFINITIONS: &str = "Benign = normal play with no hostile intent.\n\
Aggressive Behavior = clear physical attacks on another avatar.\n\
Personal Space Violation = intrusion into another avatar's personal space.\n\
Disruptive Behavior = obstruction of another avatar's movement or activity.\n\
If you are uncertain, choose Benign.";

const STAGE1_CONTEXT: &str = "Anomaly =\n\
1) Aggressive behavior: punching, slapping, striking with objects.\n\
2) Personal space violation: standing uncomfortably close, persistent following, looming.\n\
3) Disruptive behavior: blocking, cornering, targeted interference.\n\
4) If multiple weak cues occur together (e.g., following + blocking), classify as Anomaly.";

const STAGE2_CONTEXT: &str = "Hostile classes =\n\
1) Aggressive Behavior: punching, slapping, striking with objects.\n\
2) Personal Space Violation: standing uncomfortably close, persistent following, looming.\n\
3) Disruptive Behavior: blocking, cornering, targeted interference.\n\
4) If multiple weak cues occur together (e.g., following + blocking), assign the most appropriate hostile class.";

const REASONING_STEPS: &str = "Reasoning (internal, do NOT output):\n\
1) Are multiple avatars present?\n\
2) Is there interaction between them?\n\
3) Any striking or object-based attack?\n\
4) Any invasive closeness, following, or looming?\n\
5) Any blocking, cornering, or targeted interference?";

const STAGE1_FINAL_STEP: &str = "6) If cues exist, classify as Anomaly; otherwise Benign.";
const STAGE2_FINAL_STEP: &str =
    "6) If cues exist, assign the most appropriate hostile class; otherwise Benign.";

const OUTPUT_INSTRUCTION: &str =
    "Return ONLY a strict JSON object with EXACTLY these fields (no extra text):";
const REASON_HINT: &str = "<one short phrase about avatars/actions/intent>";

const REPAIR_REMINDER: &str = "Your previous answer did not follow the required format. \
Return ONLY the strict JSON object described above, with no extra text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    Baseline,
    Context,
    #[serde(rename = "cot")]
    CoT,
    #[serde(rename = "fewshot")]
    FewShot,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::Baseline,
        PromptVariant::Context,
        PromptVariant::CoT,
        PromptVariant::FewShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "baseline",
            PromptVariant::Context => "context",
            PromptVariant::CoT => "cot",
            PromptVariant::FewShot => "fewshot",
        }
    }

    /// Row caption used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "Baseline Prompt",
            PromptVariant::Context => "+ Context",
            PromptVariant::CoT => "+ CoT",
            PromptVariant::FewShot => "+ Few-shot",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("few-shot prompts need exemplars")]
    MissingExemplars,
    #[error("exemplars are only valid for the few-shot variant")]
    UnexpectedExemplars,
    #[error("frame count must be at least 2, got {0}")]
    InvalidFrameCount(usize),
    #[error("exemplar label {label:?} does not belong to {stage}")]
    ExemplarStageMismatch { stage: Stage, label: String },
}

/// A labeled example shown before the query in few-shot prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub frames: FrameSet,
    pub label: StageLabel,
    pub reason: String,
}

impl Exemplar {
    pub fn answer(&self) -> String {
        answer_json(self.label, &self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub stage: Stage,
    pub variant: PromptVariant,
    pub system_text: String,
    pub user_text: String,
    pub frame_slots: usize,
    pub exemplars: Vec<Exemplar>,
}

impl PromptBundle {
    /// Frame URLs expected by a request built from this bundle: exemplar
    /// frames first, then the query frames.
    pub fn total_frames(&self) -> usize {
        self.frame_slots + self.exemplars.iter().map(|e| e.frames.len()).sum::<usize>()
    }

    /// Lay the bundle out as chat messages. `frame_urls` must hold the
    /// exemplar frames (in exemplar order) followed by the query frames.
    pub fn to_messages(&self, frame_urls: &[String]) -> Vec<ChatMessage> {
        assert_eq!(frame_urls.len(), self.total_frames(), "frame URL count mismatch");
        let mut messages = vec![ChatMessage::system(&self.system_text)];
        let mut urls = frame_urls.iter();
        let k = self.exemplars.len();
        for (i, ex) in self.exemplars.iter().enumerate() {
            let n = ex.frames.len();
            let mut parts = vec![ContentPart::text(format!(
                "Example {}/{}: {} sequential frames from one VR video.",
                i + 1,
                k,
                n
            ))];
            parts.extend(frame_parts(urls.by_ref().take(n), n));
            messages.push(ChatMessage::user(parts));
            messages.push(ChatMessage::assistant(ex.answer()));
        }
        let mut parts = vec![ContentPart::text(self.user_text.clone())];
        parts.extend(frame_parts(urls, self.frame_slots));
        messages.push(ChatMessage::user(parts));
        messages
    }
}

fn frame_parts<'a>(urls: impl Iterator<Item = &'a String>, n: usize) -> Vec<ContentPart> {
    urls.enumerate()
        .flat_map(|(i, url)| {
            [
                ContentPart::text(format!("Frame {}/{}", i + 1, n)),
                ContentPart::image(url.clone()),
            ]
        })
        .collect()
}

/// OpenAI-style chat message with text and image-URL content parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

impl ContentPart {
    pub fn text(text: impl Into<String>) -> Self {
        ContentPart::Text { text: text.into() }
    }

    pub fn image(url: impl Into<String>) -> Self {
        ContentPart::ImageUrl {
            image_url: ImageUrl { url: url.into() },
        }
    }
}

impl ChatMessage {
    pub fn system(text: &str) -> Self {
        Self {
            role: "system".into(),
            content: MessageContent::Text(text.into()),
        }
    }

    pub fn user(parts: Vec<ContentPart>) -> Self {
        Self {
            role: "user".into(),
            content: MessageContent::Parts(parts),
        }
    }

    pub fn assistant(text: String) -> Self {
        Self {
            role: "assistant".into(),
            content: MessageContent::Text(text),
        }
    }

    /// Text content only, images excluded.
    pub fn text_len(&self) -> usize {
        match &self.content {
            MessageContent::Text(t) => t.len(),
            MessageContent::Parts(parts) => parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text { text } => text.len(),
                    ContentPart::ImageUrl { .. } => 0,
                })
                .sum(),
        }
    }
}

/// The canonical answer object, `{"label": ..., "reason": ...}`.
pub fn answer_json(label: StageLabel, reason: &str) -> String {
    format!(
        "{{\"label\": {}, \"reason\": {}}}",
        serde_json::Value::from(label.as_str()),
        serde_json::Value::from(reason)
    )
}

fn answer_template(stage: Stage) -> String {
    format!(
        "{{\"label\": \"<{}>\", \"reason\": \"{}\"}}",
        stage.wire_labels().join("|"),
        REASON_HINT
    )
}

fn sections(stage: Stage, variant: PromptVariant) -> Vec<String> {
    let (definitions, context, final_step) = match stage {
        Stage::Stage1 => (STAGE1_DEFINITIONS, STAGE1_CONTEXT, STAGE1_FINAL_STEP),
        Stage::Stage2 => (STAGE2_DEFINITIONS, STAGE2_CONTEXT, STAGE2_FINAL_STEP),
    };
    let mut out = vec![HEADER.to_string(), definitions.to_string()];
    if matches!(variant, PromptVariant::Context | PromptVariant::CoT) {
        out.push(context.to_string());
    }
    if variant == PromptVariant::CoT {
        out.push(format!("{REASONING_STEPS}\n{final_step}"));
    }
    out.push(format!("{OUTPUT_INSTRUCTION}\n{}", answer_template(stage)));
    out
}

/// The unrendered template text with its `{N}` placeholder.
pub fn template(stage: Stage, variant: PromptVariant) -> String {
    sections(stage, variant).join("\n\n")
}

pub fn build_prompt(
    stage: Stage,
    variant: PromptVariant,
    n_frames: usize,
    exemplars: Option<Vec<Exemplar>>,
) -> Result<PromptBundle, PromptError> {
    if n_frames < 2 {
        return Err(PromptError::InvalidFrameCount(n_frames));
    }
    let exemplars = match (variant, exemplars) {
        (PromptVariant::FewShot, Some(ex)) if !ex.is_empty() => ex,
        (PromptVariant::FewShot, _) => return Err(PromptError::MissingExemplars),
        (_, Some(ex)) if !ex.is_empty() => return Err(PromptError::UnexpectedExemplars),
        (_, _) => Vec::new(),
    };
    if let Some(bad) = exemplars.iter().find(|e| e.label.stage() != stage) {
        return Err(PromptError::ExemplarStageMismatch {
            stage,
            label: bad.label.as_str().to_string(),
        });
    }
    Ok(PromptBundle {
        stage,
        variant,
        system_text: SYSTEM_TEXT.to_string(),
        user_text: template(stage, variant).replace("{N}", &n_frames.to_string()),
        frame_slots: n_frames,
        exemplars,
    })
}

/// Follow-up text appended when an answer could not be parsed.
pub fn repair_reminder() -> &'static str {
    REPAIR_REMINDER
}

/// Shape of a valid answer for a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResponseSchema {
    pub stage: Stage,
    pub allowed_labels: Vec<&'static str>,
    pub required_fields: [&'static str; 2],
}

impl ResponseSchema {
    pub fn allows(&self, label: &str) -> bool {
        self.allowed_labels.contains(&label)
    }
}

pub fn expected_schema(stage: Stage) -> ResponseSchema {
    ResponseSchema {
        stage,
        allowed_labels: stage.wire_labels(),
        required_fields: ["label", "reason"],
    }
}
