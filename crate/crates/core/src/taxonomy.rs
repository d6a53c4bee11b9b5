//! Label sets for both classification stages and the behavior catalog.
//!
//! Stage 1 is a binary Benign/Anomaly decision; Stage 2 splits anomalies into
//! three harassment categories plus a benign class. Subcategories are
//! ground-truth metadata only and never appear in model answers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

/// Classification stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "stage1")]
    Stage1,
    #[serde(rename = "stage2")]
    Stage2,
}

impl Stage {
    pub const ALL: [Stage; 2] = [Stage::Stage1, Stage::Stage2];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }

    /// Canonical wire strings of the labels this stage may answer with.
    pub fn wire_labels(self) -> Vec<&'static str> {
        match self {
            Stage::Stage1 => Stage1Label::ALL.iter().map(|l| l.as_str()).collect(),
            Stage::Stage2 => Stage2Label::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stage1" | "1" => Ok(Stage::Stage1),
            "stage2" | "2" => Ok(Stage::Stage2),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage1Label {
    Benign,
    Anomaly,
}

impl Stage1Label {
    pub const ALL: [Stage1Label; 2] = [Stage1Label::Benign, Stage1Label::Anomaly];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage1Label::Benign => "Benign",
            Stage1Label::Anomaly => "Anomaly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage2Label {
    BenignBehavior,
    AggressiveBehavior,
    PersonalSpaceViolation,
    DisruptiveBehavior,
}

impl Stage2Label {
    pub const ALL: [Stage2Label; 4] = [
        Stage2Label::BenignBehavior,
        Stage2Label::AggressiveBehavior,
        Stage2Label::PersonalSpaceViolation,
        Stage2Label::DisruptiveBehavior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage2Label::BenignBehavior => "Benign",
            Stage2Label::AggressiveBehavior => "Aggressive Behavior",
            Stage2Label::PersonalSpaceViolation => "Personal Space Violation",
            Stage2Label::DisruptiveBehavior => "Disruptive Behavior",
        }
    }

    /// Collapse a four-way label into the binary Stage 1 decision.
    pub fn coarsen(self) -> Stage1Label {
        match self {
            Stage2Label::BenignBehavior => Stage1Label::Benign,
            _ => Stage1Label::Anomaly,
        }
    }
}

pub fn coarsen(label: Stage2Label) -> Stage1Label {
    label.coarsen()
}

/// Fine-grained behaviors from the harassment catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subcategory {
    Punching,
    Slapping,
    HittingWithObject,
    Looming,
    FollowingStalking,
    Blocking,
    BenignOther,
}

impl Subcategory {
    pub const ALL: [Subcategory; 7] = [
        Subcategory::Punching,
        Subcategory::Slapping,
        Subcategory::HittingWithObject,
        Subcategory::Looming,
        Subcategory::FollowingStalking,
        Subcategory::Blocking,
        Subcategory::BenignOther,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcategory::Punching => "Punching",
            Subcategory::Slapping => "Slapping",
            Subcategory::HittingWithObject => "Hitting with Object",
            Subcategory::Looming => "Looming",
            Subcategory::FollowingStalking => "Following/Stalking",
            Subcategory::Blocking => "Blocking",
            Subcategory::BenignOther => "Benign",
        }
    }

    pub fn parent(self) -> Stage2Label {
        match self {
            Subcategory::Punching | Subcategory::Slapping | Subcategory::HittingWithObject => {
                Stage2Label::AggressiveBehavior
            }
            Subcategory::Looming | Subcategory::FollowingStalking => {
                Stage2Label::PersonalSpaceViolation
            }
            Subcategory::Blocking => Stage2Label::DisruptiveBehavior,
            Subcategory::BenignOther => Stage2Label::BenignBehavior,
        }
    }

    /// Human-readable definition of the behavior.
    pub fn definition(self) -> &'static str {
        match self {
            Subcategory::Punching => "Attacking another avatar with a fist",
            Subcategory::Slapping => "Striking another avatar with an open hand",
            Subcategory::HittingWithObject => "Striking another avatar with a held object",
            Subcategory::Looming => "Bringing one's avatar face close to another avatar's face",
            Subcategory::FollowingStalking => "Tracking a user repeatedly over time",
            Subcategory::Blocking => "Obstructing the movement of another avatar",
            Subcategory::BenignOther => "Normal play with no hostile intent",
        }
    }
}

pub fn parent_of(sub: Subcategory) -> Stage2Label {
    sub.parent()
}

/// Either stage's label, for code that handles both stages uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageLabel {
    Stage1(Stage1Label),
    Stage2(Stage2Label),
}

impl StageLabel {
    pub fn stage(self) -> Stage {
        match self {
            StageLabel::Stage1(_) => Stage::Stage1,
            StageLabel::Stage2(_) => Stage::Stage2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Stage1(l) => l.as_str(),
            StageLabel::Stage2(l) => l.as_str(),
        }
    }

    /// Parse a wire string for the given stage; exact match only.
    pub fn parse(stage: Stage, s: &str) -> Result<Self, UnknownLabel> {
        match stage {
            Stage::Stage1 => s.parse().map(StageLabel::Stage1),
            Stage::Stage2 => s.parse().map(StageLabel::Stage2),
        }
    }

    /// Project a Stage 2 ground truth onto the requested stage.
    pub fn from_truth(stage: Stage, truth: Stage2Label) -> Self {
        match stage {
            Stage::Stage1 => StageLabel::Stage1(truth.coarsen()),
            Stage::Stage2 => StageLabel::Stage2(truth),
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! wire_string_impls {
    ($ty:ident) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $ty::ALL
                    .iter()
                    .copied()
                    .find(|l| l.as_str() == s)
                    .ok_or_else(|| UnknownLabel(s.to_string()))
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

wire_string_impls!(Stage1Label);
wire_string_impls!(Stage2Label);
wire_string_impls!(Subcategory);
