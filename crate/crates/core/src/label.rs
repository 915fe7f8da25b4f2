use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

pub const N_CLASSES: usize = 3;

/// Body-position class. The discriminant is the class index used throughout
/// the model (margins, tree class tags, confusion matrices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Weight shifted toward the heel.
    Dorsal = 0,
    Neutral = 1,
    /// Weight shifted toward the toes.
    Ventral = 2,
}

impl Label {
    pub const ALL: [Label; N_CLASSES] = [Label::Dorsal, Label::Neutral, Label::Ventral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Dorsal => "dorsal",
            Label::Neutral => "neutral",
            Label::Ventral => "ventral",
        }
    }

    /// Reflection about the neutral point.
    pub fn mirrored(self) -> Label {
        match self {
            Label::Dorsal => Label::Ventral,
            Label::Neutral => Label::Neutral,
            Label::Ventral => Label::Dorsal,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dorsal" | "d" | "0" => Ok(Label::Dorsal),
            "neutral" | "n" | "1" => Ok(Label::Neutral),
            "ventral" | "v" | "2" => Ok(Label::Ventral),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}
