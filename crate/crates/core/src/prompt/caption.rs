use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Age {
    Child,
    Teenager,
    YoungAdult,
    Adult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Angry,
    Surprise,
}

impl Age {
    /// Word used in the caption; "young adult" is rendered as "young".
    pub fn caption_word(self) -> &'static str {
        match self {
            Age::Child => "child",
            Age::Teenager => "teenager",
            Age::YoungAdult => "young",
            Age::Adult => "adult",
        }
    }
}

impl Gender {
    pub fn caption_word(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl Emotion {
    pub fn caption_word(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
            Emotion::Surprise => "surprise",
        }
    }
}

fn norm(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '_', '-'], "")
}

impl FromStr for Age {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match norm(s).as_str() {
            "child" => Ok(Age::Child),
            "teenager" => Ok(Age::Teenager),
            "youngadult" | "young" => Ok(Age::YoungAdult),
            "adult" => Ok(Age::Adult),
            _ => Err(Error::Invalid(format!(
                "age {s:?} is not one of child, teenager, youngadult, adult"
            ))),
        }
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match norm(s).as_str() {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            _ => Err(Error::Invalid(format!("gender {s:?} is not one of male, female"))),
        }
    }
}

impl FromStr for Emotion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match norm(s).as_str() {
            "neutral" => Ok(Emotion::Neutral),
            "happy" => Ok(Emotion::Happy),
            "sad" => Ok(Emotion::Sad),
            "angry" => Ok(Emotion::Angry),
            "surprise" => Ok(Emotion::Surprise),
            _ => Err(Error::Invalid(format!(
                "emotion {s:?} is not one of neutral, happy, sad, angry, surprise"
            ))),
        }
    }
}

/// Sentence-level style attributes of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleCaptionFields {
    pub age: Age,
    pub gender: Gender,
    /// Filled with the language name ("English", "Chinese").
    pub accent: String,
    pub emotion: Emotion,
}

/// `"A [Age] [Gender] is speaking [Accent] with [Emotion] emotion."`,
/// instantiated literally (no article agreement).
pub fn build_prompt(fields: &StyleCaptionFields) -> String {
    format!(
        "A {} {} is speaking {} with {} emotion.",
        fields.age.caption_word(),
        fields.gender.caption_word(),
        fields.accent.trim(),
        fields.emotion.caption_word()
    )
}

impl fmt::Display for StyleCaptionFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&build_prompt(self))
    }
}
