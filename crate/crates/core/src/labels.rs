//! The six-emotion label schema.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the six emotions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Fear,
    Joy,
    Sadness,
    Surprise,
    Disgust,
}

impl EmotionLabel {
    pub const COUNT: usize = 6;

    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Joy,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Disgust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lowercase key used in JSON objects and CSV headers.
    pub fn key(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Disgust => "disgust",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| format!("unknown emotion label `{s}`"))
    }
}

/// Six booleans indexed by [`EmotionLabel`]. The all-false vector is the
/// neutral assignment.
///
/// Serializes as a JSON object with exactly the six lowercase keys, in
/// canonical order. Deserialization rejects missing or extra keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct LabelVector([bool; 6]);

impl LabelVector {
    pub const NEUTRAL: LabelVector = LabelVector([false; 6]);

    pub fn new(flags: [bool; 6]) -> Self {
        LabelVector(flags)
    }

    pub fn from_labels<I: IntoIterator<Item = EmotionLabel>>(labels: I) -> Self {
        let mut v = Self::NEUTRAL;
        for l in labels {
            v.set(l, true);
        }
        v
    }

    /// Bit `i` of `bits` is the flag for the `i`-th label in canonical order.
    pub fn from_bits(bits: u8) -> Self {
        let mut flags = [false; 6];
        for (i, f) in flags.iter_mut().enumerate() {
            *f = bits & (1 << i) != 0;
        }
        LabelVector(flags)
    }

    pub fn bits(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &f)| acc | ((f as u8) << i))
    }

    /// All 64 possible assignments.
    pub fn all() -> impl Iterator<Item = LabelVector> {
        (0u8..64).map(LabelVector::from_bits)
    }

    pub fn get(&self, label: EmotionLabel) -> bool {
        self.0[label.index()]
    }

    pub fn set(&mut self, label: EmotionLabel, value: bool) {
        self.0[label.index()] = value;
    }

    pub fn flags(&self) -> [bool; 6] {
        self.0
    }

    pub fn positives(&self) -> impl Iterator<Item = EmotionLabel> + '_ {
        EmotionLabel::ALL.into_iter().filter(|l| self.get(*l))
    }

    pub fn is_neutral(&self) -> bool {
        !self.0.iter().any(|&f| f)
    }

    /// Compact JSON object, e.g. `{"anger":false,...,"disgust":false}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("label vector serializes")
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.positives().map(|l| l.key()).collect();
        if names.is_empty() {
            f.write_str("neutral")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelObject {
    anger: bool,
    fear: bool,
    joy: bool,
    sadness: bool,
    surprise: bool,
    disgust: bool,
}

impl Serialize for LabelVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let [anger, fear, joy, sadness, surprise, disgust] = self.0;
        LabelObject {
            anger,
            fear,
            joy,
            sadness,
            surprise,
            disgust,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let o = LabelObject::deserialize(deserializer)?;
        Ok(LabelVector([
            o.anger, o.fear, o.joy, o.sadness, o.surprise, o.disgust,
        ]))
    }
}
