use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::labels::{EmotionLabel, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    /// The whole response is one conforming object.
    Ok,
    /// A conforming object was recovered from surrounding text or fences, or
    /// its keys only matched case-insensitively.
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    /// All-false when parsing failed.
    pub labels: LabelVector,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ParseOutcome {
    pub fn is_usable(&self) -> bool {
        self.status != ParseStatus::Failed
    }

    fn failed(raw: &str, reason: impl Into<String>) -> Self {
        ParseOutcome {
            status: ParseStatus::Failed,
            labels: LabelVector::NEUTRAL,
            raw: raw.to_string(),
            reason: Some(reason.into()),
        }
    }
}

// Random input can contain many braces; bound the scan.
const MAX_CANDIDATES: usize = 256;

enum Candidate {
    /// Exactly the six lowercase keys, all booleans.
    Exact(LabelVector),
    /// Six keys matched ignoring case.
    CaseFolded(LabelVector),
    /// Has all six keys but also something disqualifying.
    Invalid(String),
    /// Not an emotion object at all.
    Unrelated,
}

fn classify(map: &Map<String, Value>) -> Candidate {
    let mut found: [Option<&Value>; 6] = [None; 6];
    let mut extras = Vec::new();
    let mut case_folded = false;
    let mut duplicate = None;
    for (key, value) in map {
        let lower = key.to_lowercase();
        match lower.parse::<EmotionLabel>() {
            Ok(label) => {
                if found[label.index()].is_some() {
                    duplicate = Some(label);
                }
                found[label.index()] = Some(value);
                case_folded |= lower != *key;
            }
            Err(_) => extras.push(key.as_str()),
        }
    }
    if found.iter().any(Option::is_none) {
        return Candidate::Unrelated;
    }
    if let Some(label) = duplicate {
        return Candidate::Invalid(format!("duplicate key for {label}"));
    }
    if !extras.is_empty() {
        return Candidate::Invalid(format!("unexpected keys: {}", extras.join(", ")));
    }
    let mut labels = LabelVector::NEUTRAL;
    for label in EmotionLabel::ALL {
        match found[label.index()] {
            Some(Value::Bool(b)) => labels.set(label, *b),
            Some(other) => return Candidate::Invalid(format!("non-boolean value for {label}: {other}")),
            None => unreachable!(),
        }
    }
    if case_folded {
        Candidate::CaseFolded(labels)
    } else {
        Candidate::Exact(labels)
    }
}

/// Byte offset one past the `}` closing the object that opens at `start`,
/// honoring JSON string quoting. `None` when the object is never closed.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
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

/// Maps any model response to exactly one outcome; never panics.
///
/// A response whose trimmed text is a single object with exactly the six
/// boolean keys is `Ok`. Otherwise every `{` is tried as the start of a
/// balanced JSON object, in order, and the first one carrying all six
/// emotion keys decides the result: `Repaired` if it conforms (keys may
/// differ in case), `Failed` if it has extra keys or non-boolean values.
pub fn parse_response(raw: &str) -> ParseOutcome {
    let trimmed = raw.trim();
    let mut saw_object = false;
    let mut tried = 0usize;
    for (start, _) in trimmed.match_indices('{') {
        if tried == MAX_CANDIDATES {
            break;
        }
        let Some(end) = balanced_end(trimmed, start) else {
            continue;
        };
        tried += 1;
        let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&trimmed[start..end]) else {
            continue;
        };
        saw_object = true;
        let whole = start == 0 && end == trimmed.len();
        return match classify(&map) {
            Candidate::Exact(labels) => ParseOutcome {
                status: if whole { ParseStatus::Ok } else { ParseStatus::Repaired },
                labels,
                raw: raw.to_string(),
                reason: (!whole).then(|| "extracted from surrounding text".to_string()),
            },
            Candidate::CaseFolded(labels) => ParseOutcome {
                status: ParseStatus::Repaired,
                labels,
                raw: raw.to_string(),
                reason: Some("keys matched case-insensitively".to_string()),
            },
            Candidate::Invalid(reason) => ParseOutcome::failed(raw, reason),
            Candidate::Unrelated => continue,
        };
    }
    if saw_object {
        ParseOutcome::failed(raw, "no object with all six emotion keys")
    } else {
        ParseOutcome::failed(raw, "no JSON object found")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JOY_SURPRISE: &str =
        r#"{"anger":false,"fear":false,"joy":true,"sadness":false,"surprise":true,"disgust":false}"#;

    fn joy_surprise() -> LabelVector {
        LabelVector::from_labels([EmotionLabel::Joy, EmotionLabel::Surprise])
    }

    #[test]
    fn bare_object_is_ok() {
        let o = parse_response(JOY_SURPRISE);
        assert_eq!(o.status, ParseStatus::Ok);
        assert_eq!(o.labels, joy_surprise());
        assert_eq!(o.reason, None);
        assert_eq!(parse_response(&format!("  \n{JOY_SURPRISE}\n")).status, ParseStatus::Ok);
    }

    #[test]
    fn pretty_printed_object_is_ok() {
        let pretty = serde_json::to_string_pretty(&joy_surprise()).unwrap();
        assert_eq!(parse_response(&pretty).status, ParseStatus::Ok);
    }

    #[test]
    fn fenced_object_is_repaired() {
        let o = parse_response(&format!("```json\n{JOY_SURPRISE}\n```"));
        assert_eq!(o.status, ParseStatus::Repaired);
        assert_eq!(o.labels, joy_surprise());
    }

    #[test]
    fn prose_fails() {
        let o = parse_response("The emotion is joy.");
        assert_eq!(o.status, ParseStatus::Failed);
        assert!(o.labels.is_neutral());
        assert_eq!(o.reason.as_deref(), Some("no JSON object found"));
    }

    #[test]
    fn case_insensitive_keys_are_repaired() {
        let o = parse_response(
            r#"{"Anger":false,"Fear":false,"Joy":true,"Sadness":false,"Surprise":false,"Disgust":false}"#,
        );
        assert_eq!(o.status, ParseStatus::Repaired);
        assert_eq!(o.labels, LabelVector::from_labels([EmotionLabel::Joy]));
    }

    #[test]
    fn extra_keys_fail() {
        let o = parse_response(
            r#"{"anger":false,"fear":false,"joy":true,"sadness":false,"surprise":false,"disgust":false,"neutral":false}"#,
        );
        assert_eq!(o.status, ParseStatus::Failed);
        assert!(o.reason.unwrap().contains("neutral"));
    }

    #[test]
    fn non_boolean_fails() {
        let o = parse_response(r#"{"anger":0,"fear":false,"joy":true,"sadness":false,"surprise":false,"disgust":false}"#);
        assert_eq!(o.status, ParseStatus::Failed);
        assert!(o.labels.is_neutral());
    }

    #[test]
    fn nested_object_is_found() {
        let o = parse_response(&format!(r#"{{"result": {JOY_SURPRISE}}}"#));
        assert_eq!(o.status, ParseStatus::Repaired);
        assert_eq!(o.labels, joy_surprise());
    }

    #[test]
    fn first_conforming_object_wins() {
        let other = LabelVector::from_labels([EmotionLabel::Fear]).to_json();
        let o = parse_response(&format!("first {other} then {JOY_SURPRISE}"));
        assert_eq!(o.labels, LabelVector::from_labels([EmotionLabel::Fear]));
    }

    #[test]
    fn truncated_object_fails() {
        let o = parse_response(&JOY_SURPRISE[..40]);
        assert_eq!(o.status, ParseStatus::Failed);
    }

    #[test]
    fn unrelated_object_fails() {
        let o = parse_response(r#"{"emotion": "joy"}"#);
        assert_eq!(o.status, ParseStatus::Failed);
        assert_eq!(o.reason.as_deref(), Some("no object with all six emotion keys"));
    }

    #[test]
    fn braces_inside_strings_are_ignored() {
        let o = parse_response(&format!(r#"note: "{{ not json" {JOY_SURPRISE}"#));
        assert_eq!(o.labels, joy_surprise());
    }

    #[test]
    fn all_serializations_are_ok() {
        for v in LabelVector::all() {
            let o = parse_response(&v.to_json());
            assert_eq!(o.status, ParseStatus::Ok);
            assert_eq!(o.labels, v);
        }
    }
}
