use serde::{Deserialize, Serialize};

use crate::labels::LabelVector;

const SYSTEM_TEMPLATE: &str = "You are an expert at detecting emotions in text. The texts are given in {language} language.
Please classify the text into one of the following categories:
Anger, Fear, Joy, Sadness, Surprise, Disgust
Your response should be a JSON object with the following format:
{
    \"anger\": bool,
    \"fear\": bool,
    \"joy\": bool,
    \"sadness\": bool,
    \"surprise\": bool,
    \"disgust\": bool
}
Do not give explanations. Just return the JSON object.";

/// The English instruction prompt with the language name filled in.
pub fn system_prompt(language_name: &str) -> String {
    SYSTEM_TEMPLATE.replace("{language}", language_name)
}

/// English display name for the shared-task language codes. Unknown codes
/// are returned unchanged.
pub fn language_name(code: &str) -> &str {
    match code {
        "afr" => "Afrikaans",
        "amh" => "Amharic",
        "arq" => "Algerian Arabic",
        "ary" => "Moroccan Arabic",
        "chn" => "Chinese",
        "deu" => "German",
        "eng" => "English",
        "esp" => "Spanish",
        "hau" => "Hausa",
        "hin" => "Hindi",
        "ibo" => "Igbo",
        "ind" => "Indonesian",
        "jav" => "Javanese",
        "kin" => "Kinyarwanda",
        "mar" => "Marathi",
        "orm" => "Oromo",
        "pcm" => "Nigerian Pidgin",
        "ptbr" => "Brazilian Portuguese",
        "ptmz" => "Mozambican Portuguese",
        "ron" => "Romanian",
        "rus" => "Russian",
        "som" => "Somali",
        "sun" => "Sundanese",
        "swa" => "Swahili",
        "swe" => "Swedish",
        "tat" => "Tatar",
        "tir" => "Tigrinya",
        "ukr" => "Ukrainian",
        "vmw" => "Emakhuwa",
        "xho" => "Xhosa",
        "yor" => "Yoruba",
        "zul" => "isiZulu",
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
}

/// A retrieved example as shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shot {
    pub text: String,
    pub labels: LabelVector,
    /// `labels` rendered as the compact JSON answer object.
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    /// Retrieval rank order, best match first.
    pub shots: Vec<Shot>,
    pub query_text: String,
}

impl PromptBundle {
    /// System message, one user/assistant pair per shot, then the query as
    /// the final user message.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(2 + 2 * self.shots.len());
        out.push(ChatMessage::new(ChatRole::System, &self.system_text));
        for shot in &self.shots {
            out.push(ChatMessage::new(ChatRole::User, &shot.text));
            out.push(ChatMessage::new(ChatRole::Assistant, &shot.answer));
        }
        out.push(ChatMessage::new(ChatRole::User, &self.query_text));
        out
    }
}

/// Pure and deterministic. An empty `shots` list gives a zero-shot prompt.
pub fn build_prompt(language_name: &str, shots: &[(String, LabelVector)], query: &str) -> PromptBundle {
    PromptBundle {
        system_text: system_prompt(language_name),
        shots: shots
            .iter()
            .map(|(text, labels)| Shot {
                text: text.clone(),
                labels: *labels,
                answer: labels.to_json(),
            })
            .collect(),
        query_text: query.to_string(),
    }
}
