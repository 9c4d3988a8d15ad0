//! Few-shot prompt assembly and parsing of generator responses.

mod parse;
mod template;

pub use parse::{parse_response, ParseOutcome, ParseStatus};
pub use template::{build_prompt, language_name, system_prompt, ChatMessage, ChatRole, PromptBundle, Shot};
