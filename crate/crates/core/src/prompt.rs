//! Prompt construction for (question, ordered sources).

use alloc::string::String;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::model::{Query, SourceDocument};

/// Opening instruction of every prompt.
pub const INSTRUCTION: &str = "Answer the question using only the information in the numbered \
sources below. Reply with the answer alone, without explanation.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
}

/// Renders the prompt. Sources are numbered from 1 in the given order and
/// each is wrapped in `[BEGIN SOURCE n]` / `[END SOURCE n]` lines.
///
/// Length is measured in chars; anything above `max_context_chars` fails
/// with `ContextTooLarge`.
pub fn build_prompt(
    query: &Query,
    selected: &[&SourceDocument],
    max_context_chars: usize,
) -> Result<PromptText, OracleError> {
    let mut text = String::new();
    text.push_str(INSTRUCTION);
    text.push_str("\n\n");
    for (n, source) in selected.iter().enumerate() {
        let n = n + 1;
        let _ = write!(text, "[BEGIN SOURCE {n}]\n{}\n[END SOURCE {n}]\n\n", source.text);
    }
    let _ = write!(text, "Question: {}\nAnswer:", query.text.trim());

    let len = text.chars().count();
    if len > max_context_chars {
        return Err(OracleError::ContextTooLarge {
            len,
            max: max_context_chars,
        });
    }
    Ok(PromptText { text })
}
