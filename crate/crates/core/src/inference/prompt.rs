use serde::{Deserialize, Serialize};

use crate::compression::MultiContextInput;
use crate::corpus::{Specials, TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{Item, MixedSequence};

/// Instruction text wrapped around the question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplate {
    pub prefix: String,
    pub suffix: String,
    pub max_new_tokens: usize,
    pub stop_at_eos: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            prefix: "Question: ".into(),
            suffix: "\nAnswer:".into(),
            max_new_tokens: 64,
            stop_at_eos: true,
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, question: &str) -> String {
        format!("{}{}{}", self.prefix, question, self.suffix)
    }

    pub fn instruction_tokens(&self, tok: &Tokenizer, question: &str) -> Vec<TokenId> {
        tok.encode(&self.render(question))
    }

    /// Supervised answer tokens, separated from the instruction by a space.
    pub fn response_tokens(&self, tok: &Tokenizer, answer: &str) -> Vec<TokenId> {
        tok.encode(&format!(" {answer}"))
    }
}

/// Raw token contexts flattened with `[SEP]` between them, for the
/// uncompressed baseline.
pub fn raw_context_items<T>(contexts: &[&[TokenId]]) -> MixedSequence<T> {
    let mut items = Vec::new();
    for (i, c) in contexts.iter().enumerate() {
        if i > 0 {
            items.push(Item::Token(Specials::SEP));
        }
        items.extend(c.iter().map(|&t| Item::Token(t)));
    }
    items
}

/// `BOS ‖ context items ‖ instruction`.
pub fn prompt_items<T: Clone>(context: &[Item<T>], instruction: &[TokenId]) -> MixedSequence<T> {
    let mut items = Vec::with_capacity(1 + context.len() + instruction.len());
    items.push(Item::Token(Specials::BOS));
    items.extend_from_slice(context);
    items.extend(instruction.iter().map(|&t| Item::Token(t)));
    items
}

/// Generation prompt from compressed contexts (or none, closed book). The
/// prompt plus `max_new_tokens` must fit the decoder.
pub fn build_prompt<T: Clone>(
    multi: Option<&MultiContextInput<T>>,
    question: &str,
    template: &PromptTemplate,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<MixedSequence<T>> {
    let ctx: &[Item<T>] = multi.map(|m| m.items.as_slice()).unwrap_or(&[]);
    let items = prompt_items(ctx, &template.instruction_tokens(tok, question));
    check_fits(items.len(), template, max_len)?;
    Ok(items)
}

pub(crate) fn check_fits(len: usize, template: &PromptTemplate, max_len: usize) -> Result<()> {
    if len + template.max_new_tokens > max_len {
        return Err(Error::LengthOverflow {
            len: len + template.max_new_tokens,
            max: max_len,
        });
    }
    Ok(())
}
