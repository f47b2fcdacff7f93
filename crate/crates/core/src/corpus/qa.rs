use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl;
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

pub const MAX_QUESTION_TOKENS: usize = 128;
pub const MAX_ANSWER_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct QaLoad {
    pub examples: Vec<QaExample>,
    pub dropped: usize,
}

/// Whether an example survives the length filters (bounds inclusive).
pub fn within_limits(ex: &QaExample, tok: &Tokenizer) -> bool {
    tok.encode(&ex.question).len() <= MAX_QUESTION_TOKENS
        && ex
            .answers
            .iter()
            .all(|a| tok.encode(a).len() <= MAX_ANSWER_TOKENS)
}

/// Loads QA JSONL, dropping questions over 128 tokens and examples with any
/// answer over 64 tokens.
pub fn load_qa(path: &Path, tok: &Tokenizer) -> Result<QaLoad> {
    let raw: Vec<QaExample> = jsonl::read(path)?;
    for (i, ex) in raw.iter().enumerate() {
        if ex.answers.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("example `{}` has no answers", ex.id),
            });
        }
    }
    let total = raw.len();
    let examples: Vec<_> = raw.into_iter().filter(|e| within_limits(e, tok)).collect();
    let dropped = total - examples.len();
    if dropped > 0 {
        log::info!("{}: dropped {dropped} of {total} examples over length limits", path.display());
    }
    Ok(QaLoad { examples, dropped })
}
