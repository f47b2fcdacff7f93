//! Prompt assembly, greedy decoding and retrieve-then-generate orchestration.

pub mod generate;
pub mod prompt;
pub mod rag;

pub use generate::{argmax, generate, generate_tokens, Answer, Timing};
pub use prompt::{build_prompt, PromptTemplate};
pub use rag::{rag_answer, ContextSource, GenerationRecord, RagAnswer, RagSystem};
