//! Corpus data model, JSONL ingestion, target creation, tokenization,
//! vocabulary construction and training-instance assembly.

mod instances;
mod loader;
mod target;
mod tokenizer;
mod types;
mod vocab;

pub use instances::{make_training_instances, GoldWindow, Instance};
pub use loader::{load_corpus, serialize_corpus, serialize_sample, SchemaMode};
pub use target::{create_target, create_targets, TargetPolicy};
pub use tokenizer::{TokenizeMode, Tokenizer};
pub use types::{DialogueSample, KnowledgeTriple, PlanStep, Role, Turn, UserProfile, NULL_TOPIC};
pub use vocab::{build_vocab, Vocab, RESERVED_TOKENS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("sample `{id}`: {message}")]
    Validation { id: String, message: String },

    #[error("sample `{id}`: no recommendation step, cannot create target")]
    NoRecommendationStep { id: String },

    #[error("sample `{id}`: system turn {turn} is not covered by any plan step")]
    Alignment { id: String, turn: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
