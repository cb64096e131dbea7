//! Natural-language style prompts and their sentence embeddings.

mod backend;
mod cache;
mod caption;

pub use backend::{
    cache_key, canonicalize, encode_prompt, CommandBackend, EncoderBackend, HashBackend, PromptEmbedding,
};
pub use cache::PromptCache;
pub use caption::{build_prompt, Age, Emotion, Gender, StyleCaptionFields};

/// Sentence-embedding width of the reference encoder.
pub const DEFAULT_PROMPT_DIM: usize = 768;
