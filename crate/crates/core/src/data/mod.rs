//! Corpus ingestion, embeddings, splitting, and the synthetic generator.

pub mod brat;
pub mod embed;
pub mod split;
pub mod synth;
pub mod tokenize;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {message}")]
    BadAnnotation {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: unknown class name {name:?}")]
    UnknownClass {
        file: String,
        line: usize,
        name: String,
    },
    #[error("{file}:{line}: discontinuous annotation (multi-fragment offsets) is not supported")]
    Discontinuous { file: String, line: usize },
    #[error("{file}:{line}: surface mismatch: annotation says {cited:?}, text has {actual:?}")]
    SurfaceMismatch {
        file: String,
        line: usize,
        cited: String,
        actual: String,
    },
    #[error("{file}:{line}: expected {expected} vector components, found {found}")]
    DimensionMismatch {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}: {message}")]
    BadFormat { file: String, message: String },
    #[error("cannot embed an empty token sequence")]
    EmptySequence,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),
    #[error("need at least {needed} documents to form {needed} splits, got {got}")]
    TooFewDocuments { needed: usize, got: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Span(#[from] crate::span::SpanError),
}

pub use brat::{load_corpus_dir, parse_brat, serialize_brat, Document};
pub use embed::{load_embeddings, load_embeddings_path, write_embeddings, EmbeddingTable};
pub use split::{stratified_split, write_manifest, CorpusSplit, SplitRatios};
pub use synth::{generate_corpus, SynthConfig, SynthCorpus};
pub use tokenize::{tokenize, Token};
