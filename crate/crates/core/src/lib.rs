//! Assertion-scope localization over token sequences.
//!
//! A 1D convolutional network scores a lattice of candidate spans (one prior
//! box per token position and nominal length) with a box confidence trained
//! against span IoU and a per-box class distribution; greedy zero-overlap
//! suppression turns the dense grid into labeled spans.

pub mod config;
pub mod data;
pub mod decode;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objective;
pub mod span;
pub mod train;

pub use config::{ConfigError, RunConfig, CONFIG_KEYS, ENV_PREFIX};
pub use data::{
    generate_corpus, load_corpus_dir, load_embeddings_path, stratified_split, tokenize,
    CorpusSplit, DataError, Document, EmbeddingTable, SplitRatios, SynthConfig, Token,
};
pub use decode::{
    boxes_to_token_labels, decode, nms, read_predictions, write_predictions, DecodeConfig,
    DecodeError, PredictedBox, PredictionRecord, ScoredBox,
};
pub use eval::{
    iou_by_scope_length, macro_f1, scope_length_histogram, span_exact_prf, sweep_gamma,
    token_prf, ClassScore, EvalError, EvalReport, GammaSweepRow, IouBucket, ScopeLengthReport,
};
pub use model::{
    default_stack, extended_stack, receptive_field, LayerSpec, ModelConfig, ModelError,
    PredictionGrids, ScopeModel,
};
pub use nn::{
    derive_seed, gradient_check, load_checkpoint, restore_params, rng_from_seed,
    save_checkpoint, Checkable, Checkpoint, CorruptedGrad, GradCheckReport, NnError, Parameter,
    Tensor,
};
pub use objective::{class_weights, total_loss, ClassWeights, LossBreakdown, WeightScheme};
pub use span::{
    assign_targets, build_prior_lattice, span_iou, AssertionClass, LabeledSpan, PriorBox,
    PriorLattice, SpanError, TargetGrid, TokenSpan,
};
pub use train::{
    format_loss_log, prepare_examples, synthetic_gradcheck_system, train, validate, EpochLog,
    LossSystem, TrainError, TrainOptions, TrainOutcome, GRADCHECK_EPS,
};
