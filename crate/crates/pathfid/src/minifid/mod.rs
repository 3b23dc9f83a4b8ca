//! A small encoder-decoder trained from scratch on desk-scale corpora,
//! exercising the full loop: block encoding with fusion in the decoder,
//! teacher-forced training, greedy decoding, and sequence parsing back
//! into structured predictions.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{load_model, save_model, CheckpointError};
pub use model::{
    gradient_check, BlockDiagonalMask, FusedRepresentation, GradCheckReport, GradCheckTensor,
    Model, ModelConfig, ModelError, ParamRegistry,
};
pub use pipeline::{decode_corpus, run_pipeline, Mode, PipelineConfig, PipelineError, PipelineOutput};
pub use tokenizer::Tokenizer;
pub use train::{
    candidate_titles, train, Hparams, TargetKind, TracePoint, TrainError, TrainItem, TrainOutcome,
};
