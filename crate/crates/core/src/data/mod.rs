//! Tokenization, synthetic multimodal samples, linguistic corpora and the
//! warmup schedule.

mod batch;
mod corpus;
mod schedule;
mod synth;
pub mod tokenizer;

pub use batch::{gen_multimodal_batch, Modality, ModalityBatch, Sequence};
pub use corpus::{corpus_streams, entropy, gen_linguistic_batch, grammar_unigram, CorpusStream};
pub use schedule::{schedule_modality, Arm, MixRatio, WarmupSchedule};
pub use synth::{
    gen_multimodal_sample, Color, Image, MultimodalSample, Question, Shape, COLORS, IMAGE_SIDE,
    NOISE, SHAPES,
};
pub use tokenizer::{detokenize, tokenize, TokenId, VOCAB_SIZE};
