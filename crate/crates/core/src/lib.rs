//! Quantization-aware scale learning for a toy multimodal language model.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense matrices and kernels with explicit backward passes
//! - [`quant`]: grouping, NF4 and uniform quantizers, nibble packing, packed files
//! - [`scale_learn`]: frozen quantized linear layers with learnable group scales
//! - [`model`]: a miniature vision-language model built from those layers
//! - [`data`]: synthetic data, tokenization and the modality warmup schedule
//! - [`analysis`]: activation-outlier and cross-modal alignment statistics
//! - [`harness`]: run configuration, checkpoints and the experiment driver

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod quant;
pub mod scale_learn;

pub use error::{Error, Result};
