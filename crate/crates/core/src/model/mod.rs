//! Toy multimodal model: frozen vision stub, trainable projector, and a
//! small causal decoder whose linears are scale-learned quantized layers.

mod config;
mod forward;
mod state;
mod train;

pub use config::ToyConfig;
pub use forward::{
    backward_cached, forward_cached, image_patches, llm_forward, positional_encoding, project,
    project_cached, projector_backward, vision_encode, BlockCache, ForwardCache, Grads,
    PreparedModel, ProjectorCache, ProjectorGrads, POS_SCALE,
};
pub use state::{
    Block, Linear, ModelState, Prepared, Projector, DOWN, EMBED_STD, K, LINEARS_PER_BLOCK, O, Q,
    UP, V,
};
pub use train::{
    batch_gradients, batch_loss, evaluate, pretrain, scale_gradients, sequence_probs, train_step,
    EvalMetrics, EvalSet, Optimizer, PretrainConfig, Predictor, SgdConfig,
};
