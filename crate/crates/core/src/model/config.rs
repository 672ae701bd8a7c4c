use crate::data::{IMAGE_SIDE, VOCAB_SIZE};
use crate::error::{config_err, Result};

/// Shapes of the toy multimodal model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab: usize,
    /// Longest visual + text sequence accepted by the decoder.
    pub max_seq: usize,
    pub image_side: usize,
    pub patch_side: usize,
    pub d_vision: usize,
    pub projector_hidden: usize,
    pub group_size: usize,
    pub bits: u8,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            vocab: VOCAB_SIZE,
            max_seq: 64,
            image_side: IMAGE_SIDE,
            patch_side: 2,
            d_vision: 32,
            projector_hidden: 128,
            group_size: 16,
            bits: 4,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Visual tokens per image.
    pub fn patches(&self) -> usize {
        let per_side = self.image_side / self.patch_side;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * 3
    }

    /// (out, in) of every backbone linear, block by block: q, k, v, o, up, down.
    pub fn linear_shapes(&self) -> Vec<(usize, usize)> {
        let (d, f) = (self.d_model, self.d_ff());
        (0..self.n_layers)
            .flat_map(|_| [(d, d), (d, d), (d, d), (d, d), (f, d), (d, f)])
            .collect()
    }

    /// Trainable projector parameters: two weight matrices and two biases.
    pub fn projector_params(&self) -> usize {
        let (v, h, d) = (self.d_vision, self.projector_hidden, self.d_model);
        h * v + h + d * h + d
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
            ("image_side", self.image_side),
            ("patch_side", self.patch_side),
            ("d_vision", self.d_vision),
            ("projector_hidden", self.projector_hidden),
            ("group_size", self.group_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return config_err(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.image_side % self.patch_side != 0 {
            return config_err(format!(
                "image side {} not divisible by patch side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.d_model % self.group_size != 0 || self.d_ff() % self.group_size != 0 {
            return config_err(format!(
                "group size {} must divide d_model {} and d_ff {}",
                self.group_size,
                self.d_model,
                self.d_ff()
            ));
        }
        if !(2..=8).contains(&self.bits) {
            return config_err(format!("bits {} outside 2..=8", self.bits));
        }
        if self.vocab < VOCAB_SIZE {
            return config_err(format!("vocab {} smaller than the tokenizer's {VOCAB_SIZE}", self.vocab));
        }
        if self.patches() >= self.max_seq {
            return config_err("max_seq leaves no room for text after the visual tokens");
        }
        Ok(())
    }
}
