use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ToyConfig;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::quant::DEFAULT_CLIP_GRID;
use crate::scale_learn::{QuantizedView, ScaledQuantLinear};

pub const Q: usize = 0;
pub const K: usize = 1;
pub const V: usize = 2;
pub const O: usize = 3;
pub const UP: usize = 4;
pub const DOWN: usize = 5;
pub const LINEARS_PER_BLOCK: usize = 6;

/// Standard deviation of the token embedding table at initialization.
pub const EMBED_STD: f64 = 0.3;

/// A backbone projection: full precision before quantization, scale-learned after.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    Dense(Matrix),
    Quant(ScaledQuantLinear),
}

/// Weights of one linear as seen by a forward pass.
#[derive(Debug)]
pub enum Prepared<'a> {
    Dense(&'a Matrix),
    Quant(QuantizedView),
}

impl Prepared<'_> {
    pub fn effective(&self) -> &Matrix {
        match self {
            Prepared::Dense(w) => w,
            Prepared::Quant(v) => &v.effective,
        }
    }
}

impl Linear {
    /// Full-precision weight (out × in).
    pub fn weight(&self) -> &Matrix {
        match self {
            Linear::Dense(w) => w,
            Linear::Quant(q) => q.weight(),
        }
    }

    pub fn prepare(&self) -> Result<Prepared<'_>> {
        Ok(match self {
            Linear::Dense(w) => Prepared::Dense(w),
            Linear::Quant(q) => Prepared::Quant(q.quantized_view()?),
        })
    }

    pub fn as_quant(&self) -> Option<&ScaledQuantLinear> {
        match self {
            Linear::Quant(q) => Some(q),
            Linear::Dense(_) => None,
        }
    }

    pub fn as_quant_mut(&mut self) -> Option<&mut ScaledQuantLinear> {
        match self {
            Linear::Quant(q) => Some(q),
            Linear::Dense(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// q, k, v, o, up, down.
    pub linears: Vec<Linear>,
}

/// Two-layer GELU MLP mapping visual features into the embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ToyConfig,
    /// Frozen patch projection (d_vision × patch_dim), no bias.
    pub vision: Matrix,
    pub projector: Projector,
    /// Token embedding (vocab × d_model), also the output head.
    pub embedding: Matrix,
    pub blocks: Vec<Block>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl ModelState {
    /// Seeded full-precision initialization. Each component draws from its
    /// own stream so changing one shape leaves the others untouched.
    pub fn init(config: &ToyConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (d, f) = (c.d_model, c.d_ff());
        let seed = c.seed;

        let vision = gaussian(c.d_vision, c.patch_dim(), (1.0 / c.patch_dim() as f64).sqrt(), &mut stream(seed, 1));
        let mut prng = stream(seed, 2);
        let projector = Projector {
            w1: gaussian(c.projector_hidden, c.d_vision, (1.0 / c.d_vision as f64).sqrt(), &mut prng),
            b1: vec![0.0; c.projector_hidden],
            w2: gaussian(d, c.projector_hidden, (1.0 / c.projector_hidden as f64).sqrt(), &mut prng),
            b2: vec![0.0; d],
        };
        let embedding = gaussian(c.vocab, d, EMBED_STD, &mut stream(seed, 3));

        let mut brng = stream(seed, 4);
        let residual = (1.0 / (2.0 * c.n_layers as f64)).sqrt();
        let blocks = (0..c.n_layers)
            .map(|_| {
                let std_d = (1.0 / d as f64).sqrt();
                let std_f = (1.0 / f as f64).sqrt();
                let linears = vec![
                    Linear::Dense(gaussian(d, d, std_d, &mut brng)),
                    Linear::Dense(gaussian(d, d, std_d, &mut brng)),
                    Linear::Dense(gaussian(d, d, std_d, &mut brng)),
                    Linear::Dense(gaussian(d, d, std_d * residual, &mut brng)),
                    Linear::Dense(gaussian(f, d, std_d, &mut brng)),
                    Linear::Dense(gaussian(d, f, std_f * residual, &mut brng)),
                ];
                Block {
                    ln1_gain: vec![1.0; d],
                    ln1_bias: vec![0.0; d],
                    ln2_gain: vec![1.0; d],
                    ln2_bias: vec![0.0; d],
                    linears,
                }
            })
            .collect();

        Ok(Self {
            config: c.clone(),
            vision,
            projector,
            embedding,
            blocks,
            final_gain: vec![1.0; d],
            final_bias: vec![0.0; d],
        })
    }

    pub fn is_quantized(&self) -> bool {
        self.linears().all(|l| matches!(l, Linear::Quant(_)))
    }

    pub fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.blocks.iter().flat_map(|b| b.linears.iter())
    }

    pub fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.blocks.iter_mut().flat_map(|b| b.linears.iter_mut())
    }

    /// Replaces every dense backbone linear by a scale-learned quantized one
    /// (scales 1, step sizes from clip-ratio search).
    pub fn quantize_backbone(&mut self, clip_grid: &[f64]) -> Result<()> {
        let (g, k) = (self.config.group_size, self.config.bits);
        for l in self.linears_mut() {
            if let Linear::Dense(w) = l {
                *l = Linear::Quant(ScaledQuantLinear::new(w.clone(), g, k, clip_grid, None)?);
            }
        }
        Ok(())
    }

    pub fn quantize_backbone_default(&mut self) -> Result<()> {
        self.quantize_backbone(&DEFAULT_CLIP_GRID)
    }

    /// Number of learnable scales plus projector parameters.
    pub fn trainable_params(&self) -> Result<usize> {
        if !self.is_quantized() {
            return Err(Error::State("backbone is not quantized".into()));
        }
        let scales: usize = self.linears().filter_map(Linear::as_quant).map(|q| q.scale_count()).sum();
        Ok(scales + self.config.projector_params())
    }
}
