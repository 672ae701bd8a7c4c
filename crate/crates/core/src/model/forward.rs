//! Forward and backward passes of the toy multimodal decoder.
//!
//! Visual tokens `F_I′ = MLP(patches · θ_Iᵀ)` are placed before the text
//! embeddings, sinusoidal positions are added, and the sequence runs through
//! pre-LN causal transformer blocks. The output head is tied to the frozen
//! token embedding.

use super::config::ToyConfig;
use super::state::{Linear, ModelState, Prepared, DOWN, K, O, Q, UP, V};
use crate::data::{Image, TokenId};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn,
    row_softmax, row_softmax_backward, LayerNormCache, Matrix, LAYER_NORM_EPS,
};

/// Amplitude of the sinusoidal position code added to every input row.
pub const POS_SCALE: f64 = 0.3;

/// Effective weights of every backbone linear for one forward/backward round.
pub struct PreparedModel<'a> {
    pub(crate) blocks: Vec<Vec<Prepared<'a>>>,
}

impl ModelState {
    pub fn prepare(&self) -> Result<PreparedModel<'_>> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.linears.iter().map(Linear::prepare).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedModel { blocks })
    }
}

/// Non-overlapping patches, one row each, features ordered (dy, dx, channel).
pub fn image_patches(image: &Image, config: &ToyConfig) -> Result<Matrix> {
    let p = config.patch_side;
    if image.side != config.image_side || image.data.len() != image.side * image.side * 3 {
        return dim_err(format!(
            "image of side {} for a model expecting {}",
            image.side, config.image_side
        ));
    }
    if p == 0 || image.side % p != 0 {
        return dim_err(format!("image side {} not divisible by patch {p}", image.side));
    }
    let per_side = image.side / p;
    let mut out = Matrix::zeros(per_side * per_side, p * p * 3);
    for pr in 0..per_side {
        for pc in 0..per_side {
            let row = out.row_mut(pr * per_side + pc);
            let mut f = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let px = image.pixel(pr * p + dy, pc * p + dx);
                    row[f..f + 3].copy_from_slice(&px);
                    f += 3;
                }
            }
        }
    }
    Ok(out)
}

/// Frozen vision stub: patches times a fixed random matrix (P × d_vision).
pub fn vision_encode(image: &Image, state: &ModelState) -> Result<Matrix> {
    matmul_nt(&image_patches(image, &state.config)?, &state.vision)
}

#[derive(Clone, Debug)]
pub struct ProjectorCache {
    pub features: Matrix,
    pub pre: Matrix,
    pub hidden: Matrix,
    pub output: Matrix,
}

pub fn project_cached(features: &Matrix, state: &ModelState) -> Result<ProjectorCache> {
    let pj = &state.projector;
    if features.cols() != pj.w1.cols() {
        return dim_err(format!(
            "visual features have {} columns, projector expects {}",
            features.cols(),
            pj.w1.cols()
        ));
    }
    let mut pre = matmul_nt(features, &pj.w1)?;
    pre.add_row_vector(&pj.b1)?;
    let hidden = pre.map(gelu);
    let mut output = matmul_nt(&hidden, &pj.w2)?;
    output.add_row_vector(&pj.b2)?;
    Ok(ProjectorCache {
        features: features.clone(),
        pre,
        hidden,
        output,
    })
}

/// Maps visual features into the word-embedding space (P × d_model).
pub fn project(features: &Matrix, state: &ModelState) -> Result<Matrix> {
    Ok(project_cached(features, state)?.output)
}

pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    Matrix::from_fn(len, d, |t, c| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
        POS_SCALE * if c % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    pub input: Matrix,
    ln1: LayerNormCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<Matrix>,
    ctx: Matrix,
    ln2: LayerNormCache,
    m: Matrix,
    u: Matrix,
    z: Matrix,
}

/// Everything the backward pass needs from one sequence.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub visual_len: usize,
    pub tokens: Vec<TokenId>,
    pub blocks: Vec<BlockCache>,
    /// Residual stream after the last block.
    pub output: Matrix,
    final_ln: LayerNormCache,
    normed: Matrix,
    /// Next-token distribution at every position (len × vocab).
    pub probs: Matrix,
}

impl ForwardCache {
    /// Residual stream entering block `i`; `i == n_layers` is the final output.
    pub fn hidden(&self, i: usize) -> &Matrix {
        if i < self.blocks.len() {
            &self.blocks[i].input
        } else {
            &self.output
        }
    }

    pub fn len(&self) -> usize {
        self.visual_len + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn head_slice(m: &Matrix, h: usize, dh: usize) -> Matrix {
    Matrix::from_fn(m.rows(), dh, |r, c| m[(r, h * dh + c)])
}

fn add_head_slice(dst: &mut Matrix, h: usize, dh: usize, src: &Matrix) {
    for r in 0..src.rows() {
        let d = &mut dst.row_mut(r)[h * dh..(h + 1) * dh];
        for (o, &s) in d.iter_mut().zip(src.row(r)) {
            *o += s;
        }
    }
}

/// Row-wise softmax over columns `0..=row`; later columns are exactly zero.
fn causal_softmax(scores: &Matrix) -> Result<Matrix> {
    let n = scores.rows();
    let mut p = Matrix::zeros(n, scores.cols());
    for i in 0..n {
        let visible = Matrix::from_vec(1, i + 1, scores.row(i)[..=i].to_vec())?;
        let sm = row_softmax(&visible)?;
        p.row_mut(i)[..=i].copy_from_slice(sm.row(0));
    }
    Ok(p)
}

fn block_forward(
    state: &ModelState,
    bi: usize,
    w: &[Prepared<'_>],
    x: Matrix,
) -> Result<(Matrix, BlockCache)> {
    let c = &state.config;
    let blk = &state.blocks[bi];
    let (nh, dh) = (c.n_heads, c.head_dim());
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = layer_norm(&x, &blk.ln1_gain, &blk.ln1_bias, LAYER_NORM_EPS)?;
    let q = matmul_nt(&a, w[Q].effective())?;
    let k = matmul_nt(&a, w[K].effective())?;
    let v = matmul_nt(&a, w[V].effective())?;
    let mut ctx = Matrix::zeros(x.rows(), c.d_model);
    let mut attn = Vec::with_capacity(nh);
    for h in 0..nh {
        let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
        let p = causal_softmax(&matmul_nt(&qh, &kh)?.scale(inv_sqrt))?;
        add_head_slice(&mut ctx, h, dh, &matmul(&p, &vh)?);
        attn.push(p);
    }
    let mut h1 = matmul_nt(&ctx, w[O].effective())?;
    h1.add_assign(&x)?;

    let (m, ln2) = layer_norm(&h1, &blk.ln2_gain, &blk.ln2_bias, LAYER_NORM_EPS)?;
    let u = matmul_nt(&m, w[UP].effective())?;
    let z = u.map(gelu);
    let mut out = matmul_nt(&z, w[DOWN].effective())?;
    out.add_assign(&h1)?;

    let cache = BlockCache {
        input: x,
        ln1,
        a,
        q,
        k,
        v,
        attn,
        ctx,
        ln2,
        m,
        u,
        z,
    };
    Ok((out, cache))
}

/// Runs the decoder on `[visual; embed(tokens)]`, keeping activations.
pub fn forward_cached(
    state: &ModelState,
    prepared: &PreparedModel<'_>,
    visual: Option<&Matrix>,
    tokens: &[TokenId],
) -> Result<ForwardCache> {
    let c = &state.config;
    let d = c.d_model;
    let visual_len = visual.map_or(0, Matrix::rows);
    let len = visual_len + tokens.len();
    if len > c.max_seq {
        return Err(Error::Sequence { len, max: c.max_seq });
    }
    if len == 0 {
        return dim_err("empty input sequence");
    }
    if let Some(vis) = visual {
        if vis.cols() != d {
            return dim_err(format!("visual tokens have {} columns, model width is {d}", vis.cols()));
        }
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab) {
        return Err(Error::Index(format!("token {bad} outside vocabulary of {}", c.vocab)));
    }

    let mut x = positional_encoding(len, d);
    if let Some(vis) = visual {
        for r in 0..visual_len {
            for (o, &v) in x.row_mut(r).iter_mut().zip(vis.row(r)) {
                *o += v;
            }
        }
    }
    for (i, &t) in tokens.iter().enumerate() {
        for (o, &e) in x.row_mut(visual_len + i).iter_mut().zip(state.embedding.row(t)) {
            *o += e;
        }
    }

    let mut blocks = Vec::with_capacity(c.n_layers);
    for (bi, w) in prepared.blocks.iter().enumerate() {
        let (next, cache) = block_forward(state, bi, w, x)?;
        blocks.push(cache);
        x = next;
    }
    let (normed, final_ln) = layer_norm(&x, &state.final_gain, &state.final_bias, LAYER_NORM_EPS)?;
    let logits = matmul_nt(&normed, &state.embedding)?;
    let probs = row_softmax(&logits)?;
    Ok(ForwardCache {
        visual_len,
        tokens: tokens.to_vec(),
        blocks,
        output: x,
        final_ln,
        normed,
        probs,
    })
}

/// Next-token distribution (len × vocab) for visual tokens followed by text.
pub fn llm_forward(visual: Option<&Matrix>, tokens: &[TokenId], state: &ModelState) -> Result<Matrix> {
    let prepared = state.prepare()?;
    Ok(forward_cached(state, &prepared, visual, tokens)?.probs)
}

/// Gradients accumulated over a batch.
#[derive(Clone, Debug)]
pub struct Grads {
    /// Gradient w.r.t. each backbone linear's effective weight, block-major.
    pub weights: Vec<Matrix>,
    pub projector: ProjectorGrads,
    /// Only filled when embedding gradients are requested.
    pub embedding: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Grads {
    pub fn zeros(state: &ModelState, with_embedding: bool) -> Self {
        let pj = &state.projector;
        Self {
            weights: state
                .linears()
                .map(|l| {
                    let (r, c) = l.weight().shape();
                    Matrix::zeros(r, c)
                })
                .collect(),
            projector: ProjectorGrads {
                w1: Matrix::zeros(pj.w1.rows(), pj.w1.cols()),
                b1: vec![0.0; pj.b1.len()],
                w2: Matrix::zeros(pj.w2.rows(), pj.w2.cols()),
                b2: vec![0.0; pj.b2.len()],
            },
            embedding: with_embedding.then(|| Matrix::zeros(state.embedding.rows(), state.embedding.cols())),
        }
    }
}

fn accumulate(dst: &mut Matrix, src: &Matrix) -> Result<()> {
    dst.add_assign(src)
}

fn block_backward(
    state: &ModelState,
    bi: usize,
    w: &[Prepared<'_>],
    cache: &BlockCache,
    grad_out: Matrix,
    weight_grads: &mut [Matrix],
) -> Result<Matrix> {
    let c = &state.config;
    let blk = &state.blocks[bi];
    let (nh, dh) = (c.n_heads, c.head_dim());
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    // MLP branch.
    accumulate(&mut weight_grads[DOWN], &matmul_tn(&grad_out, &cache.z)?)?;
    let dz = matmul(&grad_out, w[DOWN].effective())?;
    let du = dz.zip_with(&cache.u, |g, u| g * gelu_grad(u))?;
    accumulate(&mut weight_grads[UP], &matmul_tn(&du, &cache.m)?)?;
    let dm = matmul(&du, w[UP].effective())?;
    let (dh1_ln, _, _) = layer_norm_backward(&cache.ln2, &blk.ln2_gain, &dm)?;
    let mut dh1 = grad_out;
    dh1.add_assign(&dh1_ln)?;

    // Attention branch.
    accumulate(&mut weight_grads[O], &matmul_tn(&dh1, &cache.ctx)?)?;
    let dctx = matmul(&dh1, w[O].effective())?;
    let t = cache.a.rows();
    let mut dq = Matrix::zeros(t, c.d_model);
    let mut dk = Matrix::zeros(t, c.d_model);
    let mut dv = Matrix::zeros(t, c.d_model);
    for h in 0..nh {
        let p = &cache.attn[h];
        let dctx_h = head_slice(&dctx, h, dh);
        let qh = head_slice(&cache.q, h, dh);
        let kh = head_slice(&cache.k, h, dh);
        let vh = head_slice(&cache.v, h, dh);
        let dp = matmul_nt(&dctx_h, &vh)?;
        add_head_slice(&mut dv, h, dh, &matmul_tn(p, &dctx_h)?);
        let ds = row_softmax_backward(p, &dp)?.scale(inv_sqrt);
        add_head_slice(&mut dq, h, dh, &matmul(&ds, &kh)?);
        add_head_slice(&mut dk, h, dh, &matmul_tn(&ds, &qh)?);
    }
    accumulate(&mut weight_grads[Q], &matmul_tn(&dq, &cache.a)?)?;
    accumulate(&mut weight_grads[K], &matmul_tn(&dk, &cache.a)?)?;
    accumulate(&mut weight_grads[V], &matmul_tn(&dv, &cache.a)?)?;
    let mut da = matmul(&dq, w[Q].effective())?;
    da.add_assign(&matmul(&dk, w[K].effective())?)?;
    da.add_assign(&matmul(&dv, w[V].effective())?)?;
    let (dx_ln, _, _) = layer_norm_backward(&cache.ln1, &blk.ln1_gain, &da)?;
    let mut dx = dh1;
    dx.add_assign(&dx_ln)?;
    Ok(dx)
}

/// Backpropagates `grad_logits` (len × vocab) through one cached sequence.
/// Returns the gradient w.r.t. the input rows (visual rows first).
pub fn backward_cached(
    state: &ModelState,
    prepared: &PreparedModel<'_>,
    cache: &ForwardCache,
    grad_logits: &Matrix,
    grads: &mut Grads,
) -> Result<Matrix> {
    if grad_logits.shape() != cache.probs.shape() {
        return dim_err("logit gradient shape mismatch");
    }
    if let Some(de) = grads.embedding.as_mut() {
        de.add_assign(&matmul_tn(grad_logits, &cache.normed)?)?;
    }
    let dnormed = matmul(grad_logits, &state.embedding)?;
    let (mut dx, _, _) = layer_norm_backward(&cache.final_ln, &state.final_gain, &dnormed)?;
    let per_block = prepared.blocks.first().map_or(0, Vec::len);
    for bi in (0..cache.blocks.len()).rev() {
        let wg = &mut grads.weights[bi * per_block..(bi + 1) * per_block];
        dx = block_backward(state, bi, &prepared.blocks[bi], &cache.blocks[bi], dx, wg)?;
    }
    if let Some(de) = grads.embedding.as_mut() {
        for (i, &t) in cache.tokens.iter().enumerate() {
            for (o, &g) in de.row_mut(t).iter_mut().zip(dx.row(cache.visual_len + i)) {
                *o += g;
            }
        }
    }
    Ok(dx)
}

/// Accumulates projector gradients from the gradient w.r.t. its output.
pub fn projector_backward(
    state: &ModelState,
    cache: &ProjectorCache,
    grad_out: &Matrix,
    grads: &mut ProjectorGrads,
) -> Result<()> {
    accumulate(&mut grads.w2, &matmul_tn(grad_out, &cache.hidden)?)?;
    for (b, g) in grads.b2.iter_mut().zip(grad_out.column_sums()) {
        *b += g;
    }
    let dhidden = matmul(grad_out, &state.projector.w2)?;
    let dpre = dhidden.zip_with(&cache.pre, |g, p| g * gelu_grad(p))?;
    accumulate(&mut grads.w1, &matmul_tn(&dpre, &cache.features)?)?;
    for (b, g) in grads.b1.iter_mut().zip(dpre.column_sums()) {
        *b += g;
    }
    Ok(())
}
