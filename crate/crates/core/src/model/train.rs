//! Losses, optimizers and evaluation for the toy model.

use super::forward::{
    backward_cached, forward_cached, project_cached, projector_backward, vision_encode, Grads,
    PreparedModel, ProjectorGrads,
};
use super::state::{Linear, ModelState, Prepared};
use crate::data::{gen_linguistic_batch, CorpusStream, ModalityBatch, Sequence};
use crate::error::{config_err, dim_err, Error, Result};
use crate::numerics::Matrix;

/// Pooled cross-entropy over every supervised position of the batch and its
/// gradients. Embedding gradients are only assembled when requested.
pub fn batch_gradients(
    state: &ModelState,
    prepared: &PreparedModel<'_>,
    batch: &ModalityBatch,
    with_embedding: bool,
) -> Result<(f64, Grads)> {
    let count: usize = batch
        .sequences
        .iter()
        .map(|s| s.targets.iter().flatten().count())
        .sum();
    if count == 0 {
        return config_err("batch has no supervised positions");
    }
    let inv = 1.0 / count as f64;
    let mut grads = Grads::zeros(state, with_embedding);
    let mut nll = 0.0;
    for seq in &batch.sequences {
        let pc = match &seq.image {
            Some(img) => Some(project_cached(&vision_encode(img, state)?, state)?),
            None => None,
        };
        let cache = forward_cached(state, prepared, pc.as_ref().map(|p| &p.output), &seq.tokens)?;
        let off = cache.visual_len;
        let mut dlogits = Matrix::zeros(cache.probs.rows(), cache.probs.cols());
        for (t, target) in seq.targets.iter().enumerate() {
            if let Some(j) = *target {
                let row = off + t;
                nll -= cache.probs[(row, j)].ln();
                for (g, &p) in dlogits.row_mut(row).iter_mut().zip(cache.probs.row(row)) {
                    *g = p * inv;
                }
                dlogits[(row, j)] -= inv;
            }
        }
        let dx = backward_cached(state, prepared, &cache, &dlogits, &mut grads)?;
        if let Some(pc) = &pc {
            projector_backward(state, pc, &dx.slice_rows(0, off), &mut grads.projector)?;
        }
    }
    Ok((nll * inv, grads))
}

/// Pooled loss only.
pub fn batch_loss(state: &ModelState, batch: &ModalityBatch) -> Result<f64> {
    let prepared = state.prepare()?;
    let mut nll = 0.0;
    let mut count = 0usize;
    for seq in &batch.sequences {
        let probs = sequence_probs(state, &prepared, seq)?;
        for (t, target) in seq.targets.iter().enumerate() {
            if let Some(j) = *target {
                nll -= probs[(t, j)].ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        return config_err("batch has no supervised positions");
    }
    Ok(nll / count as f64)
}

/// Distributions at the text positions of `seq` (tokens × vocab).
pub fn sequence_probs(state: &ModelState, prepared: &PreparedModel<'_>, seq: &Sequence) -> Result<Matrix> {
    let visual = match &seq.image {
        Some(img) => Some(project_cached(&vision_encode(img, state)?, state)?.output),
        None => None,
    };
    let cache = forward_cached(state, prepared, visual.as_ref(), &seq.tokens)?;
    Ok(cache.probs.slice_rows(cache.visual_len, cache.probs.rows()))
}

/// Per-linear gradient w.r.t. the learnable scales.
pub fn scale_gradients(state: &ModelState, prepared: &PreparedModel<'_>, grads: &Grads) -> Result<Vec<Vec<f64>>> {
    let views = prepared.blocks.iter().flatten();
    state
        .linears()
        .zip(views)
        .zip(&grads.weights)
        .map(|((l, p), gw)| match (l, p) {
            (Linear::Quant(q), Prepared::Quant(view)) => q.scale_grad_from_weight_grad(gw, view),
            _ => Err(Error::State("backbone is not quantized".into())),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    /// Step size for projector parameters.
    pub lr: f64,
    /// Step size for log-scales.
    pub scale_lr: f64,
    pub momentum: f64,
    /// L2 coefficient on the projector weight matrices.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            scale_lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: 1.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lr) && ok(self.scale_lr) && ok(self.grad_clip) && ok(self.weight_decay)) {
            return config_err("learning rates, weight_decay and grad_clip must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

/// Momentum SGD over the projector and the log-scales of every quantized linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: SgdConfig,
    pub projector_velocity: ProjectorGrads,
    pub scale_velocity: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: SgdConfig, state: &ModelState) -> Result<Self> {
        config.validate()?;
        let zero = Grads::zeros(state, false);
        let scale_velocity = state
            .linears()
            .map(|l| match l {
                Linear::Quant(q) => Ok(vec![0.0; q.scale_count()]),
                Linear::Dense(_) => Err(Error::State("backbone is not quantized".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            projector_velocity: zero.projector,
            scale_velocity,
        })
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn momentum_update(vel: &mut [f64], grad: &[f64], mu: f64, k: f64) {
    for (v, &g) in vel.iter_mut().zip(grad) {
        *v = mu * *v + k * g;
    }
}

fn descend(param: &mut [f64], vel: &[f64], lr: f64) {
    for (p, &v) in param.iter_mut().zip(vel) {
        *p -= lr * v;
    }
}

/// One optimization step on `{s, θ_a}`. Returns the loss before the update;
/// a non-finite loss aborts with [`Error::Diverged`] and leaves `state` untouched.
pub fn train_step(batch: &ModalityBatch, state: &mut ModelState, opt: &mut Optimizer, step: u64) -> Result<f64> {
    if !state.is_quantized() {
        return Err(Error::State("train_step requires a quantized backbone".into()));
    }
    if opt.scale_velocity.len() != state.linears().count() {
        return dim_err("optimizer does not match the model");
    }
    let diverged = |detail: String| Error::Diverged { step, detail };
    let (loss, grads, log_grads) = {
        let prepared = state.prepare()?;
        let (loss, grads) = match batch_gradients(state, &prepared, batch, false) {
            Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
            other => other?,
        };
        let scale_grads = scale_gradients(state, &prepared, &grads)?;
        // d/d(ln s) = s · d/ds
        let log_grads: Vec<Vec<f64>> = state
            .linears()
            .filter_map(Linear::as_quant)
            .zip(scale_grads)
            .map(|(q, g)| q.scales().iter().zip(g).map(|(s, g)| s * g).collect())
            .collect();
        (loss, grads, log_grads)
    };
    if !loss.is_finite() {
        return Err(diverged(format!("loss is {loss}")));
    }
    let pg = &grads.projector;
    let norm_sq = sum_sq(pg.w1.data())
        + sum_sq(&pg.b1)
        + sum_sq(pg.w2.data())
        + sum_sq(&pg.b2)
        + log_grads.iter().map(|g| sum_sq(g)).sum::<f64>();
    if !norm_sq.is_finite() {
        return Err(diverged("non-finite gradient".into()));
    }
    let norm = norm_sq.sqrt();
    let cfg = opt.config;
    let k = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        cfg.grad_clip / norm
    } else {
        1.0
    };

    let mu = cfg.momentum;
    let pv = &mut opt.projector_velocity;
    let pj = &mut state.projector;
    let mut gw1 = pg.w1.clone();
    let mut gw2 = pg.w2.clone();
    if cfg.weight_decay > 0.0 {
        // decay is applied after clipping so it is never rescaled
        gw1.axpy(cfg.weight_decay / k, &pj.w1)?;
        gw2.axpy(cfg.weight_decay / k, &pj.w2)?;
    }
    momentum_update(pv.w1.data_mut(), gw1.data(), mu, k);
    momentum_update(&mut pv.b1, &pg.b1, mu, k);
    momentum_update(pv.w2.data_mut(), gw2.data(), mu, k);
    momentum_update(&mut pv.b2, &pg.b2, mu, k);
    descend(pj.w1.data_mut(), pv.w1.data(), cfg.lr);
    descend(&mut pj.b1, &pv.b1, cfg.lr);
    descend(pj.w2.data_mut(), pv.w2.data(), cfg.lr);
    descend(&mut pj.b2, &pv.b2, cfg.lr);

    for ((q, vel), g) in state
        .linears_mut()
        .filter_map(Linear::as_quant_mut)
        .zip(opt.scale_velocity.iter_mut())
        .zip(&log_grads)
    {
        momentum_update(vel, g, mu, k);
        let delta: Vec<f64> = vel.iter().map(|v| cfg.scale_lr * v).collect();
        q.apply_log_step(&delta).map_err(|e| diverged(format!("scale update: {e}")))?;
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub window: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            window: 32,
            lr: 3e-3,
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = Self::B1 * m[j] + (1.0 - Self::B1) * g[j];
                v[j] = Self::B2 * v[j] + (1.0 - Self::B2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Full-precision language-model pretraining of the backbone weights and
/// token embedding with Adam, standing in for a pretrained LLM. Returns the
/// per-step losses.
pub fn pretrain(state: &mut ModelState, stream: &mut CorpusStream, cfg: &PretrainConfig) -> Result<Vec<f64>> {
    if state.linears().any(|l| matches!(l, Linear::Quant(_))) {
        return Err(Error::State("pretraining requires a full-precision backbone".into()));
    }
    if cfg.window + 1 > state.config.max_seq {
        return Err(Error::Sequence {
            len: cfg.window,
            max: state.config.max_seq,
        });
    }
    let mut sizes: Vec<usize> = state.linears().map(|l| l.weight().data().len()).collect();
    sizes.push(state.embedding.data().len());
    let mut adam = Adam {
        m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        t: 0,
    };
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let batch = gen_linguistic_batch(stream, cfg.window, cfg.batch_size)?;
        let (loss, grads) = {
            let prepared = state.prepare()?;
            batch_gradients(state, &prepared, &batch, true)?
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("pretraining loss is {loss}"),
            });
        }
        losses.push(loss);
        let mut params: Vec<&mut [f64]> = Vec::new();
        for b in state.blocks.iter_mut() {
            for l in b.linears.iter_mut() {
                if let Linear::Dense(w) = l {
                    params.push(w.data_mut());
                }
            }
        }
        params.push(state.embedding.data_mut());
        let mut gs: Vec<&[f64]> = grads.weights.iter().map(Matrix::data).collect();
        let de = grads.embedding.as_ref().expect("embedding gradients requested");
        gs.push(de.data());
        adam.update(params, gs, cfg.lr);
    }
    Ok(losses)
}

/// Anything that yields next-token distributions for a sequence's text positions.
pub trait Predictor {
    fn predict(&self, seq: &Sequence) -> Result<Matrix>;

    fn predict_all(&self, seqs: &[Sequence]) -> Result<Vec<Matrix>> {
        seqs.iter().map(|s| self.predict(s)).collect()
    }
}

impl Predictor for ModelState {
    fn predict(&self, seq: &Sequence) -> Result<Matrix> {
        sequence_probs(self, &self.prepare()?, seq)
    }

    fn predict_all(&self, seqs: &[Sequence]) -> Result<Vec<Matrix>> {
        let prepared = self.prepare()?;
        seqs.iter().map(|s| sequence_probs(self, &prepared, s)).collect()
    }
}

/// Held-out multimodal questions and linguistic windows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub multimodal: Vec<Sequence>,
    pub linguistic: Vec<Sequence>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub perplexity: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy is exact match of the argmax at every supervised position of a
/// multimodal sequence; perplexity is `exp` of the mean linguistic NLL.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, set: &EvalSet) -> Result<EvalMetrics> {
    if set.multimodal.is_empty() || set.linguistic.is_empty() {
        return config_err("evaluation needs both multimodal and linguistic examples");
    }
    let probs = model.predict_all(&set.multimodal)?;
    let mut correct = 0usize;
    for (seq, p) in set.multimodal.iter().zip(&probs) {
        let all = seq
            .targets
            .iter()
            .enumerate()
            .filter_map(|(t, y)| y.map(|y| (t, y)))
            .all(|(t, y)| argmax(p.row(t)) == y);
        correct += usize::from(all);
    }
    let probs = model.predict_all(&set.linguistic)?;
    let mut nll = 0.0;
    let mut count = 0usize;
    for (seq, p) in set.linguistic.iter().zip(&probs) {
        for (t, y) in seq.targets.iter().enumerate() {
            if let Some(y) = *y {
                nll -= p[(t, y)].ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        return config_err("linguistic evaluation set has no targets");
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / set.multimodal.len() as f64,
        perplexity: (nll / count as f64).exp(),
    })
}
