//! Relative activation-outlier statistics.
//!
//! An element is an outlier when `|x| ≥ κ · median(|X|)`, the median taken
//! over every element. When the median is zero the mean of `|X|` is used
//! instead; an all-zero tensor has no outliers.

use crate::data::{Modality, ModalityBatch};
use crate::error::{config_err, Result};
use crate::model::{forward_cached, project_cached, vision_encode, ModelState};
use crate::numerics::Matrix;

pub const DEFAULT_KAPPA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    /// Block whose input was measured, when captured from the model.
    pub layer: Option<usize>,
    pub modality: Option<Modality>,
    pub kappa: f64,
    pub threshold: f64,
    /// Fraction of outlier elements.
    pub density: f64,
    /// Per channel, fraction of tokens where that channel is an outlier.
    pub channel_frequency: Vec<f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn outlier_stats(x: &Matrix, kappa: f64) -> Result<ActivationStats> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return config_err(format!("kappa must be positive, got {kappa}"));
    }
    if x.data().is_empty() {
        return config_err("outlier statistics of an empty tensor");
    }
    if !x.all_finite() {
        return config_err("activation tensor contains non-finite values");
    }
    let mut mags: Vec<f64> = x.data().iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let mut reference = median(&mags);
    if reference == 0.0 {
        reference = mags.iter().sum::<f64>() / mags.len() as f64;
    }
    let threshold = kappa * reference;
    let (rows, cols) = x.shape();
    let mut per_channel = vec![0usize; cols];
    let mut total = 0usize;
    if threshold > 0.0 {
        for r in 0..rows {
            for (c, v) in x.row(r).iter().enumerate() {
                if v.abs() >= threshold {
                    per_channel[c] += 1;
                    total += 1;
                }
            }
        }
    }
    Ok(ActivationStats {
        layer: None,
        modality: None,
        kappa,
        threshold,
        density: total as f64 / (rows * cols) as f64,
        channel_frequency: per_channel.iter().map(|&n| n as f64 / rows as f64).collect(),
    })
}

/// Residual-stream rows entering each requested block, stacked over the batch.
pub fn capture_block_inputs(state: &ModelState, batch: &ModalityBatch, layers: &[usize]) -> Result<Vec<Matrix>> {
    let n = state.config.n_layers;
    if let Some(&bad) = layers.iter().find(|&&l| l >= n) {
        return config_err(format!("layer {bad} does not exist; the model has {n} blocks"));
    }
    let prepared = state.prepare()?;
    let mut out: Vec<Option<Matrix>> = vec![None; layers.len()];
    for seq in &batch.sequences {
        let visual = match &seq.image {
            Some(img) => Some(project_cached(&vision_encode(img, state)?, state)?.output),
            None => None,
        };
        let cache = forward_cached(state, &prepared, visual.as_ref(), &seq.tokens)?;
        for (slot, &l) in out.iter_mut().zip(layers) {
            let h = cache.hidden(l);
            *slot = Some(match slot.take() {
                Some(acc) => acc.vstack(h)?,
                None => h.clone(),
            });
        }
    }
    Ok(out.into_iter().map(|m| m.expect("batches are non-empty")).collect())
}

/// Paired statistics from already captured activations: for each layer, the
/// multimodal row then the text row.
pub fn compare_activations(
    layers: &[usize],
    multimodal: &[Matrix],
    text: &[Matrix],
    kappa: f64,
) -> Result<Vec<ActivationStats>> {
    if multimodal.len() != layers.len() || text.len() != layers.len() {
        return config_err("one activation tensor per layer and modality required");
    }
    let mut rows = Vec::with_capacity(2 * layers.len());
    for (i, &l) in layers.iter().enumerate() {
        for (x, m) in [(&multimodal[i], Modality::Multimodal), (&text[i], Modality::Linguistic)] {
            let mut s = outlier_stats(x, kappa)?;
            s.layer = Some(l);
            s.modality = Some(m);
            rows.push(s);
        }
    }
    Ok(rows)
}

/// Outlier statistics of block inputs on a multimodal and a text-only batch.
pub fn compare_modalities(
    state: &ModelState,
    multimodal: &ModalityBatch,
    text: &ModalityBatch,
    layers: &[usize],
    kappa: f64,
) -> Result<Vec<ActivationStats>> {
    if multimodal.modality != Modality::Multimodal || text.modality != Modality::Linguistic {
        return config_err("compare_modalities expects a multimodal and a text-only batch");
    }
    if layers.is_empty() {
        return config_err("no layers selected");
    }
    let mm = capture_block_inputs(state, multimodal, layers)?;
    let tx = capture_block_inputs(state, text, layers)?;
    compare_activations(layers, &mm, &tx, kappa)
}
