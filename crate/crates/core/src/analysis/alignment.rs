//! Block-wise cosine similarity between visual and text hidden states.

use crate::data::{Modality, ModalityBatch};
use crate::error::{config_err, dim_err, Result};
use crate::model::{forward_cached, project_cached, vision_encode, ModelState};
use crate::numerics::{dot, Matrix};

/// Cosine of two vectors; 0 when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Sum of cosines over every (visual row, text row) pair, and the pair count.
pub fn cross_cosine_sum(visual: &Matrix, text: &Matrix) -> Result<(f64, usize)> {
    if visual.cols() != text.cols() {
        return dim_err("visual and text states differ in width");
    }
    if visual.rows() == 0 || text.rows() == 0 {
        return config_err("alignment needs both visual and text tokens");
    }
    let mut sum = 0.0;
    for i in 0..visual.rows() {
        for j in 0..text.rows() {
            sum += cosine(visual.row(i), text.row(j));
        }
    }
    Ok((sum, visual.rows() * text.rows()))
}

pub fn mean_cross_cosine(visual: &Matrix, text: &Matrix) -> Result<f64> {
    let (s, n) = cross_cosine_sum(visual, text)?;
    Ok(s / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentProfile {
    /// Mean visual–text cosine at the output of each block.
    pub blocks: Vec<f64>,
}

impl AlignmentProfile {
    pub fn mean(&self) -> f64 {
        self.blocks.iter().sum::<f64>() / self.blocks.len() as f64
    }
}

/// Pairs are formed within each sequence and pooled over the batch.
pub fn alignment_profile(state: &ModelState, batch: &ModalityBatch) -> Result<AlignmentProfile> {
    if batch.modality != Modality::Multimodal {
        return config_err("alignment needs a multimodal batch");
    }
    let prepared = state.prepare()?;
    let n = state.config.n_layers;
    let mut sums = vec![0.0; n];
    let mut pairs = 0usize;
    for seq in &batch.sequences {
        let img = seq.image.as_ref().expect("multimodal sequences carry images");
        let visual = project_cached(&vision_encode(img, state)?, state)?.output;
        let cache = forward_cached(state, &prepared, Some(&visual), &seq.tokens)?;
        let p = cache.visual_len;
        let mut count = 0;
        for (b, s) in sums.iter_mut().enumerate() {
            let h = cache.hidden(b + 1);
            let (sum, c) = cross_cosine_sum(&h.slice_rows(0, p), &h.slice_rows(p, h.rows()))?;
            *s += sum;
            count = c;
        }
        pairs += count;
    }
    Ok(AlignmentProfile {
        blocks: sums.iter().map(|s| s / pairs as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal() {
        assert_eq!(cosine(&[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 5.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn known_angles() {
        let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        let visual = Matrix::from_rows(&[at(0.0), at(90.0)]).unwrap();
        let text = Matrix::from_rows(&[at(30.0), at(180.0)]).unwrap();
        // pairs: 30°, 180°, 60°, 90°
        let expected = (30f64.to_radians().cos() - 1.0 + 60f64.to_radians().cos() + 0.0) / 4.0;
        let got = mean_cross_cosine(&visual, &text).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn missing_modality_is_rejected() {
        let v = Matrix::zeros(2, 3);
        assert!(mean_cross_cosine(&v, &Matrix::zeros(0, 3)).is_err());
    }
}
