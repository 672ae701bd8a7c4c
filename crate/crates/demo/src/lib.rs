//! Browser bindings: the scale-learned fake quantizer, NF4 against uniform
//! levels, and the warmup data schedule.

use qslaw::data::{Modality, MixRatio, WarmupSchedule};
use qslaw::numerics::Matrix;
use qslaw::quant::{nf4_levels, Nf4Codebook, PackedTensor, QuantParams};
use qslaw::scale_learn::ScaledQuantLinear;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

fn js_err(e: qslaw::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Samples of the fake quantizer for weights spread over [-range, range].
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub weight: Vec<f64>,
    pub effective: Vec<f64>,
    /// Straight-through derivative of the effective weight in the scale.
    pub scale_derivative: Vec<f64>,
}

/// Step size and zero point fitted with clip ratio `clip` to a group spanning [-1, 1].
pub fn unit_params(bits: u8, clip: f64) -> qslaw::Result<QuantParams> {
    let qmax = ((1u32 << bits) - 1) as f64;
    let delta = clip * 2.0 / qmax;
    let zp = qslaw::quant::round_half_away(clip / delta).clamp(0.0, qmax);
    QuantParams::new(delta, zp as u32, bits)
}

pub fn quantizer_curve(bits: u8, clip: f64, scale: f64, range: f64, samples: usize) -> qslaw::Result<Curve> {
    let p = unit_params(bits, clip)?;
    let n = samples.max(2);
    let weight: Vec<f64> = (0..n).map(|i| -range + 2.0 * range * i as f64 / (n - 1) as f64).collect();
    let w = Matrix::from_vec(1, n, weight.clone())?;
    let layer = ScaledQuantLinear::from_parts(w, n, vec![p], vec![scale], None)?;
    let view = layer.quantized_view()?;
    Ok(Curve {
        weight,
        effective: view.effective.into_vec(),
        scale_derivative: view.scale_derivative.into_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodebookComparison {
    pub nf4_levels: Vec<f64>,
    /// Levels of min-max uniform quantization of a group spanning [-1, 1].
    pub uniform_levels: Vec<f64>,
    pub uniform_mse: f64,
    pub nf4_mse: f64,
    /// Fraction of groups where NF4 has the lower error.
    pub nf4_wins: f64,
}

pub fn compare_codebooks(offset: f64, group_size: usize, groups: usize, seed: u64) -> qslaw::Result<CodebookComparison> {
    let codebook = nf4_levels(offset)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::from_fn(groups.max(1), group_size, |_, _| StandardNormal.sample(&mut rng));
    let uniform = PackedTensor::quantize_uniform(&w, group_size, 4, &[1.0])?.dequantize(&codebook)?;
    let nf4 = PackedTensor::quantize_nf4(&w, group_size, &codebook)?.dequantize(&codebook)?;
    let mse = |q: &Matrix, r: usize| {
        w.row(r).iter().zip(q.row(r)).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / group_size as f64
    };
    let (mut u_sum, mut n_sum, mut wins) = (0.0, 0.0, 0usize);
    for r in 0..w.rows() {
        let (u, n) = (mse(&uniform, r), mse(&nf4, r));
        u_sum += u;
        n_sum += n;
        wins += usize::from(n < u);
    }
    let p = unit_params(4, 1.0)?;
    let rows = w.rows() as f64;
    Ok(CodebookComparison {
        nf4_levels: codebook.levels().to_vec(),
        uniform_levels: (0..16).map(|c| p.decode(c)).collect(),
        uniform_mse: u_sum / rows,
        nf4_mse: n_sum / rows,
        nf4_wins: wins as f64 / rows,
    })
}

/// 1 for a multimodal step, 0 for a linguistic one. `eta < 0` never mixes.
pub fn timeline(eta: i64, multimodal: u32, linguistic: u32, steps: u32) -> qslaw::Result<Vec<u8>> {
    let ratio = MixRatio::new(multimodal, linguistic)?;
    let sched = WarmupSchedule::new(u64::try_from(eta).ok(), ratio);
    Ok((0..steps as u64)
        .map(|s| u8::from(sched.modality(s) == Modality::Multimodal))
        .collect())
}

/// Flattened `[w..., w_eff..., d w_eff / d s...]`, each `samples` long.
#[wasm_bindgen(js_name = quantizerCurve)]
pub fn quantizer_curve_js(bits: u8, clip: f64, scale: f64, range: f64, samples: usize) -> Result<Vec<f64>, JsValue> {
    let c = quantizer_curve(bits, clip, scale, range, samples).map_err(js_err)?;
    Ok([c.weight, c.effective, c.scale_derivative].concat())
}

/// `[16 NF4 levels, 16 uniform levels, uniform mse, nf4 mse, nf4 win fraction]`.
#[wasm_bindgen(js_name = compareCodebooks)]
pub fn compare_codebooks_js(offset: f64, group_size: usize, groups: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    let c = compare_codebooks(offset, group_size, groups, seed as u64).map_err(js_err)?;
    let mut out = c.nf4_levels;
    out.extend(c.uniform_levels);
    out.extend([c.uniform_mse, c.nf4_mse, c.nf4_wins]);
    Ok(out)
}

#[wasm_bindgen(js_name = defaultOffset)]
pub fn default_offset_js() -> f64 {
    Nf4Codebook::standard().offset()
}

#[wasm_bindgen(js_name = warmupTimeline)]
pub fn timeline_js(eta: i32, multimodal: u32, linguistic: u32, steps: u32) -> Result<Vec<u8>, JsValue> {
    timeline(eta as i64, multimodal, linguistic, steps).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scale_matches_plain_fake_quant() {
        let c = quantizer_curve(4, 1.0, 1.0, 1.5, 301).unwrap();
        let p = unit_params(4, 1.0).unwrap();
        for (w, e) in c.weight.iter().zip(&c.effective) {
            assert_eq!(*e, p.fake_quant(*w));
        }
        // outside the clip range only the scaled clamp value remains
        let last = c.weight.len() - 1;
        assert_eq!(c.scale_derivative[last], c.effective[last]);
    }

    #[test]
    fn unit_params_cover_the_unit_interval() {
        let p = unit_params(4, 1.0).unwrap();
        assert_eq!((p.delta, p.zp), (2.0 / 15.0, 8));
        assert!(unit_params(4, 0.0).is_err());
    }

    #[test]
    fn codebook_comparison_is_consistent() {
        let c = compare_codebooks(default_offset_js(), 256, 64, 1).unwrap();
        assert_eq!((c.nf4_levels.len(), c.uniform_levels.len()), (16, 16));
        assert_eq!((c.nf4_levels[0], c.nf4_levels[15]), (-1.0, 1.0));
        assert!(c.nf4_wins > 0.8 && c.nf4_mse < c.uniform_mse);
        assert!(compare_codebooks(0.5, 256, 4, 1).is_err());
        assert!(compare_codebooks(0.02, 100, 4, 1).is_ok());
        assert!(compare_codebooks(0.02, 0, 4, 1).is_err());
    }

    #[test]
    fn timelines() {
        assert_eq!(timeline(2, 1, 1, 6).unwrap(), [1, 1, 1, 0, 1, 0]);
        assert_eq!(timeline(-1, 1, 1, 3).unwrap(), [1, 1, 1]);
        assert_eq!(timeline(0, 2, 1, 6).unwrap(), [1, 1, 0, 1, 1, 0]);
        assert!(timeline(0, 0, 1, 3).is_err());
    }
}
