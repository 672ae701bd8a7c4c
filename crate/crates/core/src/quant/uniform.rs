use crate::error::{config_err, Result};

/// Step size used for groups whose values are all equal.
pub const CONSTANT_GROUP_DELTA: f64 = 1e-8;

/// Clip ratios searched by default when initializing step size and zero point.
pub const DEFAULT_CLIP_GRID: [f64; 11] = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5];

/// Rounds to the nearest integer, ties away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Step size, zero point and bit width of one quantization group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub delta: f64,
    pub zp: u32,
    pub bits: u8,
}

impl QuantParams {
    pub fn new(delta: f64, zp: u32, bits: u8) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return config_err(format!("bit width {bits} outside 2..=8"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return config_err(format!("step size {delta} must be positive and finite"));
        }
        let p = Self { delta, zp, bits };
        if zp > p.qmax() {
            return config_err(format!("zero point {zp} outside 0..={}", p.qmax()));
        }
        Ok(p)
    }

    /// Largest code, `2^k - 1`.
    #[inline]
    pub fn qmax(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Returns the clamped code and whether the unclamped code was in range.
    #[inline]
    pub fn encode(&self, w: f64) -> (u8, bool) {
        let q = round_half_away(w / self.delta) + self.zp as f64;
        let qmax = self.qmax() as f64;
        let in_range = (0.0..=qmax).contains(&q);
        (q.clamp(0.0, qmax) as u8, in_range)
    }

    #[inline]
    pub fn decode(&self, code: u8) -> f64 {
        self.delta * (code as f64 - self.zp as f64)
    }

    /// Quantize-dequantize a single value.
    #[inline]
    pub fn fake_quant(&self, w: f64) -> f64 {
        self.decode(self.encode(w).0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FakeQuant {
    pub values: Vec<f64>,
    pub codes: Vec<u8>,
    /// Whether each element's code landed in `[0, 2^k - 1]` before clamping.
    pub in_range: Vec<bool>,
}

pub fn uniform_fakequant(group: &[f64], p: &QuantParams) -> FakeQuant {
    let mut out = FakeQuant {
        values: Vec::with_capacity(group.len()),
        codes: Vec::with_capacity(group.len()),
        in_range: Vec::with_capacity(group.len()),
    };
    for &w in group {
        let (code, ok) = p.encode(w);
        out.values.push(p.decode(code));
        out.codes.push(code);
        out.in_range.push(ok);
    }
    out
}

/// Picks step size and zero point by searching clip ratios `alpha`, keeping
/// the one with the lowest mean squared dequantization error. Ties go to the
/// larger ratio.
pub fn init_uniform_params(group: &[f64], bits: u8, clip_grid: &[f64]) -> Result<QuantParams> {
    if group.is_empty() {
        return config_err("cannot initialize quantization for an empty group");
    }
    if clip_grid.is_empty() {
        return config_err("clip grid is empty");
    }
    if let Some(a) = clip_grid.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        return config_err(format!("clip ratio {a} outside (0, 1]"));
    }
    let (min, max) = group
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(min.is_finite() && max.is_finite()) {
        return config_err("group contains non-finite weights");
    }
    if max == min {
        return QuantParams::new(CONSTANT_GROUP_DELTA, 0, bits);
    }
    let qmax = ((1u32 << bits) - 1) as f64;
    let mut best: Option<(f64, f64, QuantParams)> = None;
    for &alpha in clip_grid {
        let delta = alpha * (max - min) / qmax;
        let zp = round_half_away(-alpha * min / delta).clamp(0.0, qmax) as u32;
        let p = QuantParams::new(delta, zp, bits)?;
        let mse = group
            .iter()
            .map(|&w| {
                let e = p.fake_quant(w) - w;
                e * e
            })
            .sum::<f64>()
            / group.len() as f64;
        let better = match best {
            None => true,
            Some((best_mse, best_alpha, _)) => {
                mse < best_mse || (mse == best_mse && alpha > best_alpha)
            }
        };
        if better {
            best = Some((mse, alpha, p));
        }
    }
    Ok(best.expect("grid is non-empty").2)
}
