//! 4-bit NormalFloat codebook.
//!
//! Levels are midpoints of adjacent standard-normal quantiles taken on a
//! 17-point probability grid spread evenly over `[eps, 1 - eps]`, then
//! rescaled so the outermost level sits at ±1. Clamping the grid away from
//! 0 and 1 keeps the endpoint quantiles finite. The symmetric grid makes the
//! codebook antisymmetric: `levels[i] == -levels[15 - i]`.

use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config_err, Result};

/// Upper bound on the grid offset; at this value the grid is `(2j + 1) / 34`.
pub const MAX_OFFSET: f64 = 1.0 / 34.0;

const LEVELS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Nf4Codebook {
    levels: [f64; LEVELS],
    boundaries: [f64; LEVELS - 1],
    gaussian_scale: f64,
    offset: f64,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Levels before rescaling, in units of the standard deviation.
fn raw_levels(offset: f64) -> [f64; LEVELS] {
    let normal = standard_normal();
    let step = (1.0 - 2.0 * offset) / LEVELS as f64;
    let quantiles: Vec<f64> = (0..=LEVELS)
        .map(|j| normal.inverse_cdf(offset + j as f64 * step))
        .collect();
    let mut levels = [0.0; LEVELS];
    for (i, l) in levels.iter_mut().enumerate() {
        *l = 0.5 * (quantiles[i] + quantiles[i + 1]);
    }
    // Exact antisymmetry; the two halves come from independent quantile calls.
    for i in 0..LEVELS / 2 {
        let m = 0.5 * (levels[LEVELS - 1 - i] - levels[i]);
        levels[i] = -m;
        levels[LEVELS - 1 - i] = m;
    }
    levels
}

/// Largest deviation from 1/16 of the Gaussian mass captured by any
/// nearest-level cell.
fn bin_mass_deviation(offset: f64) -> f64 {
    let normal = standard_normal();
    let levels = raw_levels(offset);
    let mut prev = 0.0;
    let mut worst: f64 = 0.0;
    for i in 0..LEVELS {
        let cdf = if i + 1 < LEVELS {
            normal.cdf(0.5 * (levels[i] + levels[i + 1]))
        } else {
            1.0
        };
        worst = worst.max((cdf - prev - 1.0 / LEVELS as f64).abs());
        prev = cdf;
    }
    worst
}

/// The grid offset that equalizes Gaussian mass across the 16 cells as
/// closely as possible (minimax), found by golden-section search.
pub fn default_offset() -> f64 {
    static OFFSET: OnceLock<f64> = OnceLock::new();
    *OFFSET.get_or_init(|| {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (1e-3, MAX_OFFSET);
        let mut a = hi - inv_phi * (hi - lo);
        let mut b = lo + inv_phi * (hi - lo);
        let (mut fa, mut fb) = (bin_mass_deviation(a), bin_mass_deviation(b));
        for _ in 0..80 {
            if fa <= fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - inv_phi * (hi - lo);
                fa = bin_mass_deviation(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + inv_phi * (hi - lo);
                fb = bin_mass_deviation(b);
            }
        }
        0.5 * (lo + hi)
    })
}

pub fn nf4_levels(offset_eps: f64) -> Result<Nf4Codebook> {
    if !(offset_eps > 0.0 && offset_eps <= MAX_OFFSET) {
        return config_err(format!(
            "NF4 quantile offset {offset_eps} outside (0, 1/34]"
        ));
    }
    let raw = raw_levels(offset_eps);
    let gaussian_scale = raw[LEVELS - 1];
    let mut levels = [0.0; LEVELS];
    for (l, r) in levels.iter_mut().zip(raw) {
        *l = r / gaussian_scale;
    }
    levels[0] = -1.0;
    levels[LEVELS - 1] = 1.0;
    let mut boundaries = [0.0; LEVELS - 1];
    for (i, b) in boundaries.iter_mut().enumerate() {
        *b = 0.5 * (levels[i] + levels[i + 1]);
    }
    Ok(Nf4Codebook {
        levels,
        boundaries,
        gaussian_scale,
        offset: offset_eps,
    })
}

impl Nf4Codebook {
    /// The codebook at [`default_offset`].
    pub fn standard() -> &'static Nf4Codebook {
        static CB: OnceLock<Nf4Codebook> = OnceLock::new();
        CB.get_or_init(|| nf4_levels(default_offset()).expect("default offset is in range"))
    }

    pub fn levels(&self) -> &[f64; LEVELS] {
        &self.levels
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Outermost level in standard-deviation units before rescaling. Dividing
    /// N(0, 1) samples by this maps them onto the normalized codebook.
    pub fn gaussian_scale(&self) -> f64 {
        self.gaussian_scale
    }

    /// Index of the nearest level; a value exactly between two levels takes
    /// the lower index.
    #[inline]
    pub fn nearest(&self, v: f64) -> u8 {
        self.boundaries.partition_point(|&b| v > b) as u8
    }

    #[inline]
    pub fn level(&self, code: u8) -> f64 {
        self.levels[code as usize & 0x0F]
    }
}

/// Absmax-normalizes `group` and maps each value to its nearest level.
/// An all-zero group uses absmax 1.
pub fn nf4_quantize(group: &[f64], codebook: &Nf4Codebook) -> Result<(Vec<u8>, f64)> {
    if group.is_empty() {
        return config_err("cannot quantize an empty group");
    }
    let mut absmax = group.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if absmax == 0.0 {
        absmax = 1.0;
    }
    let codes = group.iter().map(|&v| codebook.nearest(v / absmax)).collect();
    Ok((codes, absmax))
}

pub fn nf4_dequantize(codes: &[u8], absmax: f64, codebook: &Nf4Codebook) -> Vec<f64> {
    codes.iter().map(|&c| codebook.level(c) * absmax).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::function::erf::erf;

    // Independent inverse CDF: bisection on Φ(x) = (1 + erf(x/√2)) / 2.
    fn quantile_by_bisection(p: f64) -> f64 {
        let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn oracle_levels(offset: f64) -> [f64; 16] {
        let q: Vec<f64> = (0..=16)
            .map(|j| quantile_by_bisection(offset + j as f64 * (1.0 - 2.0 * offset) / 16.0))
            .collect();
        let mut l = [0.0; 16];
        for i in 0..16 {
            l[i] = 0.5 * (q[i] + q[i + 1]);
        }
        let top = l[15];
        l.map(|v| v / top)
    }

    #[test]
    fn level_table_matches_bisection_oracle() {
        for offset in [MAX_OFFSET, default_offset(), 0.01] {
            let cb = nf4_levels(offset).unwrap();
            let oracle = oracle_levels(offset);
            for (a, b) in cb.levels().iter().zip(oracle) {
                assert!((a - b).abs() < 1e-9, "offset {offset}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn reference_table_at_max_offset() {
        // Frozen from the bisection oracle at eps = 1/34 (grid (2j+1)/34).
        let expected = [
            -1.0,
            -0.740_720_906_116_241_1,
            -0.576_921_031_626_375,
            -0.447_269_791_791_617_6,
            -0.335_293_119_208_960_5,
            -0.233_603_600_966_474_8,
            -0.138_002_078_406_054_7,
            -0.045_657_951_587_921_7,
            0.045_657_951_587_921_6,
            0.138_002_078_406_054_5,
            0.233_603_600_966_474_6,
            0.335_293_119_208_960_3,
            0.447_269_791_791_617_4,
            0.576_921_031_626_374_9,
            0.740_720_906_116_241,
            1.0,
        ];
        let cb = nf4_levels(MAX_OFFSET).unwrap();
        for (i, (&a, e)) in cb.levels().iter().zip(expected).enumerate() {
            assert!((a - e).abs() < 1e-9, "level {i}: {a} vs {e}");
        }
        assert!((cb.gaussian_scale() - 1.620_606_100_132_045).abs() < 1e-9);
    }

    #[test]
    fn sixteen_strictly_increasing_symmetric_levels() {
        let cb = Nf4Codebook::standard();
        let l = cb.levels();
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        for i in 0..16 {
            assert!((l[i] + l[15 - i]).abs() < 1e-9);
        }
        assert_eq!((l[0], l[15]), (-1.0, 1.0));
    }

    #[test]
    fn offset_out_of_range_is_rejected() {
        for bad in [0.0, -0.1, 0.03, 0.5, f64::NAN] {
            assert!(nf4_levels(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_offset_is_the_minimax_point() {
        let best = default_offset();
        let d = bin_mass_deviation(best);
        for k in 1..=20 {
            let e = 1e-3 + (MAX_OFFSET - 1e-3) * k as f64 / 21.0;
            assert!(bin_mass_deviation(e) >= d - 1e-12, "offset {e} beats {best}");
        }
        assert!(bin_mass_deviation(MAX_OFFSET) > d);
    }

    #[test]
    fn level_values_map_to_their_own_index() {
        let cb = Nf4Codebook::standard();
        for (i, &l) in cb.levels().iter().enumerate() {
            assert_eq!(cb.nearest(l) as usize, i);
        }
        // exactly between two levels: lower index
        let mid = 0.5 * (cb.levels()[3] + cb.levels()[4]);
        assert_eq!(cb.nearest(mid), 3);
    }

    #[test]
    fn absmax_element_maps_to_sign_matching_extreme() {
        let cb = Nf4Codebook::standard();
        let (codes, absmax) = nf4_quantize(&[0.1, -2.5, 0.7], cb).unwrap();
        assert_eq!(absmax, 2.5);
        assert_eq!(codes[1], 0);
        let (codes, _) = nf4_quantize(&[0.1, 2.5, 0.7], cb).unwrap();
        assert_eq!(codes[1], 15);
    }

    #[test]
    fn zero_group_guard() {
        let cb = Nf4Codebook::standard();
        let (codes, absmax) = nf4_quantize(&[0.0; 8], cb).unwrap();
        assert_eq!(absmax, 1.0);
        assert!(codes.iter().all(|&c| c == 7));
        assert!(nf4_quantize(&[], cb).is_err());
    }

    #[test]
    fn dequantization_error_within_half_local_gap() {
        let cb = Nf4Codebook::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let levels = cb.levels();
        for _ in 0..200 {
            let group: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (codes, absmax) = nf4_quantize(&group, cb).unwrap();
            let deq = nf4_dequantize(&codes, absmax, cb);
            for (&w, &d) in group.iter().zip(&deq) {
                // exhaustive nearest-level search
                let x = w / absmax;
                let (best, _) = levels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (i, (x - l).abs()))
                    .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
                let lo = best.saturating_sub(1);
                let hi = (best + 1).min(15);
                let gap = (levels[best] - levels[lo]).max(levels[hi] - levels[best]);
                assert!((w - d).abs() <= 0.5 * gap * absmax + 1e-12);
                assert!(((w - d).abs() - (x - levels[best]).abs() * absmax).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantize_is_monotone() {
        let cb = Nf4Codebook::standard();
        let mut prev = 0;
        for i in -1000..=1000 {
            let c = cb.nearest(i as f64 / 1000.0);
            assert!(c >= prev);
            prev = c;
        }
    }
}
