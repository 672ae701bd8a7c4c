//! Modality-aware warmup: multimodal batches only for the first `eta`
//! steps, then a fixed deterministic interleave.

use std::fmt;
use std::str::FromStr;

use super::batch::Modality;
use crate::error::{config_err, Error, Result};

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Multimodal:linguistic batch ratio, stored reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixRatio {
    multimodal: u32,
    linguistic: u32,
}

impl MixRatio {
    pub const ONE_TO_ONE: MixRatio = MixRatio { multimodal: 1, linguistic: 1 };

    pub fn new(multimodal: u32, linguistic: u32) -> Result<Self> {
        if multimodal == 0 || linguistic == 0 {
            return config_err("mix ratio terms must be positive");
        }
        let d = gcd(multimodal, linguistic);
        Ok(Self {
            multimodal: multimodal / d,
            linguistic: linguistic / d,
        })
    }

    pub fn multimodal(self) -> u32 {
        self.multimodal
    }

    pub fn linguistic(self) -> u32 {
        self.linguistic
    }

    fn period(self) -> u64 {
        u64::from(self.multimodal) + u64::from(self.linguistic)
    }
}

impl Default for MixRatio {
    fn default() -> Self {
        Self::ONE_TO_ONE
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.multimodal, self.linguistic)
    }
}

impl FromStr for MixRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("mix ratio {s:?} is not of the form m:l")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad mix ratio term {t:?}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// `eta = None` never mixes in linguistic data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct WarmupSchedule {
    pub eta: Option<u64>,
    pub ratio: MixRatio,
}

impl WarmupSchedule {
    pub fn new(eta: Option<u64>, ratio: MixRatio) -> Self {
        Self { eta, ratio }
    }

    pub fn modality(&self, step: u64) -> Modality {
        schedule_modality(step, self)
    }
}

/// Before `eta`: multimodal. After: within each period of `m + l` steps the
/// first `m` are multimodal and the rest linguistic, so 1:1 alternates by
/// parity of `step - eta`.
pub fn schedule_modality(step: u64, sched: &WarmupSchedule) -> Modality {
    match sched.eta {
        Some(eta) if step >= eta => {
            let phase = (step - eta) % sched.ratio.period();
            if phase < u64::from(sched.ratio.multimodal) {
                Modality::Multimodal
            } else {
                Modality::Linguistic
            }
        }
        _ => Modality::Multimodal,
    }
}

/// The three controlled-comparison arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    MultimodalOnly,
    Hybrid,
    Warmup,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::MultimodalOnly, Arm::Hybrid, Arm::Warmup];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::MultimodalOnly => "multimodal_only",
            Arm::Hybrid => "hybrid",
            Arm::Warmup => "warmup",
        }
    }

    /// Schedule for this arm; `eta` applies to the warmup arm only.
    pub fn schedule(self, eta: u64, ratio: MixRatio) -> WarmupSchedule {
        match self {
            Arm::MultimodalOnly => WarmupSchedule::new(None, ratio),
            Arm::Hybrid => WarmupSchedule::new(Some(0), ratio),
            Arm::Warmup => WarmupSchedule::new(Some(eta), ratio),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Modality::{Linguistic as L, Multimodal as M};

    fn sched(eta: u64) -> WarmupSchedule {
        WarmupSchedule::new(Some(eta), MixRatio::ONE_TO_ONE)
    }

    #[test]
    fn warmup_then_parity() {
        let s = sched(100);
        assert_eq!(s.modality(5), M);
        let got: Vec<_> = (100..104).map(|t| s.modality(t)).collect();
        assert_eq!(got, [M, L, M, L]);
    }

    #[test]
    fn hybrid_interleaves_from_zero() {
        let s = sched(0);
        let got: Vec<_> = (0..4).map(|t| s.modality(t)).collect();
        assert_eq!(got, [M, L, M, L]);
    }

    #[test]
    fn infinite_eta_is_multimodal_forever() {
        let s = WarmupSchedule::default();
        assert!((0..10_000).all(|t| s.modality(t) == M));
    }

    #[test]
    fn general_ratio() {
        let s = WarmupSchedule::new(Some(3), MixRatio::new(4, 2).unwrap());
        assert_eq!(s.ratio.to_string(), "2:1");
        let got: Vec<_> = (0..9).map(|t| s.modality(t)).collect();
        assert_eq!(got, [M, M, M, M, M, L, M, M, L]);
        let ling = (3..3003).filter(|&t| s.modality(t) == L).count();
        assert_eq!(ling, 1000);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("3:6".parse::<MixRatio>().unwrap(), MixRatio::new(1, 2).unwrap());
        assert!("0:1".parse::<MixRatio>().is_err());
        assert!("11".parse::<MixRatio>().is_err());
    }

    #[test]
    fn arms_parse() {
        for a in Arm::ALL {
            assert_eq!(a.as_str().parse::<Arm>().unwrap(), a);
        }
        assert!("both".parse::<Arm>().is_err());
    }
}
