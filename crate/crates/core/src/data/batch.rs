//! Homogeneous batches consumed by the training step.

use std::fmt;
use std::str::FromStr;

use super::synth::{gen_multimodal_sample, Image, MultimodalSample};
use super::tokenizer::{TokenId, VOCAB_SIZE};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Multimodal,
    Linguistic,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Multimodal => "multimodal",
            Modality::Linguistic => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multimodal" => Ok(Modality::Multimodal),
            "text" | "linguistic" => Ok(Modality::Linguistic),
            other => config_err(format!("unknown modality {other:?}")),
        }
    }
}

/// One training sequence. `targets[t]` is the token to predict after
/// reading `tokens[..=t]`; `None` positions carry no loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub image: Option<Image>,
    pub tokens: Vec<TokenId>,
    pub targets: Vec<Option<TokenId>>,
}

impl Sequence {
    /// Instruction tokens with the answer supervised at the final position.
    pub fn from_sample(sample: &MultimodalSample) -> Self {
        let n = sample.instruction.len();
        let mut targets = vec![None; n];
        targets[n - 1] = Some(sample.answer[0]);
        Self {
            image: Some(sample.image.clone()),
            tokens: sample.instruction.clone(),
            targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBatch {
    pub modality: Modality,
    pub sequences: Vec<Sequence>,
}

impl ModalityBatch {
    /// Checks the batch invariants: images present exactly for multimodal
    /// batches, aligned target lengths, ids inside the vocabulary.
    pub fn new(modality: Modality, sequences: Vec<Sequence>) -> Result<Self> {
        if sequences.is_empty() {
            return config_err("batch is empty");
        }
        for (i, s) in sequences.iter().enumerate() {
            let has_image = s.image.is_some();
            if has_image != (modality == Modality::Multimodal) {
                return config_err(format!("sequence {i}: image presence does not match {modality} batch"));
            }
            if s.tokens.is_empty() || s.tokens.len() != s.targets.len() {
                return config_err(format!("sequence {i}: token/target length mismatch"));
            }
            let bad = s
                .tokens
                .iter()
                .chain(s.targets.iter().flatten())
                .any(|&t| t >= VOCAB_SIZE);
            if bad {
                return Err(Error::Index(format!("sequence {i}: token id outside vocabulary")));
            }
        }
        Ok(Self { modality, sequences })
    }

    pub fn from_samples(samples: &[MultimodalSample]) -> Result<Self> {
        Self::new(
            Modality::Multimodal,
            samples.iter().map(Sequence::from_sample).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Consecutive samples `start..start + batch_size` of the stream keyed by `seed`.
pub fn gen_multimodal_batch(seed: u64, start: u64, batch_size: usize) -> Result<ModalityBatch> {
    let samples: Vec<_> = (0..batch_size as u64)
        .map(|i| gen_multimodal_sample(seed, start + i))
        .collect();
    ModalityBatch::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multimodal_targets_sit_on_the_last_instruction_token() {
        let b = gen_multimodal_batch(0, 0, 4).unwrap();
        for s in &b.sequences {
            let n = s.tokens.len();
            assert!(s.targets[..n - 1].iter().all(Option::is_none));
            assert!(s.targets[n - 1].is_some());
            assert!(s.image.is_some());
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let mut b = gen_multimodal_batch(0, 0, 2).unwrap();
        assert!(ModalityBatch::new(Modality::Linguistic, b.sequences.clone()).is_err());
        b.sequences[0].targets.pop();
        assert!(ModalityBatch::new(Modality::Multimodal, b.sequences).is_err());
        assert!(ModalityBatch::new(Modality::Linguistic, vec![]).is_err());
        let s = Sequence { image: None, tokens: vec![VOCAB_SIZE], targets: vec![None] };
        assert!(matches!(ModalityBatch::new(Modality::Linguistic, vec![s]), Err(Error::Index(_))));
    }

    #[test]
    fn modality_names_roundtrip() {
        for m in [Modality::Multimodal, Modality::Linguistic] {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
    }
}
