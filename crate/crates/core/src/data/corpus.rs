//! Linguistic token streams: a built-in synthetic grammar or a user text file.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{ModalityBatch, Modality, Sequence};
use super::tokenizer::{encode_bytes, TokenId, VOCAB_SIZE};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug)]
enum Slot {
    Lit(&'static str),
    Choice(&'static [&'static str]),
}

const DET: &[&str] = &["the", "a"];
const ADJ: &[&str] = &["big", "small", "red", "old", "happy"];
const NOUN: &[&str] = &["cat", "dog", "bird", "fish", "tree", "car", "boat"];
const VERB: &[&str] = &["sees", "likes", "eats", "finds", "chases"];

use Slot::{Choice, Lit};

/// Sentence templates, each chosen with equal probability; every `Choice`
/// slot picks uniformly from its word list.
const TEMPLATES: &[&[Slot]] = &[
    &[
        Choice(DET),
        Lit(" "),
        Choice(NOUN),
        Lit(" "),
        Choice(VERB),
        Lit(" "),
        Choice(DET),
        Lit(" "),
        Choice(NOUN),
        Lit(".\n"),
    ],
    &[
        Choice(DET),
        Lit(" "),
        Choice(ADJ),
        Lit(" "),
        Choice(NOUN),
        Lit(" "),
        Choice(VERB),
        Lit(".\n"),
    ],
    &[Choice(DET), Lit(" "), Choice(NOUN), Lit(" is "), Choice(ADJ), Lit(".\n")],
];

fn sample_sentence(rng: &mut ChaCha8Rng, out: &mut VecDeque<TokenId>) {
    let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    for slot in template {
        let text = match *slot {
            Lit(s) => s,
            Choice(words) => words[rng.random_range(0..words.len())],
        };
        out.extend(encode_bytes(text));
    }
}

/// Long-run token frequencies of the synthetic grammar: expected count of
/// each token per sentence divided by the expected sentence length.
pub fn grammar_unigram() -> Vec<f64> {
    let mut expected = vec![0.0; VOCAB_SIZE];
    let tw = 1.0 / TEMPLATES.len() as f64;
    for template in TEMPLATES {
        for slot in *template {
            match *slot {
                Lit(s) => {
                    for id in encode_bytes(s) {
                        expected[id] += tw;
                    }
                }
                Choice(words) => {
                    let ww = tw / words.len() as f64;
                    for w in words {
                        for id in encode_bytes(w) {
                            expected[id] += ww;
                        }
                    }
                }
            }
        }
    }
    let total: f64 = expected.iter().sum();
    expected.iter().map(|e| e / total).collect()
}

/// Shannon entropy (nats) of a distribution.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

#[derive(Clone, Debug)]
enum Source {
    Synthetic(ChaCha8Rng),
    Text { tokens: Arc<Vec<TokenId>>, pos: usize },
}

/// An endless token stream read in windows. Text sources wrap around.
#[derive(Clone, Debug)]
pub struct CorpusStream {
    source: Source,
    buffer: VecDeque<TokenId>,
}

impl CorpusStream {
    pub fn synthetic(seed: u64) -> Self {
        Self {
            source: Source::Synthetic(ChaCha8Rng::seed_from_u64(seed)),
            buffer: VecDeque::new(),
        }
    }

    pub fn from_tokens(tokens: Arc<Vec<TokenId>>) -> Result<Self> {
        if tokens.is_empty() {
            return config_err("linguistic corpus is empty");
        }
        Ok(Self {
            source: Source::Text { tokens, pos: 0 },
            buffer: VecDeque::new(),
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(Arc::new(encode_bytes(text)))
    }

    fn fill(&mut self, n: usize) {
        while self.buffer.len() < n {
            match &mut self.source {
                Source::Synthetic(rng) => sample_sentence(rng, &mut self.buffer),
                Source::Text { tokens, pos } => {
                    self.buffer.push_back(tokens[*pos]);
                    *pos = (*pos + 1) % tokens.len();
                }
            }
        }
    }

    /// Next `len + 1` tokens; the stream advances by `len`, so the last token
    /// of one window is the first of the next.
    pub fn next_window(&mut self, len: usize) -> Vec<TokenId> {
        self.fill(len + 1);
        let window: Vec<TokenId> = self.buffer.iter().take(len + 1).copied().collect();
        self.buffer.drain(..len);
        window
    }

    /// Draws `n` raw tokens.
    pub fn take(&mut self, n: usize) -> Vec<TokenId> {
        self.fill(n);
        self.buffer.drain(..n).collect()
    }
}

/// Training and held-out linguistic streams. Without a text file both come
/// from the synthetic grammar under different seeds; a text file is split
/// 90/10 by token count.
pub fn corpus_streams(text: Option<&str>, seed: u64, window: usize) -> Result<(CorpusStream, CorpusStream)> {
    match text {
        None => Ok((
            CorpusStream::synthetic(seed),
            CorpusStream::synthetic(seed ^ 0x9e37_79b9_7f4a_7c15),
        )),
        Some(text) => {
            let tokens = encode_bytes(text);
            if tokens.is_empty() {
                return config_err("linguistic corpus is empty");
            }
            let split = tokens.len() * 9 / 10;
            if tokens.len() - split < window + 1 || split < window + 1 {
                return config_err(format!(
                    "corpus of {} tokens too short for windows of {window}",
                    tokens.len()
                ));
            }
            let held = tokens[split..].to_vec();
            let train = tokens[..split].to_vec();
            Ok((
                CorpusStream::from_tokens(Arc::new(train))?,
                CorpusStream::from_tokens(Arc::new(held))?,
            ))
        }
    }
}

/// `batch_size` next-token windows of length `window`; every position is a target.
pub fn gen_linguistic_batch(
    stream: &mut CorpusStream,
    window: usize,
    batch_size: usize,
) -> Result<ModalityBatch> {
    if window == 0 || batch_size == 0 {
        return config_err("linguistic window and batch size must be positive");
    }
    let sequences = (0..batch_size)
        .map(|_| {
            let w = stream.next_window(window);
            Sequence {
                image: None,
                tokens: w[..window].to_vec(),
                targets: w[1..].iter().map(|&t| Some(t)).collect(),
            }
        })
        .collect();
    ModalityBatch::new(Modality::Linguistic, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_have_fixed_length_and_stride() {
        let mut s = CorpusStream::synthetic(4);
        let mut reference = CorpusStream::synthetic(4);
        let flat = reference.take(33 * 10);
        for k in 0..5 {
            let w = s.next_window(32);
            assert_eq!(w.len(), 33);
            assert_eq!(w.as_slice(), &flat[k * 32..k * 32 + 33]);
        }
    }

    #[test]
    fn batch_targets_are_shifted_tokens() {
        let mut s = CorpusStream::synthetic(5);
        let b = gen_linguistic_batch(&mut s, 16, 3).unwrap();
        assert_eq!(b.modality, Modality::Linguistic);
        for seq in &b.sequences {
            assert_eq!(seq.tokens.len(), 16);
            assert!(seq.image.is_none());
            assert!(seq.targets.iter().all(Option::is_some));
            assert_eq!(&seq.tokens[1..], &seq.targets[..15].iter().map(|t| t.unwrap()).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(CorpusStream::from_text("").is_err());
        assert!(corpus_streams(Some(""), 0, 8).is_err());
        assert!(corpus_streams(Some("short text"), 0, 8).is_err());
    }

    #[test]
    fn text_stream_wraps() {
        let mut s = CorpusStream::from_text("abc").unwrap();
        assert_eq!(s.take(7), encode_bytes("abcabca"));
    }

    #[test]
    fn grammar_entropy_matches_closed_form() {
        let analytic = entropy(&grammar_unigram());
        let mut s = CorpusStream::synthetic(8);
        let tokens = s.take(500_000);
        let mut counts = vec![0.0; VOCAB_SIZE];
        for t in tokens {
            counts[t] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let empirical = entropy(&counts.iter().map(|c| c / total).collect::<Vec<_>>());
        assert!(
            (empirical - analytic).abs() / analytic < 0.05,
            "empirical {empirical} vs analytic {analytic}"
        );
    }

    #[test]
    fn file_corpus_split() {
        let text = "the quick brown fox jumps over the lazy dog. ".repeat(20);
        let (mut train, mut held) = corpus_streams(Some(&text), 0, 16).unwrap();
        let n = encode_bytes(&text).len();
        let split = n * 9 / 10;
        assert_eq!(train.take(4), encode_bytes(&text)[..4]);
        assert_eq!(held.take(4), encode_bytes(&text)[split..split + 4]);
    }
}
