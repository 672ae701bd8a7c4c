//! Fixed byte-level vocabulary of 64 ids.
//!
//! Ids 0..4 are specials, then one id per representable byte, then eight
//! whole-word answer tokens used by the synthetic question-answering task.
//! Bytes outside the alphabet map to [`UNK`].

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const IMAGE: TokenId = 2;
pub const UNK: TokenId = 3;

const ALPHABET: &[u8] = b" abcdefghijklmnopqrstuvwxyz0123456789.,?!'\"-:;()\n/+=";
const FIRST_CHAR: TokenId = 4;

/// Answer words, shapes first then colours.
pub const ANSWER_WORDS: [&str; 8] = [
    "square", "cross", "hline", "vline", "red", "green", "blue", "yellow",
];
pub const FIRST_ANSWER: TokenId = FIRST_CHAR + ALPHABET.len();

/// Size of the vocabulary the tokenizer emits into.
pub const VOCAB_SIZE: usize = FIRST_ANSWER + ANSWER_WORDS.len();

const _: () = assert!(VOCAB_SIZE == 64);

fn char_id(b: u8) -> TokenId {
    ALPHABET
        .iter()
        .position(|&a| a == b)
        .map_or(UNK, |i| FIRST_CHAR + i)
}

/// Ids of `text`'s bytes with no framing.
pub fn encode_bytes(text: &str) -> Vec<TokenId> {
    text.bytes().map(char_id).collect()
}

/// `BOS` followed by one id per byte.
pub fn tokenize(text: &str) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(text.len() + 1);
    ids.push(BOS);
    ids.extend(text.bytes().map(char_id));
    ids
}

/// Inverse of [`tokenize`] on representable text. Specials other than `UNK`
/// are dropped; `UNK` becomes U+FFFD and answer tokens their word.
pub fn detokenize(ids: &[TokenId]) -> String {
    let mut out = String::with_capacity(ids.len());
    for &id in ids {
        match id {
            PAD | BOS | IMAGE => {}
            UNK => out.push('\u{FFFD}'),
            id if (FIRST_CHAR..FIRST_ANSWER).contains(&id) => {
                out.push(ALPHABET[id - FIRST_CHAR] as char)
            }
            id if (FIRST_ANSWER..VOCAB_SIZE).contains(&id) => {
                out.push_str(ANSWER_WORDS[id - FIRST_ANSWER])
            }
            _ => out.push('\u{FFFD}'),
        }
    }
    out
}

pub fn is_representable(text: &str) -> bool {
    text.bytes().all(|b| ALPHABET.contains(&b))
}

pub fn answer_token(word_index: usize) -> TokenId {
    FIRST_ANSWER + word_index
}

pub fn is_answer_token(id: TokenId) -> bool {
    (FIRST_ANSWER..VOCAB_SIZE).contains(&id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn framing() {
        let ids = tokenize("abc");
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], BOS);
        assert_eq!(&ids[1..], &[FIRST_CHAR + 1, FIRST_CHAR + 2, FIRST_CHAR + 3]);
        assert_eq!(detokenize(&ids), "abc");
    }

    #[test]
    fn unknown_bytes() {
        let ids = tokenize("Hi");
        assert_eq!(ids[1], UNK);
        assert!(!is_representable("Hi"));
        assert_eq!(detokenize(&ids), "\u{FFFD}i");
    }

    #[test]
    fn answers_occupy_the_top_of_the_vocabulary() {
        assert_eq!(answer_token(7), VOCAB_SIZE - 1);
        assert_eq!(detokenize(&[answer_token(4)]), "red");
    }

    proptest! {
        #[test]
        fn roundtrip(idx in prop::collection::vec(0..ALPHABET.len(), 0..200)) {
            let text: String = idx.iter().map(|&i| ALPHABET[i] as char).collect();
            let ids = tokenize(&text);
            prop_assert!(ids.iter().all(|&i| i != PAD && i < VOCAB_SIZE));
            prop_assert_eq!(detokenize(&ids), text);
        }

        #[test]
        fn pad_never_produced(s in ".{0,64}") {
            prop_assert!(!tokenize(&s).contains(&PAD));
        }
    }
}
