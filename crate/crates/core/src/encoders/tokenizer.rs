//! Stateless word-piece tokenizer.
//!
//! Words are lower-cased alphanumeric runs. Each word is cut into pieces of
//! at most [`MAX_PIECE_CHARS`] characters; continuation pieces carry a `##`
//! prefix before hashing, so a long word always maps to several tokens.

use serde::{Deserialize, Serialize};

pub const PAD_ID: usize = 0;
pub const SOT_ID: usize = 1;
pub const EOT_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const FIRST_WORD_ID: usize = 4;
pub const MAX_PIECE_CHARS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > FIRST_WORD_ID, "vocabulary too small");
        Self { vocab_size }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Splits text into lower-cased words.
    pub fn words(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn pieces(word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        chars
            .chunks(MAX_PIECE_CHARS)
            .enumerate()
            .map(|(i, chunk)| {
                let s: String = chunk.iter().collect();
                if i == 0 {
                    s
                } else {
                    format!("##{s}")
                }
            })
            .collect()
    }

    pub fn piece_id(&self, piece: &str) -> usize {
        FIRST_WORD_ID
            + (fnv1a(piece.as_bytes()) % (self.vocab_size - FIRST_WORD_ID) as u64) as usize
    }

    pub fn word_ids(&self, word: &str) -> Vec<usize> {
        Self::pieces(word)
            .iter()
            .map(|p| self.piece_id(p))
            .collect()
    }

    /// Token ids of every word in `text`, without any special token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        Self::words(text)
            .iter()
            .flat_map(|w| self.word_ids(w))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_are_lowercased_and_split_on_punctuation() {
        assert_eq!(
            Tokenizer::words("A pet Abyssinian, with ears!"),
            vec!["a", "pet", "abyssinian", "with", "ears"]
        );
    }

    #[test]
    fn long_words_split_into_pieces() {
        assert_eq!(Tokenizer::pieces("abyssinian"), vec!["abyssi", "##nian"]);
        assert_eq!(Tokenizer::pieces("ears"), vec!["ears"]);
        let t = Tokenizer::new(512);
        assert_eq!(t.word_ids("abyssinian").len(), 2);
    }

    #[test]
    fn ids_stay_in_word_range() {
        let t = Tokenizer::new(64);
        for w in ["a", "zebra", "x1", "long_word_with_pieces"] {
            for id in t.encode(w) {
                assert!((FIRST_WORD_ID..64).contains(&id));
            }
        }
    }
}
