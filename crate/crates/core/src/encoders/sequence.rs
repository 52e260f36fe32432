use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tokenizer::{Tokenizer, EOT_ID};
use super::EncoderConfig;
use crate::error::{HptError, Result};

/// Block sizes of a `[class | global | high | low]` sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    pub class_len: usize,
    pub global_len: usize,
    pub high_len: usize,
    pub low_len: usize,
}

impl SegmentLayout {
    pub fn total(&self) -> usize {
        self.class_len + self.global_len + self.high_len + self.low_len
    }

    pub fn class_range(&self) -> Range<usize> {
        0..self.class_len
    }

    pub fn global_range(&self) -> Range<usize> {
        let s = self.class_len;
        s..s + self.global_len
    }

    pub fn high_range(&self) -> Range<usize> {
        let s = self.class_len + self.global_len;
        s..s + self.high_len
    }

    pub fn low_range(&self) -> Range<usize> {
        let s = self.class_len + self.global_len + self.high_len;
        s..s + self.low_len
    }

    pub fn in_low(&self, i: usize) -> bool {
        self.low_range().contains(&i)
    }
}

/// One word of the low block and the absolute token positions it covers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub word: String,
    pub tokens: Range<usize>,
}

/// Token ids for the class and low blocks plus the layout that places
/// prompt slots between them. The low block always ends with an
/// end-of-text token whose final state is projected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    class_ids: Vec<usize>,
    low_ids: Vec<usize>,
    pub word_spans: Vec<WordSpan>,
    pub layout: SegmentLayout,
}

impl TokenSequence {
    /// Builds `[class_text | n_global slots | n_high slots | low_text EOT]`.
    pub fn build(
        tokenizer: &Tokenizer,
        class_text: &str,
        low_text: &str,
        n_global: usize,
        n_high: usize,
    ) -> Self {
        let class_ids = tokenizer.encode(class_text);
        let low_start = class_ids.len() + n_global + n_high;
        let mut low_ids = Vec::new();
        let mut word_spans = Vec::new();
        for word in Tokenizer::words(low_text) {
            let ids = tokenizer.word_ids(&word);
            let start = low_start + low_ids.len();
            word_spans.push(WordSpan {
                word,
                tokens: start..start + ids.len(),
            });
            low_ids.extend(ids);
        }
        low_ids.push(EOT_ID);
        let layout = SegmentLayout {
            class_len: class_ids.len(),
            global_len: n_global,
            high_len: n_high,
            low_len: low_ids.len(),
        };
        Self {
            class_ids,
            low_ids,
            word_spans,
            layout,
        }
    }

    /// A plain description with no class block and no prompt slots.
    pub fn description(tokenizer: &Tokenizer, text: &str) -> Self {
        Self::build(tokenizer, "", text, 0, 0)
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn low_ids(&self) -> &[usize] {
        &self.low_ids
    }

    /// Class ids followed by low ids, skipping prompt slots.
    pub fn concrete_ids(&self) -> Vec<usize> {
        self.class_ids
            .iter()
            .chain(&self.low_ids)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.layout.total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.word_spans.iter().map(|s| s.word.as_str())
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        if self.len() > config.max_seq_len {
            return Err(HptError::SequenceTooLong {
                len: self.len(),
                max: config.max_seq_len,
            });
        }
        if self.low_ids.last() != Some(&EOT_ID) {
            return Err(HptError::Layout("low block must end with EOT".into()));
        }
        let low = self.layout.low_range();
        if self
            .word_spans
            .iter()
            .any(|s| s.tokens.start < low.start || s.tokens.end > low.end)
        {
            return Err(HptError::Layout("word span outside low block".into()));
        }
        if let Some(&id) = self
            .concrete_ids()
            .iter()
            .find(|&&id| id >= config.vocab_size)
        {
            return Err(HptError::Layout(format!(
                "token id {id} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}
