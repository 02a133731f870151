//! Token counting behind a pluggable registry.
//!
//! Token counts feed manifests and mixture accounting, so they must be
//! deterministic and always stamped with the tokenizer that produced them.
//! The default splitter breaks on whitespace and punctuation and counts
//! CJK-script characters one token each.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::sync::Arc;

pub const DEFAULT_TOKENIZER_ID: &str = "default";

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn count(&self, text: &str) -> u64;
}

/// True for scripts counted per character: Han, kana, Hangul.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2EFF      // CJK radicals
        | 0x3040..=0x309F    // hiragana
        | 0x30A0..=0x30FF    // katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // Hangul syllables
        | 0x1100..=0x11FF    // Hangul jamo
        | 0xF900..=0xFAFF    // CJK compat
        | 0x20000..=0x2A6DF  // CJK ext B
    )
}

/// Word segmentation shared by the default tokenizer, the n-gram LMs, and
/// the quality metrics: alphanumeric runs are words, each CJK character is
/// its own token, everything else separates.
pub fn words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_cjk(c) {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            out.push(&text[i..i + c.len_utf8()]);
        } else if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn id(&self) -> &str {
        DEFAULT_TOKENIZER_ID
    }

    fn count(&self, text: &str) -> u64 {
        words(text).len() as u64
    }
}

/// Named tokenizers. Counts from different tokenizers never mix silently:
/// every count is stamped with the id that produced it.
pub struct TokenizerRegistry {
    tokenizers: BTreeMap<String, Arc<dyn Tokenizer>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut tokenizers: BTreeMap<String, Arc<dyn Tokenizer>> = BTreeMap::new();
        tokenizers.insert(DEFAULT_TOKENIZER_ID.to_string(), Arc::new(DefaultTokenizer));
        Self { tokenizers }
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, tokenizer: Arc<dyn Tokenizer>) {
        self.tokenizers.insert(tokenizer.id().to_string(), tokenizer);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Tokenizer>> {
        self.tokenizers
            .get(id)
            .ok_or_else(|| Error::UnknownTokenizer(id.to_string()))
    }

    pub fn count(&self, text: &str, tokenizer_id: &str) -> Result<u64> {
        Ok(self.get(tokenizer_id)?.count(text))
    }
}

/// Count tokens under a registered tokenizer.
pub fn tokenize_count(text: &str, tokenizer_id: &str, registry: &TokenizerRegistry) -> Result<u64> {
    registry.count(text, tokenizer_id)
}
