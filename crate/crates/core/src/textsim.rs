//! Text similarity primitives shared by parallel-pair filtering and SFT
//! curation: cosine over hashed character n-gram bags, plus a pluggable
//! embedding interface so real encoders can be swapped in.

use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::tokenize::words;
use std::collections::BTreeMap;
use xxhash_rust::xxh3::xxh3_64;

/// Sparse unit-norm vector keyed by 64-bit feature hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec(Vec<(u64, f32)>);

impl SparseVec {
    /// Build from raw feature counts and normalize to unit length.
    pub fn from_counts(counts: BTreeMap<u64, f32>) -> Self {
        let norm: f32 = counts.values().map(|w| w * w).sum::<f32>().sqrt();
        if norm == 0.0 {
            return Self(Vec::new());
        }
        Self(counts.into_iter().map(|(k, w)| (k, w / norm)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().map(|(k, _)| *k)
    }

    /// Dot product of unit vectors, i.e. cosine similarity.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j) = (0usize, 0usize);
        let mut acc = 0.0f64;
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += f64::from(self.0[i].1) * f64::from(other.0[j].1);
                    i += 1;
                    j += 1;
                }
            }
        }
        acc.clamp(-1.0, 1.0)
    }
}

/// Character n-gram counts (n = 1..=max_n) of the lowercased text, keyed by
/// xxh3 of the gram bytes. Spaces participate in grams.
pub fn char_ngram_counts(text: &str, max_n: usize) -> BTreeMap<u64, f32> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut counts: BTreeMap<u64, f32> = BTreeMap::new();
    let mut buf = String::new();
    for n in 1..=max_n {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window.iter());
            *counts.entry(xxh3_64(buf.as_bytes())).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Word n-gram counts (n = 1..=max_n) of the lowercased text.
pub fn word_ngram_counts(text: &str, max_n: usize) -> BTreeMap<u64, f32> {
    let lower = text.to_lowercase();
    let toks = words(&lower);
    let mut counts: BTreeMap<u64, f32> = BTreeMap::new();
    for n in 1..=max_n {
        if toks.len() < n {
            break;
        }
        for window in toks.windows(n) {
            let joined = window.join(" ");
            *counts.entry(xxh3_64(joined.as_bytes())).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Two texts in, score in [-1, 1] out. Implementations must be symmetric.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64>;

    /// Whether the scorer handles text in this language.
    fn supports_language(&self, _lang: LanguageTag) -> bool {
        true
    }
}

/// Default scorer: cosine over hashed character n-gram bags. A stand-in for
/// embedding models, not a replacement; the interface accepts any provider.
#[derive(Debug, Clone)]
pub struct CharNgramScorer {
    pub max_n: usize,
}

impl Default for CharNgramScorer {
    fn default() -> Self {
        Self { max_n: 3 }
    }
}

impl SimilarityScorer for CharNgramScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64> {
        let va = SparseVec::from_counts(char_ngram_counts(a, self.max_n));
        let vb = SparseVec::from_counts(char_ngram_counts(b, self.max_n));
        if va.is_empty() || vb.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(va.dot(&vb))
    }
}

/// Text to sparse unit vector, for semantic dedup. The default uses word
/// uni+bigram bags; real encoders plug in behind the same trait.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> SparseVec;
}

#[derive(Debug, Clone)]
pub struct WordNgramEmbedder {
    pub max_n: usize,
}

impl Default for WordNgramEmbedder {
    fn default() -> Self {
        Self { max_n: 2 }
    }
}

impl EmbeddingProvider for WordNgramEmbedder {
    fn embed(&self, text: &str) -> SparseVec {
        SparseVec::from_counts(word_ngram_counts(text, self.max_n))
    }
}

/// Test double: fixed vectors for chosen texts, delegating to the word
/// embedder otherwise.
pub struct StubEmbedder {
    pub fixed: std::collections::HashMap<String, SparseVec>,
    fallback: WordNgramEmbedder,
}

impl StubEmbedder {
    pub fn new(fixed: std::collections::HashMap<String, SparseVec>) -> Self {
        Self {
            fixed,
            fallback: WordNgramEmbedder::default(),
        }
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, text: &str) -> SparseVec {
        self.fixed
            .get(text)
            .cloned()
            .unwrap_or_else(|| self.fallback.embed(text))
    }
}
