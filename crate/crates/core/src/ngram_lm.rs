//! In-repo n-gram language model with add-k smoothing.
//!
//! Replaces the external KenLM dependency for perplexity filtering so tests
//! stay hermetic; the scoring interface is small enough that a real KenLM
//! scorer can be adapted behind it.
//!
//! Scoring conventions, fixed so an independent probability-chain oracle can
//! reproduce them exactly:
//! - tokens come from [`crate::tokenize::words`], lowercased;
//! - token i is conditioned on the longest available context up to
//!   `order - 1` preceding tokens (shorter near the start, no padding);
//! - in-vocabulary: p(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k * V);
//! - out-of-vocabulary tokens score the context-free floor k / (k * V) = 1/V;
//! - perplexity = exp(mean negative log p) over all tokens.

use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::tokenize::words;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Default)]
struct ContextStats {
    total: u64,
    continuations: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    k: f64,
    lang: Option<LanguageTag>,
    vocab: BTreeMap<String, u32>,
    contexts: HashMap<Vec<u32>, ContextStats>,
}

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_ADD_K: f64 = 0.1;

impl NgramLm {
    /// Train from an iterator of text lines. The vocabulary is the set of
    /// tokens seen in training.
    pub fn train<'a, I>(order: usize, k: f64, lang: Option<LanguageTag>, lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if order == 0 {
            return Err(Error::InvalidParams("n-gram order must be >= 1".into()));
        }
        if k <= 0.0 {
            return Err(Error::InvalidParams("add-k smoothing needs k > 0".into()));
        }
        let mut lm = Self {
            order,
            k,
            lang,
            vocab: BTreeMap::new(),
            contexts: HashMap::new(),
        };
        for line in lines {
            let lower = line.to_lowercase();
            let toks = words(&lower);
            let ids: Vec<u32> = toks.iter().map(|t| lm.intern(t)).collect();
            for i in 0..ids.len() {
                let lo = i.saturating_sub(lm.order - 1);
                // Count every context length so scoring near sequence starts
                // has matching statistics.
                for start in lo..=i {
                    let stats = lm.contexts.entry(ids[start..i].to_vec()).or_default();
                    stats.total += 1;
                    *stats.continuations.entry(ids[i]).or_insert(0) += 1;
                }
            }
        }
        if lm.vocab.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(lm)
    }

    /// A model with a declared vocabulary and no counts: every in-vocabulary
    /// token scores uniformly 1/V.
    pub fn with_vocab<I, S>(order: usize, k: f64, vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if order == 0 {
            return Err(Error::InvalidParams("n-gram order must be >= 1".into()));
        }
        let mut map = BTreeMap::new();
        for v in vocab {
            let next = map.len() as u32;
            map.entry(v.into()).or_insert(next);
        }
        if map.is_empty() {
            return Err(Error::InvalidParams("vocabulary must be non-empty".into()));
        }
        Ok(Self {
            order,
            k,
            lang: None,
            vocab: map,
            contexts: HashMap::new(),
        })
    }

    fn intern(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.vocab.get(tok) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.insert(tok.to_string(), id);
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn lang(&self) -> Option<LanguageTag> {
        self.lang
    }

    /// Probability of `tok` given the trailing context (last `order - 1`
    /// entries of `ctx` are used).
    pub fn token_probability(&self, ctx: &[&str], tok: &str) -> f64 {
        let v = self.vocab.len() as f64;
        let Some(&tok_id) = self.vocab.get(tok) else {
            // OOV floor, independent of context.
            return 1.0 / v;
        };
        let lo = ctx.len().saturating_sub(self.order - 1);
        let ctx_ids: Option<Vec<u32>> = ctx[lo..]
            .iter()
            .map(|t| self.vocab.get(*t).copied())
            .collect();
        let (total, count) = match ctx_ids.and_then(|ids| self.contexts.get(&ids)) {
            Some(stats) => (
                stats.total,
                stats.continuations.get(&tok_id).copied().unwrap_or(0),
            ),
            // Unseen context (or a context containing OOV tokens).
            None => (0, 0),
        };
        (count as f64 + self.k) / (total as f64 + self.k * v)
    }

    /// Mean per-token negative log-likelihood (nats) of a token sequence.
    pub fn sequence_nll(&self, toks: &[&str]) -> Result<f64> {
        self.sequence_nll_from(toks, 0)
    }

    /// Mean per-token NLL over `toks[score_from..]`, with earlier tokens
    /// available as context only. Used for conditioned scoring.
    pub fn sequence_nll_from(&self, toks: &[&str], score_from: usize) -> Result<f64> {
        if toks.len() <= score_from {
            return Err(Error::EmptyText);
        }
        let mut acc = 0.0;
        for i in score_from..toks.len() {
            let p = self.token_probability(&toks[..i], toks[i]);
            acc -= p.ln();
        }
        Ok(acc / (toks.len() - score_from) as f64)
    }

    /// exp of the mean NLL over the text's tokens.
    pub fn perplexity(&self, text: &str) -> Result<f64> {
        let lower = text.to_lowercase();
        let toks = words(&lower);
        if toks.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(self.sequence_nll(&toks)?.exp())
    }
}
