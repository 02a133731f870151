//! Multilingual corpus curation toolkit.
//!
//! A cascaded data-engineering pipeline for continual-pretraining and
//! post-training corpora: main-content extraction and n-gram language
//! identification, heuristic and perplexity quality filtering, MinHash/LSH
//! and sub-document deduplication, parallel-pair refinement with translation
//! templates, synthetic-prompt assembly with an external generator client,
//! two-stage mixture planning with learning-rate schedules, and SFT /
//! preference data curation. Shards are JSON-Lines files with audited
//! manifests; every stage is deterministic given its seeds.

pub mod dedup;
pub mod doc;
pub mod error;
pub mod ingest;
pub mod lang;
pub mod langid;
pub mod mixture;
pub mod ngram_lm;
pub mod parallel;
pub mod pipeline;
pub mod quality;
pub mod rng;
pub mod sft;
pub mod shard;
pub mod synthesis;
pub mod textsim;
pub mod tokenize;

pub use error::{Error, Result};
