//! The per-document record flowing through the pipeline.

use crate::error::{Error, Result};
use crate::lang::{LanguageTag, SourceCategory};
use crate::quality::QualityReport;
use crate::tokenize::{TokenizerRegistry, DEFAULT_TOKENIZER_ID};
use serde::{Deserialize, Serialize};

fn default_tokenizer_id() -> String {
    DEFAULT_TOKENIZER_ID.to_string()
}

/// One text record. Serialized on the wire as
/// `{"id","url","lang","text","token_count","source_category","stage_trace"}`;
/// the quality report and tokenizer id travel out of band (the manifest
/// carries the tokenizer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub url: Option<String>,
    pub lang: LanguageTag,
    pub text: String,
    pub token_count: u64,
    pub source_category: SourceCategory,
    pub stage_trace: Vec<String>,
    #[serde(skip, default = "default_tokenizer_id")]
    pub tokenizer_id: String,
    #[serde(skip)]
    pub quality: Option<QualityReport>,
}

impl Document {
    /// Build a document, computing its token count. Empty text is rejected:
    /// nothing empty survives ingestion.
    pub fn new(
        id: impl Into<String>,
        url: Option<String>,
        lang: LanguageTag,
        text: impl Into<String>,
        source_category: SourceCategory,
        registry: &TokenizerRegistry,
        tokenizer_id: &str,
    ) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let token_count = registry.count(&text, tokenizer_id)?;
        Ok(Self {
            id: id.into(),
            url,
            lang,
            text,
            token_count,
            source_category,
            stage_trace: Vec::new(),
            tokenizer_id: tokenizer_id.to_string(),
            quality: None,
        })
    }

    /// Replace the text and recompute the token count, keeping the two in sync.
    pub fn set_text(&mut self, text: String, registry: &TokenizerRegistry) -> Result<()> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        self.token_count = registry.count(&text, &self.tokenizer_id)?;
        self.text = text;
        Ok(())
    }

    /// Append a stage name to the trace. Re-recording an already present
    /// stage is a no-op so re-running a stage stays idempotent.
    pub fn record_stage(&mut self, stage: &str) {
        if !self.stage_trace.iter().any(|s| s == stage) {
            self.stage_trace.push(stage.to_string());
        }
    }
}
