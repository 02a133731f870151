//! Heuristic quality metrics, threshold calibration, and filtering.
//!
//! Metrics are rule-based and cheap; thresholds either come from declared
//! defaults or are calibrated as nearest-rank percentiles over a sample of
//! reports, per language. Perplexity is scored separately by an n-gram LM
//! and capped like any other metric.

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::ngram_lm::NgramLm;
use crate::tokenize::words;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

pub mod metric {
    pub const DOC_LENGTH_CHARS: &str = "doc_length_chars";
    pub const SPECIAL_SYMBOL_RATIO: &str = "special_symbol_ratio";
    pub const STOPWORD_RATIO: &str = "stopword_ratio";
    pub const DIGIT_RATIO: &str = "digit_ratio";
    pub const SHORT_LINE_RATIO: &str = "short_line_ratio";
    pub const INCOMPLETE_LINE_RATIO: &str = "incomplete_line_ratio";
    pub const REPEATED_WORD_RATIO: &str = "repeated_word_ratio";
    pub const DUP_2GRAM_RATIO: &str = "dup_2gram_ratio";
    pub const DUP_3GRAM_RATIO: &str = "dup_3gram_ratio";
    pub const DUP_4GRAM_RATIO: &str = "dup_4gram_ratio";
    pub const GARBLED_RATIO: &str = "garbled_ratio";
    pub const PERPLEXITY: &str = "perplexity";
}

/// Whether a calibrated bound for this metric caps it from above or floors
/// it from below. Length and stopword share are floors; everything else is
/// a cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Cap,
    Floor,
}

pub fn metric_direction(name: &str) -> Direction {
    match name {
        metric::DOC_LENGTH_CHARS | metric::STOPWORD_RATIO => Direction::Floor,
        _ => Direction::Cap,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub doc_length_chars: u64,
    pub special_symbol_ratio: f64,
    pub stopword_ratio: f64,
    pub digit_ratio: f64,
    pub short_line_ratio: f64,
    pub incomplete_line_ratio: f64,
    pub repeated_word_ratio: f64,
    /// n in 2..=4 -> fraction of duplicated token n-grams.
    pub duplicate_ngram_ratio: BTreeMap<u8, f64>,
    pub perplexity: Option<f64>,
    pub blocked_term_hits: u32,
    pub garbled_ratio: f64,
}

impl QualityReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            metric::DOC_LENGTH_CHARS => Some(self.doc_length_chars as f64),
            metric::SPECIAL_SYMBOL_RATIO => Some(self.special_symbol_ratio),
            metric::STOPWORD_RATIO => Some(self.stopword_ratio),
            metric::DIGIT_RATIO => Some(self.digit_ratio),
            metric::SHORT_LINE_RATIO => Some(self.short_line_ratio),
            metric::INCOMPLETE_LINE_RATIO => Some(self.incomplete_line_ratio),
            metric::REPEATED_WORD_RATIO => Some(self.repeated_word_ratio),
            metric::DUP_2GRAM_RATIO => self.duplicate_ngram_ratio.get(&2).copied(),
            metric::DUP_3GRAM_RATIO => self.duplicate_ngram_ratio.get(&3).copied(),
            metric::DUP_4GRAM_RATIO => self.duplicate_ngram_ratio.get(&4).copied(),
            metric::GARBLED_RATIO => Some(self.garbled_ratio),
            metric::PERPLEXITY => self.perplexity,
            _ => None,
        }
    }
}

/// Acceptance interval for one metric. Absent sides are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bound {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Bound {
    pub fn cap(max: f64) -> Self {
        Self {
            min: None,
            max: Some(max),
        }
    }

    pub fn floor(min: f64) -> Self {
        Self {
            min: Some(min),
            max: None,
        }
    }

    pub fn satisfied(&self, value: f64) -> bool {
        self.min.is_none_or(|m| value >= m) && self.max.is_none_or(|m| value <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    Calibrated {
        sample_id: String,
        percentiles: BTreeMap<String, f64>,
    },
}

/// Per-language acceptance intervals, serialized as JSON keyed by language
/// then metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub langs: BTreeMap<LanguageTag, BTreeMap<String, Bound>>,
    pub provenance: Provenance,
}

impl ThresholdSet {
    /// Declared defaults for uncalibrated runs: length >= 200 chars,
    /// special symbols <= 0.30, duplicate 3-grams <= 0.30, and a stopword
    /// floor of 0.05 for languages that have a stopword list.
    pub fn heuristic_defaults<I>(langs: I, stopword_langs: &BTreeSet<LanguageTag>) -> Self
    where
        I: IntoIterator<Item = LanguageTag>,
    {
        let mut map = BTreeMap::new();
        for lang in langs {
            let mut bounds = BTreeMap::new();
            bounds.insert(metric::DOC_LENGTH_CHARS.to_string(), Bound::floor(200.0));
            bounds.insert(metric::SPECIAL_SYMBOL_RATIO.to_string(), Bound::cap(0.30));
            bounds.insert(metric::DUP_3GRAM_RATIO.to_string(), Bound::cap(0.30));
            if stopword_langs.contains(&lang) {
                bounds.insert(metric::STOPWORD_RATIO.to_string(), Bound::floor(0.05));
            }
            map.insert(lang, bounds);
        }
        Self {
            langs: map,
            provenance: Provenance::Default,
        }
    }

    pub fn merge(&mut self, other: ThresholdSet) {
        for (lang, bounds) in other.langs {
            self.langs.entry(lang).or_default().extend(bounds);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&data)?)
    }
}

/// Per-language stopword lists.
#[derive(Debug, Clone, Default)]
pub struct StopwordTable {
    map: BTreeMap<LanguageTag, BTreeSet<String>>,
}

impl StopwordTable {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lang: LanguageTag, word: impl Into<String>) {
        self.map.entry(lang).or_default().insert(word.into());
    }

    pub fn for_lang(&self, lang: LanguageTag) -> Option<&BTreeSet<String>> {
        self.map.get(&lang)
    }

    pub fn languages(&self) -> BTreeSet<LanguageTag> {
        self.map.keys().copied().collect()
    }

    /// Bundled lists parsed from `assets/stopwords.tsv` (`code<TAB>word`).
    pub fn bundled() -> &'static StopwordTable {
        static TABLE: OnceLock<StopwordTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut table = StopwordTable::empty();
            for line in include_str!("../assets/stopwords.tsv").lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if let Some((code, word)) = line.split_once('\t') {
                    if let Ok(lang) = code.parse::<LanguageTag>() {
                        table.insert(lang, word.trim());
                    }
                }
            }
            table
        })
    }

    /// Load `<code>.txt` files (one term per line) from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut table = StopwordTable::empty();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let Ok(lang) = stem.parse::<LanguageTag>() else {
                continue;
            };
            for line in std::fs::read_to_string(&path)?.lines() {
                let term = line.trim();
                if !term.is_empty() {
                    table.insert(lang, term);
                }
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Blocklist(pub Vec<String>);

impl Blocklist {
    pub fn load(path: &Path) -> Result<Self> {
        let mut terms = Vec::new();
        for line in std::fs::read_to_string(path)?.lines() {
            let term = line.trim();
            if !term.is_empty() && !term.starts_with('#') {
                terms.push(term.to_lowercase());
            }
        }
        Ok(Self(terms))
    }
}

/// Compute every rule-based metric for a document. Perplexity stays unset;
/// degenerate inputs yield extreme ratios rather than errors.
pub fn compute_quality(
    doc: &Document,
    stopwords: &StopwordTable,
    blocklist: &Blocklist,
) -> QualityReport {
    let text = &doc.text;
    let lower = text.to_lowercase();

    let total_chars = text.chars().count() as u64;
    let mut non_ws = 0u64;
    let mut special = 0u64;
    let mut digits = 0u64;
    let mut garbled = 0u64;
    for c in text.chars() {
        if c == '\u{FFFD}' || (c.is_control() && !matches!(c, '\n' | '\r' | '\t')) {
            garbled += 1;
        }
        if c.is_whitespace() {
            continue;
        }
        non_ws += 1;
        if c.is_numeric() {
            digits += 1;
        } else if !c.is_alphanumeric() {
            special += 1;
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };

    let toks = words(&lower);
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for t in &toks {
        *counts.entry(t).or_insert(0) += 1;
    }
    let repeated = toks.iter().filter(|t| counts[*t as &str] > 1).count() as u64;

    let stop_set = stopwords.for_lang(doc.lang);
    let stops = match stop_set {
        Some(set) => toks.iter().filter(|t| set.contains(**t)).count() as u64,
        None => 0,
    };

    let mut duplicate_ngram_ratio = BTreeMap::new();
    for n in 2u8..=4 {
        let n = n as usize;
        if toks.len() < n {
            duplicate_ngram_ratio.insert(n as u8, 0.0);
            continue;
        }
        let total = toks.len() - n + 1;
        let distinct: BTreeSet<&[&str]> = toks.windows(n).collect();
        duplicate_ngram_ratio.insert(n as u8, 1.0 - distinct.len() as f64 / total as f64);
    }

    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let short = lines.iter().filter(|l| words(l).len() < 3).count() as u64;
    let incomplete = lines
        .iter()
        .filter(|l| {
            !l.ends_with(['.', '!', '?', '…', '。', '！', '？', '"', '\'', '”', '’'])
        })
        .count() as u64;

    let mut blocked_term_hits = 0u32;
    for term in &blocklist.0 {
        if term.contains(char::is_whitespace) {
            blocked_term_hits += lower.matches(term.as_str()).count() as u32;
        } else {
            blocked_term_hits += toks.iter().filter(|t| *t == term).count() as u32;
        }
    }

    QualityReport {
        doc_length_chars: total_chars,
        special_symbol_ratio: ratio(special, non_ws),
        stopword_ratio: ratio(stops, toks.len() as u64),
        digit_ratio: ratio(digits, non_ws),
        short_line_ratio: ratio(short, lines.len() as u64),
        incomplete_line_ratio: ratio(incomplete, lines.len() as u64),
        repeated_word_ratio: ratio(repeated, toks.len() as u64),
        duplicate_ngram_ratio,
        perplexity: None,
        blocked_term_hits,
        garbled_ratio: ratio(garbled, total_chars),
    }
}

/// Score a document's perplexity under a language-matched n-gram LM.
pub fn score_perplexity(doc: &Document, lm: &NgramLm) -> Result<f64> {
    if let Some(model_lang) = lm.lang() {
        if model_lang != doc.lang {
            return Err(Error::LanguageModelMismatch {
                doc: doc.lang,
                model: model_lang,
            });
        }
    }
    lm.perplexity(&doc.text)
}

/// Nearest-rank index for target percentile `pct` over `n` samples (1-based
/// rank). The epsilon absorbs float residue in `pct * n / 100`.
fn nearest_rank(pct: f64, n: usize) -> usize {
    let k = (pct * n as f64 / 100.0 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Calibrate per-metric bounds for one language as nearest-rank percentiles
/// of the sample. A cap at the p-th percentile accepts the lowest p percent
/// of the sample (within 1/N); a floor accepts the top p percent.
pub fn calibrate_thresholds(
    lang: LanguageTag,
    sample: &[QualityReport],
    spec: &BTreeMap<String, f64>,
    sample_id: &str,
) -> Result<ThresholdSet> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut bounds = BTreeMap::new();
    for (name, &pct) in spec {
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(Error::InvalidPercentile(pct));
        }
        let mut values: Vec<f64> = sample.iter().filter_map(|r| r.metric(name)).collect();
        if values.is_empty() {
            return Err(Error::InvalidParams(format!(
                "no sample values for metric `{name}`"
            )));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let k = nearest_rank(pct, values.len());
        let bound = match metric_direction(name) {
            Direction::Cap => Bound::cap(values[k - 1]),
            Direction::Floor => Bound::floor(values[values.len() - k]),
        };
        bounds.insert(name.clone(), bound);
    }
    let mut langs = BTreeMap::new();
    langs.insert(lang, bounds);
    Ok(ThresholdSet {
        langs,
        provenance: Provenance::Calibrated {
            sample_id: sample_id.to_string(),
            percentiles: spec.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    Reject(Vec<String>),
}

/// Accept iff every bounded metric is inside its interval and no blocked
/// term was hit. Rejections list every violated metric. A missing threshold
/// entry for the document's language is an error, never a silent pass.
pub fn apply_filter(
    doc: &Document,
    report: &QualityReport,
    thresholds: &ThresholdSet,
) -> Result<FilterDecision> {
    let bounds = thresholds
        .langs
        .get(&doc.lang)
        .ok_or(Error::ThresholdsMissingLanguage(doc.lang))?;
    let mut reasons = Vec::new();
    for (name, bound) in bounds {
        // Metrics without a value (an unscored perplexity) are skipped:
        // the bound applies only where the metric was computed.
        if let Some(value) = report.metric(name) {
            if !bound.satisfied(value) {
                reasons.push(name.clone());
            }
        }
    }
    if report.blocked_term_hits > 0 {
        reasons.push("blocklist".to_string());
    }
    reasons.sort();
    if reasons.is_empty() {
        Ok(FilterDecision::Accept)
    } else {
        Ok(FilterDecision::Reject(reasons))
    }
}

/// Outcome of running the filter stage over a corpus.
#[derive(Debug)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub rejected: Vec<(String, Vec<String>)>,
}

/// Per-language perplexity scorers; documents in languages without a model
/// simply go unscored.
pub type LmTable = BTreeMap<LanguageTag, NgramLm>;

/// Train one LM per `<code>.txt` file in a directory (one line per
/// training document).
pub fn train_lms_from_dir(dir: &Path, order: usize, k: f64) -> Result<LmTable> {
    let mut lms = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Ok(lang) = stem.parse::<LanguageTag>() else {
            continue;
        };
        let content = std::fs::read_to_string(&path)?;
        lms.insert(lang, NgramLm::train(order, k, Some(lang), content.lines())?);
    }
    Ok(lms)
}

/// Score and filter a whole corpus; kept documents carry their report and a
/// `quality_filter` stage mark. Re-running over the kept set is a no-op.
pub fn filter_corpus(
    docs: Vec<Document>,
    thresholds: &ThresholdSet,
    stopwords: &StopwordTable,
    blocklist: &Blocklist,
    lms: &LmTable,
) -> Result<FilterOutcome> {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for mut doc in docs {
        let mut report = compute_quality(&doc, stopwords, blocklist);
        if let Some(lm) = lms.get(&doc.lang) {
            report.perplexity = Some(score_perplexity(&doc, lm)?);
        }
        match apply_filter(&doc, &report, thresholds)? {
            FilterDecision::Accept => {
                doc.quality = Some(report);
                doc.record_stage("quality_filter");
                kept.push(doc);
            }
            FilterDecision::Reject(reasons) => rejected.push((doc.id, reasons)),
        }
    }
    Ok(FilterOutcome { kept, rejected })
}
