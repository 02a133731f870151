//! Post-training data curation: regex cleaning, arithmetic validation,
//! pluggable quality scoring, QA relevance, instruction-following
//! difficulty, and a three-pass semantic dedup chain.
//!
//! The stage order is fixed (clean, validate, score, similarity, IFD,
//! dedup) and every stage is idempotent, so composing the pipeline twice
//! equals running it once.

use crate::dedup::{dedup_corpus, simhash, DedupConfig, DedupEntry, DocKey};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::ngram_lm::NgramLm;
use crate::textsim::{EmbeddingProvider, SimilarityScorer};
use crate::tokenize::words;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_64;

pub const DEFAULT_QA_SIMILARITY_FLOOR: f64 = 0.1;
pub const DEFAULT_IFD_BAND: (f64, f64) = (0.3, 1.0);
pub const DEFAULT_EMBEDDING_THRESHOLD: f64 = 0.7;
pub const DEFAULT_SIMHASH_MAX_HAMMING: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub content: String,
}

/// One instruction/response record, JSON-Lines on the wire as
/// `{"id","lang","instruction","response","turns"}`; scores appear once
/// computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub lang: LanguageTag,
    pub instruction: String,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub turns: Option<Vec<Turn>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quality_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ifd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qa_similarity: Option<f64>,
    #[serde(skip_serializing_if = "BTreeSet::is_empty", default)]
    pub flags: BTreeSet<String>,
}

impl SftExample {
    pub fn new(
        id: impl Into<String>,
        lang: LanguageTag,
        instruction: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            lang,
            instruction: instruction.into(),
            response: response.into(),
            turns: None,
            quality_score: None,
            ifd: None,
            qa_similarity: None,
            flags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    DropRecord,
    StripMatch,
}

/// Serialized form of a cleaning rule, as stored in the rules file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleaningRule {
    pub name: String,
    pub pattern: String,
    pub action: RuleAction,
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub name: String,
    pub regex: Regex,
    pub action: RuleAction,
}

/// Compile a rule list, enforcing unique names and valid patterns.
pub fn compile_rules(rules: &[CleaningRule]) -> Result<Vec<CompiledRule>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rules.len());
    for rule in rules {
        if !seen.insert(rule.name.clone()) {
            return Err(Error::InvalidRule {
                name: rule.name.clone(),
                msg: "duplicate rule name".into(),
            });
        }
        let regex = Regex::new(&rule.pattern).map_err(|e| Error::InvalidRule {
            name: rule.name.clone(),
            msg: e.to_string(),
        })?;
        out.push(CompiledRule {
            name: rule.name.clone(),
            regex,
            action: rule.action,
        });
    }
    Ok(out)
}

/// Built-in ruleset: merged multi-turn dialogues and HTML drop the record;
/// orphan numbering lines, emoji, and URLs are stripped in place.
pub fn default_cleaning_rules() -> Vec<CleaningRule> {
    vec![
        CleaningRule {
            name: "merged_dialogue".into(),
            pattern: r"(?m)^\s*(?:Human|Assistant|USER|ASSISTANT)\s*:".into(),
            action: RuleAction::DropRecord,
        },
        CleaningRule {
            name: "html".into(),
            pattern: r"(?i)</?(?:html|div|span|table|td|tr|script|style|body)\b".into(),
            action: RuleAction::DropRecord,
        },
        CleaningRule {
            name: "broken_numbering".into(),
            pattern: r"(?m)^\s*\(?\d+[.)]\s*$\n?".into(),
            action: RuleAction::StripMatch,
        },
        CleaningRule {
            name: "emoji".into(),
            pattern: r"[\x{1F300}-\x{1FAFF}\x{2600}-\x{27BF}\x{FE0F}\x{1F1E6}-\x{1F1FF}]".into(),
            action: RuleAction::StripMatch,
        },
        CleaningRule {
            name: "url".into(),
            pattern: r"https?://\S+|www\.\S+".into(),
            action: RuleAction::StripMatch,
        },
    ]
}

pub fn load_rules(path: &Path) -> Result<Vec<CompiledRule>> {
    let rules: Vec<CleaningRule> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    compile_rules(&rules)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CleanOutcome {
    Cleaned(SftExample),
    Dropped { id: String, reasons: Vec<String> },
}

/// Apply the ruleset: drop rules remove the record, strip rules edit the
/// text, and every hit lands in `flags`. clean(clean(x)) = clean(x).
pub fn clean(example: &SftExample, rules: &[CompiledRule]) -> CleanOutcome {
    let mut out = example.clone();
    let mut drop_reasons = Vec::new();
    for rule in rules {
        match rule.action {
            RuleAction::DropRecord => {
                if rule.regex.is_match(&out.instruction) || rule.regex.is_match(&out.response) {
                    drop_reasons.push(rule.name.clone());
                }
            }
            RuleAction::StripMatch => {
                let instruction = rule.regex.replace_all(&out.instruction, "");
                let response = rule.regex.replace_all(&out.response, "");
                if instruction != out.instruction || response != out.response {
                    out.flags.insert(rule.name.clone());
                    out.instruction = instruction.into_owned();
                    out.response = response.into_owned();
                }
            }
        }
    }
    if !drop_reasons.is_empty() {
        return CleanOutcome::Dropped {
            id: example.id.clone(),
            reasons: drop_reasons,
        };
    }
    out.instruction = out.instruction.trim().to_string();
    out.response = out.response.trim().to_string();
    if out.instruction.is_empty() || out.response.is_empty() {
        return CleanOutcome::Dropped {
            id: example.id.clone(),
            reasons: vec!["emptied_by_cleaning".into()],
        };
    }
    CleanOutcome::Cleaned(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MathCheck {
    Pass,
    Fail { equation: String, expected: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MathReport {
    pub verdict: MathCheck,
    /// Captured but unevaluable expressions (division by zero and the like).
    pub ignored: Vec<String>,
}

/// Capture `a op b = c` equations (integers or decimals, op in + - * /,
/// including the unicode forms) and evaluate them. The first result off by
/// more than 1e-9 relative fails the record; no equations means pass.
pub fn validate_math(text: &str) -> MathReport {
    let re = Regex::new(
        r"(?x)(?:^|[^\d.\w])
          (-?\d+(?:\.\d+)?)\s*([-+*/×÷−])\s*(-?\d+(?:\.\d+)?)\s*=\s*(-?\d+(?:\.\d+)?)",
    )
    .expect("static regex compiles");
    let mut ignored = Vec::new();
    for cap in re.captures_iter(text) {
        let a: f64 = cap[1].parse().unwrap_or(f64::NAN);
        let b: f64 = cap[3].parse().unwrap_or(f64::NAN);
        let stated: f64 = cap[4].parse().unwrap_or(f64::NAN);
        let op = &cap[2];
        let equation = format!("{}{}{}", &cap[1], op, &cap[3]);
        let computed = match op {
            "+" => a + b,
            "-" | "−" => a - b,
            "*" | "×" => a * b,
            "/" | "÷" => {
                if b == 0.0 {
                    ignored.push(equation);
                    continue;
                }
                a / b
            }
            _ => {
                ignored.push(equation);
                continue;
            }
        };
        if !computed.is_finite() || stated.is_nan() {
            ignored.push(equation);
            continue;
        }
        let ok = if computed == 0.0 {
            stated.abs() <= 1e-9
        } else {
            ((stated - computed) / computed).abs() <= 1e-9
        };
        if !ok {
            return MathReport {
                verdict: MathCheck::Fail {
                    equation,
                    expected: computed,
                },
                ignored,
            };
        }
    }
    MathReport {
        verdict: MathCheck::Pass,
        ignored,
    }
}

/// Instruction/response relevance under the pluggable similarity scorer.
pub fn qa_similarity(example: &SftExample, scorer: &dyn SimilarityScorer) -> Result<f64> {
    scorer.score(&example.instruction, &example.response)
}

/// Mean per-token NLL of a response, conditioned on the instruction or not.
pub trait ConditionalLmScorer: Send + Sync {
    fn conditioned_nll(&self, instruction: &str, response: &str) -> Result<f64>;
    fn direct_nll(&self, response: &str) -> Result<f64>;
}

/// N-gram backed scorer: conditioning prepends the instruction tokens as
/// context for the first response tokens.
pub struct NgramConditionalScorer {
    pub lm: NgramLm,
}

impl ConditionalLmScorer for NgramConditionalScorer {
    fn conditioned_nll(&self, instruction: &str, response: &str) -> Result<f64> {
        let lower_i = instruction.to_lowercase();
        let lower_r = response.to_lowercase();
        let mut toks = words(&lower_i);
        let split = toks.len();
        toks.extend(words(&lower_r));
        self.lm.sequence_nll_from(&toks, split)
    }

    fn direct_nll(&self, response: &str) -> Result<f64> {
        let lower = response.to_lowercase();
        let toks = words(&lower);
        self.lm.sequence_nll(&toks)
    }
}

/// Wrapper that ignores the instruction: CA equals DA by construction.
pub struct ContextBlindScorer<S>(pub S);

impl<S: ConditionalLmScorer> ConditionalLmScorer for ContextBlindScorer<S> {
    fn conditioned_nll(&self, _instruction: &str, response: &str) -> Result<f64> {
        self.0.direct_nll(response)
    }

    fn direct_nll(&self, response: &str) -> Result<f64> {
        self.0.direct_nll(response)
    }
}

/// Multiplies both scores by a constant; IFD must not move.
pub struct ScaledScorer<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: ConditionalLmScorer> ConditionalLmScorer for ScaledScorer<S> {
    fn conditioned_nll(&self, instruction: &str, response: &str) -> Result<f64> {
        Ok(self.inner.conditioned_nll(instruction, response)? * self.factor)
    }

    fn direct_nll(&self, response: &str) -> Result<f64> {
        Ok(self.inner.direct_nll(response)? * self.factor)
    }
}

/// Instruction-following difficulty: conditioned answer score over direct
/// answer score, both mean per-token NLLs so the ratio is length-invariant.
pub fn ifd_score(example: &SftExample, scorer: &dyn ConditionalLmScorer) -> Result<f64> {
    let ca = scorer.conditioned_nll(&example.instruction, &example.response)?;
    let da = scorer.direct_nll(&example.response)?;
    if da == 0.0 {
        return Err(Error::DegenerateScorer);
    }
    Ok(ca / da)
}

/// 1-to-6 quality scoring behind a pluggable interface; the real scorer is
/// an external model.
pub trait QualityScorer: Send + Sync {
    fn score(&self, example: &SftExample) -> Result<f64>;
}

/// Test stand-in: length plus lexical diversity mapped into [1, 6].
pub struct HeuristicQualityScorer;

impl QualityScorer for HeuristicQualityScorer {
    fn score(&self, example: &SftExample) -> Result<f64> {
        let text = format!("{} {}", example.instruction, example.response);
        let lower = text.to_lowercase();
        let toks = words(&lower);
        if toks.is_empty() {
            return Ok(1.0);
        }
        let distinct: HashSet<&&str> = toks.iter().collect();
        let diversity = distinct.len() as f64 / toks.len() as f64;
        let length = (text.chars().count() as f64).min(800.0) / 800.0;
        Ok((1.0 + 2.5 * diversity + 2.5 * length).clamp(1.0, 6.0))
    }
}

fn normalize_instruction(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub struct SemanticDedupConfig {
    pub embedding_threshold: f64,
    pub simhash_max_hamming: u32,
    pub minhash: DedupConfig,
}

impl Default for SemanticDedupConfig {
    fn default() -> Self {
        Self {
            embedding_threshold: DEFAULT_EMBEDDING_THRESHOLD,
            simhash_max_hamming: DEFAULT_SIMHASH_MAX_HAMMING,
            minhash: DedupConfig::default(),
        }
    }
}

pub type KeyedExamples = Vec<(DocKey, SftExample)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub stage: String,
    pub reason: String,
}

/// Three sequential dedup passes: exact normalized-instruction match,
/// MinHash cluster merge plus SimHash Hamming cull, then a pairwise
/// embedding cull keeping records whose maximum similarity to any earlier
/// survivor stays below the threshold. Earliest stable key survives.
pub fn semantic_dedup(
    entries: KeyedExamples,
    embed: &dyn EmbeddingProvider,
    config: &SemanticDedupConfig,
) -> Result<(KeyedExamples, Vec<DropRecord>)> {
    if !(config.embedding_threshold > 0.0 && config.embedding_threshold <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "embedding threshold {} outside (0, 1]",
            config.embedding_threshold
        )));
    }
    let mut entries = entries;
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut dropped = Vec::new();

    // Pass 1: exact duplicate instructions.
    let mut seen = HashSet::new();
    let mut survivors: Vec<(DocKey, SftExample)> = Vec::with_capacity(entries.len());
    for (key, ex) in entries {
        let h = xxh3_64(normalize_instruction(&ex.instruction).as_bytes());
        if seen.insert(h) {
            survivors.push((key, ex));
        } else {
            dropped.push(DropRecord {
                id: ex.id,
                stage: "exact_instruction_dedup".into(),
                reason: "duplicate normalized instruction".into(),
            });
        }
    }

    // Pass 2a: MinHash/LSH over instruction + response.
    let dedup_entries: Vec<DedupEntry> = survivors
        .iter()
        .map(|(key, ex)| DedupEntry {
            key: key.clone(),
            id: ex.id.clone(),
            text: format!("{}\n{}", ex.instruction, ex.response),
        })
        .collect();
    let outcome = dedup_corpus(&dedup_entries, &config.minhash)?;
    let keep_idx: HashSet<usize> = outcome.survivors.iter().copied().collect();
    for cluster in &outcome.clusters {
        for id in &cluster.removed_ids {
            dropped.push(DropRecord {
                id: id.clone(),
                stage: "minhash_dedup".into(),
                reason: format!("near-duplicate of {}", cluster.survivor_id),
            });
        }
    }
    let mut survivors: Vec<(DocKey, SftExample)> = survivors
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| keep_idx.contains(&i).then_some(e))
        .collect();
    survivors.sort_by(|a, b| a.0.cmp(&b.0));

    // Pass 2b: SimHash Hamming cull against earlier survivors.
    let mut kept: Vec<(DocKey, SftExample)> = Vec::with_capacity(survivors.len());
    let mut fingerprints: Vec<u64> = Vec::new();
    for (key, ex) in survivors {
        let fp = simhash(&format!("{}\n{}", ex.instruction, ex.response))?;
        let close = fingerprints
            .iter()
            .any(|&bits| (bits ^ fp.bits).count_ones() <= config.simhash_max_hamming);
        if close {
            dropped.push(DropRecord {
                id: ex.id,
                stage: "simhash_dedup".into(),
                reason: format!("fingerprint within {} bits of a survivor", config.simhash_max_hamming),
            });
        } else {
            fingerprints.push(fp.bits);
            kept.push((key, ex));
        }
    }

    // Pass 3: embedding cull against earlier survivors. Vectors sharing no
    // feature key have zero cosine, so an inverted index prunes the
    // candidate set without changing the outcome.
    let embeddings: Vec<crate::textsim::SparseVec> = kept
        .par_iter()
        .map(|(_, ex)| embed.embed(&format!("{}\n{}", ex.instruction, ex.response)))
        .collect();
    let mut final_kept: Vec<(DocKey, SftExample)> = Vec::with_capacity(kept.len());
    let mut kept_embeddings: Vec<crate::textsim::SparseVec> = Vec::new();
    let mut key_index: HashMap<u64, Vec<usize>> = HashMap::new();
    for ((key, ex), emb) in kept.into_iter().zip(embeddings) {
        let mut candidates: Vec<usize> = emb
            .keys()
            .filter_map(|k| key_index.get(&k))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let over = candidates
            .par_iter()
            .any(|&i| kept_embeddings[i].dot(&emb) >= config.embedding_threshold);
        if over {
            dropped.push(DropRecord {
                id: ex.id,
                stage: "embedding_dedup".into(),
                reason: format!(
                    "embedding similarity >= {} to a survivor",
                    config.embedding_threshold
                ),
            });
        } else {
            let idx = kept_embeddings.len();
            for k in emb.keys() {
                key_index.entry(k).or_default().push(idx);
            }
            kept_embeddings.push(emb);
            final_kept.push((key, ex));
        }
    }
    Ok((final_kept, dropped))
}

#[derive(Debug, Clone)]
pub struct CurationConfig {
    pub qa_floor: f64,
    pub ifd_band: (f64, f64),
    pub ifd_top_k: Option<usize>,
    pub quality_floor: Option<f64>,
    pub dedup: SemanticDedupConfig,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            qa_floor: DEFAULT_QA_SIMILARITY_FLOOR,
            ifd_band: DEFAULT_IFD_BAND,
            ifd_top_k: None,
            quality_floor: None,
            dedup: SemanticDedupConfig::default(),
        }
    }
}

pub struct CurationComponents<'a> {
    pub quality: &'a dyn QualityScorer,
    pub similarity: &'a dyn SimilarityScorer,
    pub ifd: &'a dyn ConditionalLmScorer,
    pub embed: &'a dyn EmbeddingProvider,
}

#[derive(Debug)]
pub struct CurationOutcome {
    pub kept: Vec<(DocKey, SftExample)>,
    pub dropped: Vec<DropRecord>,
}

/// The full curation chain in its fixed order. Idempotent: feeding the kept
/// set back through yields the same set.
pub fn curate(
    entries: Vec<(DocKey, SftExample)>,
    rules: &[CompiledRule],
    config: &CurationConfig,
    components: &CurationComponents<'_>,
) -> Result<CurationOutcome> {
    let mut dropped = Vec::new();

    // Stage 1: regex cleaning.
    let mut cleaned = Vec::with_capacity(entries.len());
    for (key, ex) in entries {
        match clean(&ex, rules) {
            CleanOutcome::Cleaned(ex) => cleaned.push((key, ex)),
            CleanOutcome::Dropped { id, reasons } => dropped.push(DropRecord {
                id,
                stage: "clean".into(),
                reason: reasons.join(","),
            }),
        }
    }

    // Stage 2: arithmetic validation over instruction and response.
    let mut validated = Vec::with_capacity(cleaned.len());
    for (key, ex) in cleaned {
        let text = format!("{}\n{}", ex.instruction, ex.response);
        match validate_math(&text).verdict {
            MathCheck::Pass => validated.push((key, ex)),
            MathCheck::Fail { equation, expected } => dropped.push(DropRecord {
                id: ex.id,
                stage: "validate_math".into(),
                reason: format!("{equation} expected {expected}"),
            }),
        }
    }

    // Stage 3: quality scoring (annotates; floors only when configured).
    let mut scored = Vec::with_capacity(validated.len());
    for (key, mut ex) in validated {
        let score = components.quality.score(&ex)?.clamp(1.0, 6.0);
        ex.quality_score = Some(score);
        match config.quality_floor {
            Some(floor) if score < floor => dropped.push(DropRecord {
                id: ex.id,
                stage: "quality_score".into(),
                reason: format!("score {score:.2} below floor {floor}"),
            }),
            _ => scored.push((key, ex)),
        }
    }

    // Stage 4: QA relevance.
    let mut relevant = Vec::with_capacity(scored.len());
    for (key, mut ex) in scored {
        let sim = qa_similarity(&ex, components.similarity)?;
        ex.qa_similarity = Some(sim);
        if sim < config.qa_floor {
            dropped.push(DropRecord {
                id: ex.id,
                stage: "qa_similarity".into(),
                reason: format!("similarity {sim:.3} below floor {}", config.qa_floor),
            });
        } else {
            relevant.push((key, ex));
        }
    }

    // Stage 5: IFD band selection.
    let (lo, hi) = config.ifd_band;
    let mut in_band = Vec::with_capacity(relevant.len());
    for (key, mut ex) in relevant {
        let ifd = ifd_score(&ex, components.ifd)?;
        ex.ifd = Some(ifd);
        if ifd > lo && ifd < hi {
            in_band.push((key, ex));
        } else {
            dropped.push(DropRecord {
                id: ex.id,
                stage: "ifd".into(),
                reason: format!("ifd {ifd:.4} outside ({lo}, {hi})"),
            });
        }
    }
    if let Some(k) = config.ifd_top_k {
        if in_band.len() > k {
            // Highest difficulty first; stable key breaks ties.
            let mut order: Vec<usize> = (0..in_band.len()).collect();
            order.sort_by(|&a, &b| {
                in_band[b]
                    .1
                    .ifd
                    .partial_cmp(&in_band[a].1.ifd)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| in_band[a].0.cmp(&in_band[b].0))
            });
            let keep: HashSet<usize> = order.into_iter().take(k).collect();
            let mut selected = Vec::with_capacity(k);
            for (i, entry) in in_band.into_iter().enumerate() {
                if keep.contains(&i) {
                    selected.push(entry);
                } else {
                    dropped.push(DropRecord {
                        id: entry.1.id,
                        stage: "ifd".into(),
                        reason: format!("outside top-{k} by ifd"),
                    });
                }
            }
            in_band = selected;
        }
    }

    // Stage 6: semantic dedup chain.
    let (kept, dedup_drops) = semantic_dedup(in_band, components.embed, &config.dedup)?;
    dropped.extend(dedup_drops);
    Ok(CurationOutcome { kept, dropped })
}

/// Read SFT records from JSON-Lines, keyed by (path, line).
pub fn read_sft_jsonl(path: &Path) -> Result<Vec<(DocKey, SftExample)>> {
    let display = path.display().to_string();
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: SftExample = serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
            path: display.clone(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        out.push((
            DocKey {
                shard: display.clone(),
                line: i as u64 + 1,
            },
            ex,
        ));
    }
    Ok(out)
}

pub fn write_sft_jsonl(examples: &[(DocKey, SftExample)], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (_, ex) in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_drop_report(drops: &[DropRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in drops {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textsim::{CharNgramScorer, SparseVec, StubEmbedder, WordNgramEmbedder};

    fn key(line: u64) -> DocKey {
        DocKey {
            shard: "sft.jsonl".into(),
            line,
        }
    }

    fn rules() -> Vec<CompiledRule> {
        compile_rules(&default_cleaning_rules()).unwrap()
    }

    #[test]
    fn html_response_dropped() {
        let ex = SftExample::new("a", LanguageTag::En, "Render this", "<html><body>x</body></html>");
        match clean(&ex, &rules()) {
            CleanOutcome::Dropped { reasons, .. } => assert!(reasons.contains(&"html".into())),
            other => panic!("expected drop, got {other:?}"),
        }
    }

    #[test]
    fn url_stripped_and_flagged() {
        let ex = SftExample::new(
            "b",
            LanguageTag::En,
            "Where can I read more?",
            "See https://example.org/docs for details.",
        );
        match clean(&ex, &rules()) {
            CleanOutcome::Cleaned(out) => {
                assert!(!out.response.contains("https://"));
                assert!(out.flags.contains("url"));
            }
            other => panic!("expected cleaned, got {other:?}"),
        }
    }

    #[test]
    fn clean_example_passes_unchanged() {
        let ex = SftExample::new("c", LanguageTag::En, "Say hello.", "Hello to you.");
        match clean(&ex, &rules()) {
            CleanOutcome::Cleaned(out) => {
                assert_eq!(out, ex);
                assert!(out.flags.is_empty());
            }
            other => panic!("expected cleaned, got {other:?}"),
        }
    }

    #[test]
    fn cleaning_is_idempotent() {
        let ex = SftExample::new(
            "d",
            LanguageTag::En,
            "Link 🙂 please",
            "Go to www.example.org now 🙂",
        );
        let once = match clean(&ex, &rules()) {
            CleanOutcome::Cleaned(out) => out,
            other => panic!("{other:?}"),
        };
        let twice = match clean(&once, &rules()) {
            CleanOutcome::Cleaned(out) => out,
            other => panic!("{other:?}"),
        };
        assert_eq!(once, twice);
    }

    #[test]
    fn correct_arithmetic_passes() {
        assert_eq!(validate_math("we know 2+3=5 today").verdict, MathCheck::Pass);
        assert_eq!(validate_math("no equations here").verdict, MathCheck::Pass);
    }

    #[test]
    fn wrong_arithmetic_fails_with_expected_value() {
        match validate_math("so 2+3=6").verdict {
            MathCheck::Fail { equation, expected } => {
                assert_eq!(equation, "2+3");
                assert_eq!(expected, 5.0);
            }
            other => panic!("expected fail, got {other:?}"),
        }
    }

    #[test]
    fn truncated_division_fails_tolerance() {
        // |0.3333 - 1/3| / (1/3) ≈ 1e-4, far beyond 1e-9.
        match validate_math("1/3=0.3333").verdict {
            MathCheck::Fail { equation, .. } => assert_eq!(equation, "1/3"),
            other => panic!("expected fail, got {other:?}"),
        }
        assert_eq!(
            validate_math("1/3=0.3333333333333333").verdict,
            MathCheck::Pass
        );
    }

    #[test]
    fn division_by_zero_ignored() {
        let report = validate_math("5/0=1");
        assert_eq!(report.verdict, MathCheck::Pass);
        assert_eq!(report.ignored, vec!["5/0"]);
    }

    #[test]
    fn qa_similarity_identical_is_one() {
        let ex = SftExample::new("e", LanguageTag::En, "same text", "same text");
        let s = qa_similarity(&ex, &CharNgramScorer::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    fn toy_lm() -> NgramLm {
        // "x cat sat" repeated makes p(cat | x) large and p(cat | <start>)
        // small, so conditioning on an instruction ending in "x" helps.
        NgramLm::train(2, 0.1, None, std::iter::repeat_n("x cat sat", 10)).unwrap()
    }

    #[test]
    fn context_blind_scorer_gives_exactly_one() {
        let scorer = ContextBlindScorer(NgramConditionalScorer { lm: toy_lm() });
        let ex = SftExample::new("f", LanguageTag::En, "cat sat x", "cat sat");
        assert_eq!(ifd_score(&ex, &scorer).unwrap(), 1.0);
    }

    /// Five-token toy where the instruction contains the full response:
    /// the conditioned chain must beat the direct one, so IFD < 1. The NLLs
    /// are cross-checked against a by-hand probability chain.
    #[test]
    fn instruction_containing_response_lowers_ifd() {
        let lm = toy_lm();
        let scorer = NgramConditionalScorer { lm: lm.clone() };
        let ex = SftExample::new("g", LanguageTag::En, "cat sat x", "cat sat");
        let ifd = ifd_score(&ex, &scorer).unwrap();
        assert!(ifd < 1.0, "ifd {ifd}");

        // Oracle: counts from 10x "x cat sat", k = 0.1, V = 3. The empty
        // context aggregates all 30 token occurrences, 10 of them "cat".
        // DA: p(cat|start) = 10.1/(30 + 0.3), p(sat|cat) = 10.1/(10 + 0.3).
        let p_cat_start = 10.1f64 / 30.3;
        let p_sat_cat = 10.1f64 / 10.3;
        let da = -(p_cat_start.ln() + p_sat_cat.ln()) / 2.0;
        // CA: context crosses the boundary: p(cat|x) = 10.1/10.3, then
        // p(sat|cat) as above.
        let p_cat_x = 10.1f64 / 10.3;
        let ca = -(p_cat_x.ln() + p_sat_cat.ln()) / 2.0;
        let expected = ca / da;
        assert!((ifd - expected).abs() < 1e-12, "ifd {ifd} vs oracle {expected}");
    }

    /// Out-of-vocabulary responses hit the smoothing floor on both sides.
    #[test]
    fn oov_response_gives_ifd_exactly_one() {
        let scorer = NgramConditionalScorer { lm: toy_lm() };
        let ex = SftExample::new("h", LanguageTag::En, "unrelated words", "zzz qqq www");
        assert_eq!(ifd_score(&ex, &scorer).unwrap(), 1.0);
    }

    #[test]
    fn scaling_both_scores_leaves_ifd_unchanged() {
        let base = NgramConditionalScorer { lm: toy_lm() };
        let ex = SftExample::new("i", LanguageTag::En, "cat sat x", "cat sat");
        let raw = ifd_score(&ex, &base).unwrap();
        let scaled = ScaledScorer {
            inner: NgramConditionalScorer { lm: toy_lm() },
            factor: 17.25,
        };
        let with_scale = ifd_score(&ex, &scaled).unwrap();
        assert!((raw - with_scale).abs() <= 1e-12 * raw.abs());
    }

    #[test]
    fn exact_duplicate_instructions_leave_one_survivor() {
        let entries = vec![
            (
                key(1),
                SftExample::new("a", LanguageTag::En, "What is rust?", "A language."),
            ),
            (
                key(2),
                SftExample::new("b", LanguageTag::En, "what   is RUST?", "Oxidized metal."),
            ),
        ];
        let embed = WordNgramEmbedder::default();
        let (kept, dropped) =
            semantic_dedup(entries, &embed, &SemanticDedupConfig::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].1.id, "a");
        assert_eq!(dropped[0].stage, "exact_instruction_dedup");
    }

    #[test]
    fn distinct_examples_all_survive() {
        // Distinct random records: brute-force pairwise similarity below
        // threshold, so every record must survive.
        let mut rng = crate::rng::SplitMix64::new(31);
        let entries: Vec<(DocKey, SftExample)> = (0..60)
            .map(|i| {
                let instr: Vec<String> = (0..8)
                    .map(|_| format!("w{}", rng.next_below(100_000)))
                    .collect();
                let resp: Vec<String> = (0..10)
                    .map(|_| format!("r{}", rng.next_below(100_000)))
                    .collect();
                (
                    key(i),
                    SftExample::new(
                        format!("id{i}"),
                        LanguageTag::En,
                        instr.join(" "),
                        resp.join(" "),
                    ),
                )
            })
            .collect();
        let embed = WordNgramEmbedder::default();
        // Brute-force oracle over all pairs.
        let cfg = SemanticDedupConfig::default();
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                let a = embed.embed(&format!("{}\n{}", entries[i].1.instruction, entries[i].1.response));
                let b = embed.embed(&format!("{}\n{}", entries[j].1.instruction, entries[j].1.response));
                assert!(a.dot(&b) < cfg.embedding_threshold);
            }
        }
        let (kept, dropped) = semantic_dedup(entries, &embed, &cfg).unwrap();
        assert_eq!(kept.len(), 60);
        assert!(dropped.is_empty());
    }

    #[test]
    fn stub_embedder_paraphrase_removed() {
        let mut fixed = std::collections::HashMap::new();
        // Two near-parallel unit vectors with cosine 0.9 between them.
        let mut a = std::collections::BTreeMap::new();
        a.insert(1u64, 1.0f32);
        let mut b = std::collections::BTreeMap::new();
        b.insert(1u64, 0.9f32);
        b.insert(2u64, (1.0f32 - 0.81).sqrt());
        fixed.insert("How tall is the Eiffel Tower?\nAbout three hundred meters.".to_string(),
            SparseVec::from_counts(a));
        fixed.insert("What is the height of the Eiffel Tower?\nRoughly three hundred meters tall.".to_string(),
            SparseVec::from_counts(b));
        let embed = StubEmbedder::new(fixed);
        let entries = vec![
            (
                key(1),
                SftExample::new(
                    "orig",
                    LanguageTag::En,
                    "How tall is the Eiffel Tower?",
                    "About three hundred meters.",
                ),
            ),
            (
                key(2),
                SftExample::new(
                    "para",
                    LanguageTag::En,
                    "What is the height of the Eiffel Tower?",
                    "Roughly three hundred meters tall.",
                ),
            ),
        ];
        let (kept, dropped) =
            semantic_dedup(entries, &embed, &SemanticDedupConfig::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].1.id, "orig");
        assert_eq!(dropped[0].stage, "embedding_dedup");
    }

    #[test]
    fn survivors_invariant_to_input_permutation() {
        let mut rng = crate::rng::SplitMix64::new(8);
        let mut entries: Vec<(DocKey, SftExample)> = (0..40)
            .map(|i| {
                let instr: Vec<String> =
                    (0..6).map(|_| format!("w{}", rng.next_below(50_000))).collect();
                (
                    key(i),
                    SftExample::new(format!("id{i}"), LanguageTag::En, instr.join(" "), "resp here"),
                )
            })
            .collect();
        // plant one duplicate instruction
        entries.push((
            key(100),
            SftExample::new("dup", LanguageTag::En, entries[5].1.instruction.clone(), "other"),
        ));
        let embed = WordNgramEmbedder::default();
        let cfg = SemanticDedupConfig::default();
        let (kept_a, _) = semantic_dedup(entries.clone(), &embed, &cfg).unwrap();
        let mut shuffled = entries;
        rng.shuffle(&mut shuffled);
        let (kept_b, _) = semantic_dedup(shuffled, &embed, &cfg).unwrap();
        let ids_a: Vec<&str> = kept_a.iter().map(|(_, e)| e.id.as_str()).collect();
        let ids_b: Vec<&str> = kept_b.iter().map(|(_, e)| e.id.as_str()).collect();
        assert_eq!(ids_a, ids_b);
    }

    fn components<'a>(
        quality: &'a HeuristicQualityScorer,
        sim: &'a CharNgramScorer,
        ifd: &'a NgramConditionalScorer,
        embed: &'a WordNgramEmbedder,
    ) -> CurationComponents<'a> {
        CurationComponents {
            quality,
            similarity: sim,
            ifd,
            embed,
        }
    }

    #[test]
    fn curation_pipeline_is_idempotent() {
        let mut rng = crate::rng::SplitMix64::new(12);
        let entries: Vec<(DocKey, SftExample)> = (0..120)
            .map(|i| {
                let mut instr: Vec<String> = (0..8)
                    .map(|_| format!("word{}", rng.next_below(500)))
                    .collect();
                instr.push("explain".into());
                let resp: Vec<String> = instr
                    .iter()
                    .cloned()
                    .chain((0..6).map(|_| format!("word{}", rng.next_below(500))))
                    .collect();
                let mut ex = SftExample::new(
                    format!("id{i}"),
                    LanguageTag::En,
                    instr.join(" "),
                    resp.join(" "),
                );
                if i % 10 == 0 {
                    ex.response.push_str(" see https://example.org/x");
                }
                (key(i), ex)
            })
            .collect();
        let lm = NgramLm::train(
            3,
            0.1,
            None,
            (0..500).map(|i| format!("word{i} explain word{}", (i * 7) % 500)).collect::<Vec<_>>().iter().map(String::as_str),
        )
        .unwrap();
        let quality = HeuristicQualityScorer;
        let sim = CharNgramScorer::default();
        let ifd = NgramConditionalScorer { lm };
        let embed = WordNgramEmbedder::default();
        let comps = components(&quality, &sim, &ifd, &embed);
        let rules = rules();
        let cfg = CurationConfig::default();
        let once = curate(entries, &rules, &cfg, &comps).unwrap();
        let twice = curate(once.kept.clone(), &rules, &cfg, &comps).unwrap();
        assert_eq!(once.kept, twice.kept);
        assert!(twice.dropped.is_empty(), "{:?}", twice.dropped);
    }

    #[test]
    fn jsonl_round_trip_and_corrupt_line_reporting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let examples = vec![
            (key(1), SftExample::new("a", LanguageTag::En, "q one", "a one")),
            (key(2), SftExample::new("b", LanguageTag::De, "q zwei", "a zwei")),
        ];
        write_sft_jsonl(&examples, &path).unwrap();
        let back = read_sft_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, examples[0].1);

        std::fs::write(&path, "{bad\n").unwrap();
        match read_sft_jsonl(&path) {
            Err(Error::CorruptRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected corrupt record, got {other:?}"),
        }
    }
}
