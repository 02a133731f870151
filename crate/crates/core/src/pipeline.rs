//! Configurable stage runner binding ingestion, language id, quality
//! filtering, and dedup into one resumable cascade, plus corpus statistics.
//!
//! Each stage reads the previous stage's shards and writes new ones; every
//! emitted manifest carries the hash of the config that produced it. Given
//! fixed seeds, output bytes do not depend on the worker count.

use crate::dedup::{
    dedup_corpus, subdoc_exact_dedup, DedupConfig, DedupEntry, DocKey, DuplicateCluster,
    MinHashParams, SubdocUnit,
};
use crate::doc::Document;
use crate::error::{Error, Result};
use crate::ingest::{extract_main_content, parse_url_rules, url_filter, ExtractFormat, UrlDecision};
use crate::lang::{LanguageTag, SourceCategory};
use crate::langid::{bundled_model, identify_language, LangIdModel, DEFAULT_CONFIDENCE_FLOOR};
use crate::quality::{filter_corpus, train_lms_from_dir, Blocklist, LmTable, StopwordTable, ThresholdSet};
use crate::shard::{read_shard, write_shard, ShardManifest};
use crate::tokenize::TokenizerRegistry;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use xxhash_rust::xxh3::xxh3_64;

fn default_tokenizer() -> String {
    crate::tokenize::DEFAULT_TOKENIZER_ID.to_string()
}

fn default_workers() -> usize {
    1
}

fn default_floor() -> f64 {
    DEFAULT_CONFIDENCE_FLOOR
}

/// One stage with its parameters. Unknown stage names fail config parsing
/// before any I/O happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Ingest {
        #[serde(default)]
        url_rules: Option<PathBuf>,
    },
    Langid {
        #[serde(default = "default_floor")]
        floor: f64,
        #[serde(default)]
        model: Option<PathBuf>,
    },
    Filter {
        #[serde(default)]
        thresholds: Option<PathBuf>,
        #[serde(default)]
        stopwords_dir: Option<PathBuf>,
        #[serde(default)]
        blocklist: Option<PathBuf>,
        /// Directory of `<code>.txt` corpora; when present, an order-3
        /// add-k LM per language scores perplexity for the filter.
        #[serde(default)]
        lm_dir: Option<PathBuf>,
    },
    Dedup {
        #[serde(default = "default_dedup_threshold")]
        threshold: f64,
        #[serde(default = "default_perms")]
        perms: u32,
        #[serde(default = "default_bands")]
        bands: u32,
        #[serde(default = "default_rows")]
        rows: u32,
        #[serde(default = "default_shingle")]
        shingle_size: u32,
        #[serde(default)]
        subdoc: Option<SubdocUnit>,
    },
}

fn default_dedup_threshold() -> f64 {
    0.8
}
fn default_perms() -> u32 {
    128
}
fn default_bands() -> u32 {
    16
}
fn default_rows() -> u32 {
    8
}
fn default_shingle() -> u32 {
    5
}

impl PipelineStage {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineStage::Ingest { .. } => "ingest",
            PipelineStage::Langid { .. } => "langid",
            PipelineStage::Filter { .. } => "filter",
            PipelineStage::Dedup { .. } => "dedup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub input_format: ExtractFormat,
    pub out_dir: PathBuf,
    pub stages: Vec<PipelineStage>,
    #[serde(default = "default_tokenizer")]
    pub tokenizer_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for stage in &self.stages {
            if !seen.insert(stage.name()) {
                return Err(Error::Config(format!(
                    "stage `{}` appears more than once",
                    stage.name()
                )));
            }
        }
        if self.stages.is_empty() {
            return Err(Error::Config("no stages configured".into()));
        }
        Ok(())
    }

    /// Content hash of the config; stamped into every manifest this run
    /// writes. Covers the parts that determine output content — stage list
    /// and parameters, tokenizer, seed, input format — and leaves out
    /// filesystem locations and the worker count.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            input_format: ExtractFormat,
            stages: &'a [PipelineStage],
            tokenizer_id: &'a str,
            seed: u64,
        }
        let semantic = Semantic {
            input_format: self.input_format,
            stages: &self.stages,
            tokenizer_id: &self.tokenizer_id,
            seed: self.seed,
        };
        let json = serde_json::to_string(&semantic).unwrap_or_default();
        format!("{:016x}", xxh3_64(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input_records: u64,
    pub output_records: u64,
    pub dropped: u64,
    pub manifests: Vec<ShardManifest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub stages: Vec<StageReport>,
}

fn stage_dir(config: &PipelineConfig, stage: &PipelineStage) -> PathBuf {
    config.out_dir.join(stage.name())
}

/// Shard files of a directory in sorted order. A `.jsonl` file counts as a
/// shard only when its manifest sidecar exists, which keeps reports living
/// next to shards out of the read path.
pub fn shard_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl")
            && crate::shard::manifest_path(&path).is_file()
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// All documents of a shard directory, in shard-then-line order.
pub fn read_stage_docs(dir: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for file in shard_files(dir)? {
        let (mut shard_docs, _) = read_shard(&file)?;
        docs.append(&mut shard_docs);
    }
    Ok(docs)
}

fn write_stage_output(
    docs: &[Document],
    dir: &Path,
    stage: &str,
    tokenizer_id: &str,
    fingerprint: &str,
) -> Result<Vec<ShardManifest>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stage}-00000.jsonl"));
    Ok(vec![write_shard(docs, &path, tokenizer_id, fingerprint)?])
}

/// Ingest every file of a directory: optional `<name>.url` sidecars feed
/// the URL blocklist, payloads go through main-content extraction.
pub fn ingest_dir(
    input_dir: &Path,
    format: ExtractFormat,
    tokenizer_id: &str,
    url_rules: &Option<PathBuf>,
    registry: &TokenizerRegistry,
) -> Result<(Vec<Document>, u64)> {
    let rules = match url_rules {
        Some(path) => parse_url_rules(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    let mut inputs: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(input_dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) != Some("url") {
            inputs.push(path);
        }
    }
    inputs.sort();

    let mut docs = Vec::new();
    let mut dropped = 0u64;
    for path in inputs {
        // Optional "<name>.url" sidecar supplies the source locator.
        let url_sidecar = path.with_extension(format!(
            "{}.url",
            path.extension().and_then(|e| e.to_str()).unwrap_or("")
        ));
        let url = std::fs::read_to_string(&url_sidecar)
            .ok()
            .map(|s| s.trim().to_string());
        if let Some(u) = &url {
            if let UrlDecision::Reject { .. } = url_filter(u, &rules) {
                dropped += 1;
                continue;
            }
        }
        let raw = std::fs::read(&path)?;
        let text = match extract_main_content(&raw, format) {
            Ok(t) => t,
            Err(Error::EmptyExtraction | Error::UndecodablePayload(_)) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut doc = Document::new(
            stem,
            url,
            LanguageTag::Unknown,
            text,
            SourceCategory::Web,
            registry,
            tokenizer_id,
        )?;
        doc.record_stage("ingest");
        docs.push(doc);
    }
    Ok((docs, dropped))
}

/// Classify each document, dropping those below the confidence floor.
pub fn langid_docs(
    docs: Vec<Document>,
    floor: f64,
    model: &LangIdModel,
) -> Result<(Vec<Document>, u64)> {
    let predictions: Vec<_> = docs
        .par_iter()
        .map(|d| identify_language(&d.text, model, floor))
        .collect::<Result<_>>()?;
    let mut kept = Vec::with_capacity(docs.len());
    let mut dropped = 0u64;
    for (mut doc, prediction) in docs.into_iter().zip(predictions) {
        if prediction.lang == LanguageTag::Unknown {
            dropped += 1;
            continue;
        }
        doc.lang = prediction.lang;
        doc.record_stage("langid");
        kept.push(doc);
    }
    Ok((kept, dropped))
}

/// MinHash dedup within each language partition, plus an optional
/// sub-document exact-match pass; duplicate clusters go to `report_path`.
pub fn dedup_docs(
    docs: Vec<Document>,
    config: &DedupConfig,
    subdoc: Option<SubdocUnit>,
    registry: &TokenizerRegistry,
    report_path: &Path,
) -> Result<(Vec<Document>, u64, Vec<DuplicateCluster>)> {
    // Dedup runs within each language partition.
    let mut by_lang: BTreeMap<LanguageTag, Vec<Document>> = BTreeMap::new();
    for doc in docs {
        by_lang.entry(doc.lang).or_default().push(doc);
    }
    let mut survivors = Vec::new();
    let mut clusters = Vec::new();
    let mut dropped = 0u64;
    for (_, group) in by_lang {
        let entries: Vec<DedupEntry> = group
            .iter()
            .enumerate()
            .map(|(i, d)| DedupEntry {
                key: DocKey {
                    shard: String::new(),
                    line: i as u64,
                },
                id: d.id.clone(),
                text: d.text.clone(),
            })
            .collect();
        let outcome = dedup_corpus(&entries, config)?;
        dropped += (group.len() - outcome.survivors.len()) as u64;
        clusters.extend(outcome.clusters);
        let keep: std::collections::HashSet<usize> = outcome.survivors.into_iter().collect();
        for (i, mut doc) in group.into_iter().enumerate() {
            if keep.contains(&i) {
                doc.record_stage("dedup");
                survivors.push(doc);
            }
        }
    }
    if let Some(unit) = subdoc {
        let before = survivors.len() as u64;
        let (after, _stats) = subdoc_exact_dedup(survivors, unit, registry)?;
        dropped += before - after.len() as u64;
        survivors = after;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(report_path)?);
    for cluster in &clusters {
        serde_json::to_writer(&mut w, cluster)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok((survivors, dropped, clusters))
}

/// Execute the configured stages in order, optionally resuming from a named
/// stage whose predecessors already ran into `out_dir`.
pub fn run(config: &PipelineConfig, from_stage: Option<&str>) -> Result<RunReport> {
    config.validate()?;
    let fingerprint = config.fingerprint();
    let registry = TokenizerRegistry::default();

    let start_idx = match from_stage {
        None => 0,
        Some(name) => config
            .stages
            .iter()
            .position(|s| s.name() == name)
            .ok_or_else(|| Error::MissingStage(name.to_string()))?,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut reports = Vec::new();
    for (idx, stage) in config.stages.iter().enumerate().skip(start_idx) {
        let out = stage_dir(config, stage);
        let input_docs = if idx == 0 {
            Vec::new()
        } else {
            let prev = stage_dir(config, &config.stages[idx - 1]);
            if !prev.is_dir() {
                return Err(Error::MissingStage(format!(
                    "stage `{}` needs outputs of `{}` which are missing",
                    stage.name(),
                    config.stages[idx - 1].name()
                )));
            }
            read_stage_docs(&prev)?
        };
        let input_records = input_docs.len() as u64;

        let (docs, dropped) = pool.install(|| -> Result<(Vec<Document>, u64)> {
            match stage {
                PipelineStage::Ingest { url_rules } => ingest_dir(
                    &config.input_dir,
                    config.input_format,
                    &config.tokenizer_id,
                    url_rules,
                    &registry,
                ),
                PipelineStage::Langid { floor, model } => {
                    let loaded;
                    let model_ref = match model {
                        Some(path) => {
                            loaded = LangIdModel::load(path)?;
                            &loaded
                        }
                        None => bundled_model(),
                    };
                    langid_docs(input_docs, *floor, model_ref)
                }
                PipelineStage::Filter {
                    thresholds,
                    stopwords_dir,
                    blocklist,
                    lm_dir,
                } => {
                    let stopwords = match stopwords_dir {
                        Some(dir) => StopwordTable::load_dir(dir)?,
                        None => StopwordTable::bundled().clone(),
                    };
                    let blocklist = match blocklist {
                        Some(path) => Blocklist::load(path)?,
                        None => Blocklist::default(),
                    };
                    let lms = match lm_dir {
                        Some(dir) => train_lms_from_dir(
                            dir,
                            crate::ngram_lm::DEFAULT_ORDER,
                            crate::ngram_lm::DEFAULT_ADD_K,
                        )?,
                        None => LmTable::new(),
                    };
                    let thresholds = match thresholds {
                        Some(path) => ThresholdSet::load(path)?,
                        None => {
                            let langs: std::collections::BTreeSet<LanguageTag> =
                                input_docs.iter().map(|d| d.lang).collect();
                            ThresholdSet::heuristic_defaults(langs, &stopwords.languages())
                        }
                    };
                    let outcome =
                        filter_corpus(input_docs, &thresholds, &stopwords, &blocklist, &lms)?;
                    Ok((outcome.kept, outcome.rejected.len() as u64))
                }
                PipelineStage::Dedup {
                    threshold,
                    perms,
                    bands,
                    rows,
                    shingle_size,
                    subdoc,
                } => {
                    let dedup_config = DedupConfig {
                        threshold: *threshold,
                        bands: *bands,
                        rows: *rows,
                        minhash: MinHashParams {
                            perms: *perms,
                            shingle_size: *shingle_size,
                            seed: config.seed,
                        },
                    };
                    std::fs::create_dir_all(&out)?;
                    let report_path = out.join("duplicate-clusters.jsonl");
                    let (survivors, dropped, _) =
                        dedup_docs(input_docs, &dedup_config, *subdoc, &registry, &report_path)?;
                    Ok((survivors, dropped))
                }
            }
        })?;

        let manifests = write_stage_output(
            &docs,
            &out,
            stage.name(),
            &config.tokenizer_id,
            &fingerprint,
        )?;
        reports.push(StageReport {
            stage: stage.name().to_string(),
            input_records,
            output_records: docs.len() as u64,
            dropped,
            manifests,
        });
    }
    Ok(RunReport {
        fingerprint,
        stages: reports,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub shard_count: u64,
    pub record_total: u64,
    pub token_total: u64,
    pub tokens_per_language: BTreeMap<LanguageTag, u64>,
    pub tokens_per_category: BTreeMap<SourceCategory, u64>,
}

/// Aggregate manifests (and records, for the category split) of a shard
/// directory. Totals reconcile with the manifests exactly.
pub fn stats(dir: &Path) -> Result<StatsReport> {
    let files = shard_files(dir)?;
    let mut report = StatsReport {
        shard_count: files.len() as u64,
        record_total: 0,
        token_total: 0,
        tokens_per_language: BTreeMap::new(),
        tokens_per_category: BTreeMap::new(),
    };
    for file in files {
        let (docs, manifest) = read_shard(&file)?;
        report.record_total += manifest.record_count;
        report.token_total += manifest.token_total;
        for (lang, tokens) in &manifest.lang_histogram {
            *report.tokens_per_language.entry(*lang).or_insert(0) += tokens;
        }
        for doc in docs {
            *report
                .tokens_per_category
                .entry(doc.source_category)
                .or_insert(0) += doc.token_count;
        }
    }
    Ok(report)
}

/// Minimal deterministic SVG bar chart of (label, tokens) rows.
pub fn svg_bar_chart(title: &str, rows: &[(String, u64)]) -> String {
    let width = 720u64;
    let bar_h = 22u64;
    let gap = 6u64;
    let left = 120u64;
    let height = 40 + rows.len() as u64 * (bar_h + gap);
    let max = rows.iter().map(|(_, v)| *v).max().unwrap_or(0).max(1);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"monospace\" font-size=\"12\">\n<text x=\"8\" y=\"16\" font-size=\"14\">{}</text>\n",
        xml_escape(title)
    );
    for (i, (label, value)) in rows.iter().enumerate() {
        let y = 32 + i as u64 * (bar_h + gap);
        let w = (width - left - 80) * value / max;
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{ty}\">{label}</text>\n<rect x=\"{left}\" y=\"{y}\" width=\"{w}\" height=\"{bar_h}\" fill=\"#4472a8\"/>\n<text x=\"{vx}\" y=\"{ty}\">{value}</text>\n",
            ty = y + bar_h - 6,
            label = xml_escape(label),
            vx = left + w + 6,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
