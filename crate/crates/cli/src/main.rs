//! `mlcorpus` — one verb per pipeline stage.
//!
//! Exit codes: 0 success, 2 validation/configuration error, 3 stage
//! failure. Logs go to stderr, reports to stdout or `--out`.

use clap::{Parser, Subcommand, ValueEnum};
use mlcorpus::dedup::{DedupConfig, MinHashParams, SubdocUnit};
use mlcorpus::error::Error;
use mlcorpus::ingest::ExtractFormat;
use mlcorpus::lang::LanguageTag;
use mlcorpus::langid::{bundled_model, train_langid, LangIdModel};
use mlcorpus::mixture::{
    allocate, emit_training_config, lr_schedule, parse_token_count, sample_shards,
    utilization_report, Category, MixturePlan, MixtureSpec, ShortfallPolicy, Stage, StageBudget,
};
use mlcorpus::parallel::{
    bundled_templates, default_pair_thresholds, expand_corpus, pair_heuristic_filter,
    pair_similarity, parse_pairs_tsv, LangNameMap, PairDecision, TemplatePolicy,
    DEFAULT_SIMILARITY_FLOOR,
};
use mlcorpus::pipeline::{
    dedup_docs, ingest_dir, langid_docs, read_stage_docs, run as run_pipeline, shard_files, stats,
    svg_bar_chart, PipelineConfig,
};
use mlcorpus::quality::{
    calibrate_thresholds, compute_quality, filter_corpus, train_lms_from_dir, Blocklist, LmTable,
    StopwordTable, ThresholdSet,
};
use mlcorpus::sft::{
    compile_rules, curate, default_cleaning_rules, load_rules, read_sft_jsonl, write_drop_report,
    write_sft_jsonl, CurationComponents, CurationConfig, HeuristicQualityScorer,
    NgramConditionalScorer, SemanticDedupConfig, DEFAULT_IFD_BAND, DEFAULT_QA_SIMILARITY_FLOOR,
};
use mlcorpus::shard::{read_shard, write_shard, ShardManifest};
use mlcorpus::synthesis::client::{
    AuditLog, ChatClient, ClientConfig, EchoClient, GenParams, HttpChatClient, RetryPolicy,
};
use mlcorpus::synthesis::{
    assemble_prompt, build_preference_pairs, generate, keywords_attr, preference_target_languages,
    sample_keywords, translate_prompt_set, KeywordPool, PreferLongerJudge, PromptSpec, Recipe,
    SourcePrompt,
};
use mlcorpus::textsim::{CharNgramScorer, WordNgramEmbedder};
use mlcorpus::tokenize::{TokenizerRegistry, DEFAULT_TOKENIZER_ID};
use mlcorpus::ngram_lm::NgramLm;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "mlcorpus", version, about = "Multilingual corpus curation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Html,
    Warc,
}

impl From<FormatArg> for ExtractFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Plain => ExtractFormat::Plain,
            FormatArg::Html => ExtractFormat::Html,
            FormatArg::Warc => ExtractFormat::Warc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    I,
    Ii,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    RoundRobin,
    SeededUniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShortfallArg {
    Error,
    Rescale,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubdocArg {
    Paragraph,
    Line,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientArg {
    Http,
    StubEcho,
}

#[derive(Subcommand)]
enum Command {
    /// Extract raw files into a document shard.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "plain")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        url_rules: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_TOKENIZER_ID)]
        tokenizer: String,
    },
    /// Tag document languages; optionally train or persist the model.
    Langid {
        #[arg(long, required_unless_present = "train")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = mlcorpus::langid::DEFAULT_CONFIDENCE_FLOOR)]
        floor: f64,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Train a model from a `<code><TAB>train<TAB><sentence>` TSV
        /// instead of classifying (use with --save-model).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Score quality metrics and filter a shard directory.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        stopwords_dir: Option<PathBuf>,
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// Directory of <code>.txt corpora for per-language perplexity LMs.
        #[arg(long)]
        lm_dir: Option<PathBuf>,
        /// Calibrate thresholds from the input, e.g. "perplexity=90,special_symbol_ratio=95".
        #[arg(long)]
        calibrate: Option<String>,
        #[arg(long)]
        thresholds_out: Option<PathBuf>,
    },
    /// Near-duplicate removal over a shard directory.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long, default_value_t = 128)]
        perms: u32,
        #[arg(long, default_value_t = 16)]
        bands: u32,
        #[arg(long, default_value_t = 8)]
        rows: u32,
        #[arg(long, default_value_t = 5)]
        shingle_size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        subdoc: Option<SubdocArg>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Filter sentence pairs and expand them through translation templates.
    Parallel {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "seeded-uniform")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SIMILARITY_FLOOR)]
        min_similarity: f64,
        #[arg(long, default_value = DEFAULT_TOKENIZER_ID)]
        tokenizer: String,
    },
    /// Assemble synthetic-data prompts from a keyword pool.
    Synth {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum)]
        recipe: RecipeArg,
        /// JSON object of template attributes.
        #[arg(long)]
        attrs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        keywords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        prompts: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also call the generator endpoint for completions.
        #[arg(long, value_enum)]
        client: Option<ClientArg>,
        #[arg(long)]
        client_config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Plan a training-stage mixture over a shard inventory.
    Mixture {
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "error")]
        policy: ShortfallArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        utilization: Option<PathBuf>,
        /// LR sample stride for the emitted config, e.g. "1B".
        #[arg(long, default_value = "10B")]
        lr_stride: String,
    },
    /// Print the warmup-cosine schedule.
    LrSchedule {
        #[arg(long, value_enum, default_value = "i")]
        stage: StageArg,
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        max_lr: Option<f64>,
        #[arg(long)]
        warmup: Option<String>,
        #[arg(long, default_value_t = 0.10)]
        end_fraction: f64,
        #[arg(long, default_value_t = 17)]
        points: u64,
    },
    /// Curate SFT records: clean, validate, score, select, dedup.
    Sft {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        drop_report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_QA_SIMILARITY_FLOOR)]
        qa_floor: f64,
        #[arg(long, default_value_t = DEFAULT_IFD_BAND.0)]
        ifd_lo: f64,
        #[arg(long, default_value_t = DEFAULT_IFD_BAND.1)]
        ifd_hi: f64,
        #[arg(long)]
        ifd_top_k: Option<usize>,
        #[arg(long)]
        quality_floor: Option<f64>,
        #[arg(long, default_value_t = mlcorpus::sft::DEFAULT_EMBEDDING_THRESHOLD)]
        dedup_threshold: f64,
    },
    /// Build preference pairs from prompts via generator + judge.
    Prefs {
        /// JSON-Lines of {"prompt", "lang"}.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_enum, default_value = "stub-echo")]
        client: ClientArg,
        #[arg(long)]
        client_config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        responses: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Translate the prompt set into the 28 target languages first.
        #[arg(long)]
        translate: bool,
    },
    /// Token statistics of a shard directory.
    Stats {
        #[arg(long)]
        shards: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the configured stage cascade.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        from_stage: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Explanation,
    Story,
    FewshotSft,
}

impl From<RecipeArg> for Recipe {
    fn from(r: RecipeArg) -> Self {
        match r {
            RecipeArg::Explanation => Recipe::Explanation,
            RecipeArg::Story => Recipe::Story,
            RecipeArg::FewshotSft => Recipe::FewshotSft,
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidPercentile(_)
        | Error::InvalidRule { .. }
        | Error::UnknownTokenizer(_)
        | Error::UnknownLanguage(_)
        | Error::MissingAttribute(_)
        | Error::MissingStage(_)
        | Error::Json(_) => 2,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> mlcorpus::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => println!("{content}"),
    }
    Ok(())
}

fn stage_budget(
    stage: Stage,
    budget: &Option<String>,
    max_lr: Option<f64>,
    warmup: &Option<String>,
    end_fraction: f64,
) -> mlcorpus::Result<StageBudget> {
    let default = match stage {
        Stage::I => StageBudget::stage_i_default(),
        Stage::II => StageBudget::stage_ii_default(),
    };
    let tokens = budget
        .as_deref()
        .map(parse_token_count)
        .transpose()?
        .unwrap_or(default.token_budget);
    // An explicit warmup wins; otherwise keep the default's warmup share
    // of the (possibly overridden) budget.
    let warmup_tokens = match warmup.as_deref().map(parse_token_count).transpose()? {
        Some(w) => w,
        None => ((tokens as u128 * default.warmup_tokens as u128
            / default.token_budget as u128) as u64)
            .max(1),
    };
    StageBudget::new(
        stage,
        tokens,
        max_lr.unwrap_or(default.max_lr),
        end_fraction,
        warmup_tokens,
    )
}

fn load_inventory(dir: &Path) -> mlcorpus::Result<BTreeMap<Category, Vec<ShardManifest>>> {
    let mut inventory: BTreeMap<Category, Vec<ShardManifest>> = BTreeMap::new();
    for cat in Category::ALL {
        let sub = dir.join(cat.code());
        if !sub.is_dir() {
            continue;
        }
        let mut manifests = Vec::new();
        for shard in shard_files(&sub)? {
            let (_, manifest) = read_shard(&shard)?;
            manifests.push(manifest);
        }
        inventory.insert(cat, manifests);
    }
    Ok(inventory)
}

fn make_client(
    kind: ClientArg,
    config: &Option<PathBuf>,
) -> mlcorpus::Result<(Box<dyn ChatClient>, String, usize)> {
    match kind {
        ClientArg::StubEcho => Ok((Box::new(EchoClient), "stub-echo".to_string(), 1)),
        ClientArg::Http => {
            let path = config.as_ref().ok_or_else(|| {
                Error::Config("--client http requires --client-config".into())
            })?;
            let cfg: ClientConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let model = cfg.model.clone();
            let concurrency = cfg.max_concurrency.max(1);
            Ok((Box::new(HttpChatClient::new(cfg)), model, concurrency))
        }
    }
}

fn dispatch(command: Command) -> mlcorpus::Result<()> {
    match command {
        Command::Ingest {
            input,
            format,
            out,
            url_rules,
            tokenizer,
        } => {
            let registry = TokenizerRegistry::default();
            let (docs, dropped) =
                ingest_dir(&input, format.into(), &tokenizer, &url_rules, &registry)?;
            std::fs::create_dir_all(&out)?;
            let manifest = write_shard(&docs, &out.join("ingest-00000.jsonl"), &tokenizer, "cli")?;
            eprintln!("ingested {} documents, dropped {dropped}", docs.len());
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(())
        }
        Command::Langid {
            input,
            out,
            floor,
            model,
            train,
            save_model,
        } => {
            if let Some(corpus_path) = train {
                let content = std::fs::read_to_string(&corpus_path)?;
                let mut corpus = Vec::new();
                for line in content.lines() {
                    let mut parts = line.splitn(3, '\t');
                    if let (Some(code), Some(_), Some(sentence)) =
                        (parts.next(), parts.next(), parts.next())
                    {
                        corpus.push((code.parse::<LanguageTag>()?, sentence));
                    }
                }
                let classes: Vec<LanguageTag> = {
                    let mut langs: Vec<LanguageTag> = corpus.iter().map(|(l, _)| *l).collect();
                    langs.sort();
                    langs.dedup();
                    langs
                };
                let trained = train_langid(&corpus, &classes)?;
                let target = save_model
                    .ok_or_else(|| Error::Config("--train requires --save-model".into()))?;
                trained.save(&target)?;
                eprintln!("trained model over {} classes", classes.len());
                return Ok(());
            }
            let input = input.expect("clap enforces input without --train");
            let out = out.ok_or_else(|| Error::Config("--out is required".into()))?;
            let loaded;
            let model_ref = match model {
                Some(path) => {
                    loaded = LangIdModel::load(&path)?;
                    &loaded
                }
                None => bundled_model(),
            };
            let docs = read_stage_docs(&input)?;
            let before = docs.len();
            let (docs, dropped) = langid_docs(docs, floor, model_ref)?;
            std::fs::create_dir_all(&out)?;
            let manifest = write_shard(
                &docs,
                &out.join("langid-00000.jsonl"),
                DEFAULT_TOKENIZER_ID,
                "cli",
            )?;
            eprintln!("classified {before} documents, dropped {dropped} below floor {floor}");
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(())
        }
        Command::Filter {
            input,
            out,
            thresholds,
            stopwords_dir,
            blocklist,
            lm_dir,
            calibrate,
            thresholds_out,
        } => {
            let stopwords = match stopwords_dir {
                Some(dir) => StopwordTable::load_dir(&dir)?,
                None => StopwordTable::bundled().clone(),
            };
            let blocklist = match blocklist {
                Some(path) => Blocklist::load(&path)?,
                None => Blocklist::default(),
            };
            let lms = match lm_dir {
                Some(dir) => train_lms_from_dir(
                    &dir,
                    mlcorpus::ngram_lm::DEFAULT_ORDER,
                    mlcorpus::ngram_lm::DEFAULT_ADD_K,
                )?,
                None => LmTable::new(),
            };
            let docs = read_stage_docs(&input)?;
            let threshold_set = if let Some(spec_str) = calibrate {
                let mut spec = BTreeMap::new();
                for part in spec_str.split(',') {
                    let (metric, pct) = part.split_once('=').ok_or_else(|| {
                        Error::Config(format!("bad calibration entry `{part}`"))
                    })?;
                    spec.insert(
                        metric.trim().to_string(),
                        pct.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Config(e.to_string()))?,
                    );
                }
                let mut by_lang: BTreeMap<LanguageTag, Vec<_>> = BTreeMap::new();
                for doc in &docs {
                    let mut report = compute_quality(doc, &stopwords, &blocklist);
                    if let Some(lm) = lms.get(&doc.lang) {
                        report.perplexity = Some(mlcorpus::quality::score_perplexity(doc, lm)?);
                    }
                    by_lang.entry(doc.lang).or_default().push(report);
                }
                let mut merged: Option<ThresholdSet> = None;
                for (lang, sample) in by_lang {
                    let set =
                        calibrate_thresholds(lang, &sample, &spec, &input.display().to_string())?;
                    match merged.as_mut() {
                        Some(m) => m.merge(set),
                        None => merged = Some(set),
                    }
                }
                let set = merged.ok_or(Error::EmptySample)?;
                if let Some(path) = &thresholds_out {
                    set.save(path)?;
                    eprintln!("calibrated thresholds written to {}", path.display());
                }
                set
            } else if let Some(path) = thresholds {
                ThresholdSet::load(&path)?
            } else {
                let langs: std::collections::BTreeSet<LanguageTag> =
                    docs.iter().map(|d| d.lang).collect();
                ThresholdSet::heuristic_defaults(langs, &stopwords.languages())
            };
            let outcome = filter_corpus(docs, &threshold_set, &stopwords, &blocklist, &lms)?;
            std::fs::create_dir_all(&out)?;
            let manifest = write_shard(
                &outcome.kept,
                &out.join("filter-00000.jsonl"),
                DEFAULT_TOKENIZER_ID,
                "cli",
            )?;
            eprintln!(
                "kept {}, rejected {}",
                outcome.kept.len(),
                outcome.rejected.len()
            );
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(())
        }
        Command::Dedup {
            input,
            out,
            threshold,
            perms,
            bands,
            rows,
            shingle_size,
            seed,
            subdoc,
            report,
        } => {
            let registry = TokenizerRegistry::default();
            let docs = read_stage_docs(&input)?;
            std::fs::create_dir_all(&out)?;
            let report_path =
                report.unwrap_or_else(|| out.join("duplicate-clusters.jsonl"));
            let config = DedupConfig {
                threshold,
                bands,
                rows,
                minhash: MinHashParams {
                    perms,
                    shingle_size,
                    seed,
                },
            };
            let unit = subdoc.map(|s| match s {
                SubdocArg::Paragraph => SubdocUnit::Paragraph,
                SubdocArg::Line => SubdocUnit::Line,
            });
            let (survivors, dropped, clusters) =
                dedup_docs(docs, &config, unit, &registry, &report_path)?;
            let manifest = write_shard(
                &survivors,
                &out.join("dedup-00000.jsonl"),
                DEFAULT_TOKENIZER_ID,
                "cli",
            )?;
            eprintln!(
                "kept {}, removed {dropped} across {} clusters",
                survivors.len(),
                clusters.len()
            );
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(())
        }
        Command::Parallel {
            pairs,
            out,
            policy,
            seed,
            min_similarity,
            tokenizer,
        } => {
            let registry = TokenizerRegistry::default();
            let content = std::fs::read_to_string(&pairs)?;
            let mut parsed = parse_pairs_tsv(&content, &pairs.display().to_string())?;
            let stopwords = StopwordTable::bundled();
            let langs: std::collections::BTreeSet<LanguageTag> =
                parsed.iter().map(|p| p.src_lang).collect();
            let thresholds = default_pair_thresholds(langs);
            let scorer = CharNgramScorer::default();
            let before = parsed.len();
            let mut kept = Vec::new();
            for mut pair in parsed.drain(..) {
                pair.compute_features(stopwords);
                if let PairDecision::Reject(_) = pair_heuristic_filter(&pair, &thresholds)? {
                    continue;
                }
                let sim = pair_similarity(&pair, &scorer)?;
                pair.similarity = Some(sim);
                if sim < min_similarity {
                    continue;
                }
                kept.push(pair);
            }
            let docs = expand_corpus(
                &kept,
                &bundled_templates(),
                match policy {
                    PolicyArg::RoundRobin => TemplatePolicy::RoundRobin,
                    PolicyArg::SeededUniform => TemplatePolicy::SeededUniform,
                },
                seed,
                &LangNameMap::default_english(),
                &registry,
                &tokenizer,
            )?;
            std::fs::create_dir_all(&out)?;
            let manifest =
                write_shard(&docs, &out.join("parallel-00000.jsonl"), &tokenizer, "cli")?;
            eprintln!("kept {} of {before} pairs", kept.len());
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(())
        }
        Command::Synth {
            pool,
            recipe,
            attrs,
            keywords,
            seed,
            prompts,
            out,
            client,
            client_config,
            budget,
            audit,
        } => {
            let pool = KeywordPool::load(&pool)?;
            let base_attrs: BTreeMap<String, String> = match attrs {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => BTreeMap::new(),
            };
            let mut lines = Vec::new();
            let mut assembled = Vec::new();
            for i in 0..prompts {
                let sample = sample_keywords(&pool, keywords, seed.wrapping_add(i as u64))?;
                let mut spec = PromptSpec::new(recipe.into());
                spec.attributes = base_attrs.clone();
                spec.attributes
                    .insert("keywords".into(), keywords_attr(&sample));
                if matches!(recipe, RecipeArg::FewshotSft) {
                    for entry in &sample {
                        spec.sample_docs.push(entry.keyword.clone());
                    }
                }
                let prompt = assemble_prompt(&spec)?;
                lines.push(serde_json::to_string(&serde_json::json!({
                    "id": format!("prompt-{i:06}"),
                    "prompt": prompt,
                }))?);
                assembled.push(prompt);
            }
            std::fs::write(&out, lines.join("\n") + "\n")?;
            eprintln!("assembled {} prompts", assembled.len());

            if let Some(kind) = client {
                let (client, model, concurrency) = make_client(kind, &client_config)?;
                let audit_log = match &audit {
                    Some(path) => AuditLog::to_file(path)?,
                    None => AuditLog::discard(),
                };
                let (records, summary) = generate(
                    &assembled,
                    client.as_ref(),
                    &model,
                    &GenParams::default(),
                    budget,
                    &RetryPolicy::default(),
                    concurrency,
                    &audit_log,
                );
                let completions = out.with_extension("completions.jsonl");
                let mut w = std::io::BufWriter::new(std::fs::File::create(&completions)?);
                for record in &records {
                    serde_json::to_writer(&mut w, record)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
                println!("{}", serde_json::to_string_pretty(&summary)?);
            }
            Ok(())
        }
        Command::Mixture {
            stage,
            budget,
            inventory,
            seed,
            policy,
            out,
            utilization,
            lr_stride,
        } => {
            let stride = parse_token_count(&lr_stride)?;
            let stages: Vec<(MixtureSpec, StageBudget)> = match stage {
                StageArg::I => vec![(
                    MixtureSpec::stage_i_default(),
                    stage_budget(Stage::I, &budget, None, &None, 0.10)?,
                )],
                StageArg::Ii => vec![(
                    MixtureSpec::stage_ii_default(),
                    stage_budget(Stage::II, &budget, None, &None, 0.10)?,
                )],
                StageArg::Both => vec![
                    (MixtureSpec::stage_i_default(), StageBudget::stage_i_default()),
                    (MixtureSpec::stage_ii_default(), StageBudget::stage_ii_default()),
                ],
            };
            let inventory_map = match &inventory {
                Some(dir) => Some(load_inventory(dir)?),
                None => None,
            };
            let mut planned = Vec::new();
            for (spec, budget) in stages {
                let mut plan: MixturePlan = allocate(&spec, &budget)?;
                if let Some(inv) = &inventory_map {
                    sample_shards(
                        &mut plan,
                        &spec,
                        inv,
                        seed,
                        match policy {
                            ShortfallArg::Error => ShortfallPolicy::ErrorOnShortfall,
                            ShortfallArg::Rescale => ShortfallPolicy::Rescale,
                        },
                    )?;
                    if let Some(path) = &utilization {
                        let report = utilization_report(inv, &plan);
                        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
                    }
                }
                planned.push((plan, budget));
            }
            let config = emit_training_config(planned, stride)?;
            let rendered = serde_json::to_string_pretty(&config)?;
            write_or_print(out.as_deref(), &rendered)?;
            Ok(())
        }
        Command::LrSchedule {
            stage,
            budget,
            max_lr,
            warmup,
            end_fraction,
            points,
        } => {
            let stage = match stage {
                StageArg::I => Stage::I,
                StageArg::Ii => Stage::II,
                StageArg::Both => {
                    return Err(Error::Config("lr-schedule takes one stage".into()))
                }
            };
            let budget = stage_budget(stage, &budget, max_lr, &warmup, end_fraction)?;
            let n = points.max(2);
            println!("tokens\tlr");
            for i in 0..n {
                let t = budget.token_budget * i / (n - 1);
                println!("{t}\t{:e}", lr_schedule(&budget, t)?);
            }
            Ok(())
        }
        Command::Sft {
            input,
            out,
            rules,
            drop_report,
            qa_floor,
            ifd_lo,
            ifd_hi,
            ifd_top_k,
            quality_floor,
            dedup_threshold,
        } => {
            let compiled = match rules {
                Some(path) => load_rules(&path)?,
                None => compile_rules(&default_cleaning_rules())?,
            };
            let entries = read_sft_jsonl(&input)?;
            // Static IFD scorer: an n-gram LM trained over this corpus.
            let lm_lines: Vec<String> = entries
                .iter()
                .map(|(_, e)| format!("{} {}", e.instruction, e.response))
                .collect();
            let lm = NgramLm::train(3, 0.1, None, lm_lines.iter().map(String::as_str))?;
            let config = CurationConfig {
                qa_floor,
                ifd_band: (ifd_lo, ifd_hi),
                ifd_top_k,
                quality_floor,
                dedup: SemanticDedupConfig {
                    embedding_threshold: dedup_threshold,
                    ..Default::default()
                },
            };
            let quality = HeuristicQualityScorer;
            let similarity = CharNgramScorer::default();
            let ifd = NgramConditionalScorer { lm };
            let embed = WordNgramEmbedder::default();
            let components = CurationComponents {
                quality: &quality,
                similarity: &similarity,
                ifd: &ifd,
                embed: &embed,
            };
            let outcome = curate(entries, &compiled, &config, &components)?;
            write_sft_jsonl(&outcome.kept, &out)?;
            if let Some(path) = drop_report {
                write_drop_report(&outcome.dropped, &path)?;
            }
            eprintln!(
                "kept {}, dropped {}",
                outcome.kept.len(),
                outcome.dropped.len()
            );
            Ok(())
        }
        Command::Prefs {
            prompts,
            client,
            client_config,
            responses,
            out,
            audit,
            translate,
        } => {
            #[derive(serde::Deserialize)]
            struct PromptRow {
                prompt: String,
                #[serde(default = "default_lang")]
                lang: LanguageTag,
            }
            fn default_lang() -> LanguageTag {
                LanguageTag::En
            }
            let mut rows: Vec<(String, LanguageTag)> = Vec::new();
            for line in std::fs::read_to_string(&prompts)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: PromptRow = serde_json::from_str(line)?;
                rows.push((row.prompt, row.lang));
            }
            let (client, model, _concurrency) = make_client(client, &client_config)?;
            let audit_log = match &audit {
                Some(path) => AuditLog::to_file(path)?,
                None => AuditLog::discard(),
            };
            if translate {
                let sources: Vec<SourcePrompt> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, (p, _))| SourcePrompt {
                        id: format!("src-{i:06}"),
                        text: p.clone(),
                    })
                    .collect();
                let translated = translate_prompt_set(
                    &sources,
                    &preference_target_languages(),
                    client.as_ref(),
                    &model,
                    &RetryPolicy::default(),
                    &audit_log,
                )?;
                rows = translated
                    .into_iter()
                    .flat_map(|(lang, set)| set.into_iter().map(move |t| (t.text, lang)))
                    .collect();
            }
            // Distinct generation configs, one per requested response.
            let configs: Vec<GenParams> = (0..responses.max(2))
                .map(|i| GenParams {
                    temperature: 0.2 + 0.3 * i as f64,
                    ..GenParams::default()
                })
                .collect();
            let (pairs, dropped) = build_preference_pairs(
                &rows,
                client.as_ref(),
                &model,
                &PreferLongerJudge,
                &configs,
                &RetryPolicy::default(),
                &audit_log,
            )?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            for pair in &pairs {
                serde_json::to_writer(&mut w, pair)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            eprintln!("emitted {} pairs, dropped {}", pairs.len(), dropped.len());
            Ok(())
        }
        Command::Stats { shards, svg } => {
            let report = stats(&shards)?;
            if let Some(path) = svg {
                let rows: Vec<(String, u64)> = report
                    .tokens_per_language
                    .iter()
                    .map(|(l, v)| (l.code().to_string(), *v))
                    .collect();
                std::fs::write(&path, svg_bar_chart("tokens per language", &rows))?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Run {
            config,
            from_stage,
            workers,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let report = run_pipeline(&cfg, from_stage.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
