//! Synthetic-data plumbing: keyword pools, prompt assembly for the three
//! bundled recipes, batched generation against an external model endpoint,
//! preference-pair construction, and prompt-set translation.
//!
//! Generation itself is external. Everything here is deterministic given a
//! seed and a client, and all stubs live in [`client`].

pub mod client;

use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::rng::SplitMix64;
use client::{AuditLog, ChatClient, ChatMessage, ChatRequest, GenParams, RetryPolicy};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub keyword: String,
    pub subject: String,
}

/// Pool of (keyword, subject) entries feeding the explanation/story
/// recipes. The production target size is ~100k entries; that is a config
/// value, not a constant.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KeywordPool {
    entries: BTreeSet<KeywordEntry>,
}

impl KeywordPool {
    pub fn insert(&mut self, keyword: impl Into<String>, subject: impl Into<String>) -> bool {
        self.entries.insert(KeywordEntry {
            keyword: keyword.into(),
            subject: subject.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &KeywordEntry> {
        self.entries.iter()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Draw `k` distinct entries, order seeded.
pub fn sample_keywords(pool: &KeywordPool, k: usize, seed: u64) -> Result<Vec<KeywordEntry>> {
    if k > pool.len() {
        return Err(Error::SampleTooLarge {
            requested: k,
            available: pool.len(),
        });
    }
    let mut all: Vec<KeywordEntry> = pool.iter().cloned().collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut all);
    all.truncate(k);
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Explanation,
    Story,
    FewshotSft,
}

/// Attribute-driven prompt request. `sample_docs` feeds the few-shot
/// recipe; everything else goes through `attributes`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptSpec {
    pub recipe: Option<Recipe>,
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub sample_docs: Vec<String>,
}

impl PromptSpec {
    pub fn new(recipe: Recipe) -> Self {
        Self {
            recipe: Some(recipe),
            ..Default::default()
        }
    }

    pub fn attr(mut self, name: &str, value: impl Into<String>) -> Self {
        self.attributes.insert(name.to_string(), value.into());
        self
    }

    pub fn sample_doc(mut self, doc: impl Into<String>) -> Self {
        self.sample_docs.push(doc.into());
        self
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.attributes
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingAttribute(name.to_string()))
    }
}

pub const EXPLANATION_TEMPLATE: &str = "Suppose that you are a/an {role_1} in {subject}. Please explain the following keywords and meet the following requirements:\n(1) The keywords: {keywords};\n(2) Each keyword explanation should contain at least three sentences. You can generate a story about the keyword for better explanation;\n(3) The explanations suit {role_2} students;\n(4) Summarize the explanations.\nYour answer should be a list of keywords. Make the explanations correct, useful, understandable, and diverse.";

pub const STORY_TEMPLATE: &str = "Assume that you are a/an {role_1} in {subject}. Before you teach students new vocabulary, please write a {type_passage} about the new knowledge and meet the following requirements:\n(1) It must contain keywords: {keywords};\n(2) Its setting should be {scene};\n(3) Should be between {min_length} and {max_length} words in length;\n(4) The writing style should be {style};\n(5) The suitable audience is {role_2};\n(6) Should end with {ending};\n(7) Should be written in {language}.";

pub const FEWSHOT_PREAMBLE: &str = "I want you to act as a Sample Generator. Your goal is to draw inspiration from the Given Sample to create a brand new sample. This new sample should belong to the same domain as the Given Sample but be even rarer. The length and complexity of the Created Sample should be similar to that of the Given Sample. The Created Sample must be reasonable and understandable by humans. The terms Given Sample, Created Sample, 'given sample', and 'created sample' are not allowed to appear in the Created Sample.";

const EXPLANATION_ATTRS: &[&str] = &["role_1", "subject", "keywords", "role_2"];
const STORY_ATTRS: &[&str] = &[
    "role_1",
    "subject",
    "type_passage",
    "keywords",
    "scene",
    "min_length",
    "max_length",
    "style",
    "role_2",
    "ending",
    "language",
];

fn fill(template: &str, spec: &PromptSpec, required: &[&str]) -> Result<String> {
    let mut out = template.to_string();
    for name in required {
        let value = spec.require(name)?;
        out = out.replace(&format!("{{{name}}}"), value);
    }
    Ok(out)
}

/// Render a prompt from its recipe template. Every required attribute must
/// be present; no `{placeholder}` survives in the output.
pub fn assemble_prompt(spec: &PromptSpec) -> Result<String> {
    let recipe = spec
        .recipe
        .ok_or_else(|| Error::MissingAttribute("recipe".into()))?;
    let rendered = match recipe {
        Recipe::Explanation => fill(EXPLANATION_TEMPLATE, spec, EXPLANATION_ATTRS)?,
        Recipe::Story => fill(STORY_TEMPLATE, spec, STORY_ATTRS)?,
        Recipe::FewshotSft => {
            if spec.sample_docs.is_empty() {
                return Err(Error::MissingAttribute("sample_docs".into()));
            }
            let mut out = String::from(FEWSHOT_PREAMBLE);
            out.push_str("\n\nGiven Sample:\n");
            for (i, doc) in spec.sample_docs.iter().enumerate() {
                out.push_str(&format!("({}) {doc}\n", i + 1));
            }
            out.push_str("\nCreated Sample:");
            out
        }
    };
    debug_assert!(
        !rendered.contains("{role_1}") && !rendered.contains("{keywords}"),
        "unresolved placeholder in rendered prompt"
    );
    Ok(rendered)
}

/// Join sampled keywords for the `{keywords}` attribute.
pub fn keywords_attr(entries: &[KeywordEntry]) -> String {
    entries
        .iter()
        .map(|e| e.keyword.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum GenStatus {
    Succeeded { text: String, model_id: String },
    Failed { error: String },
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub prompt: String,
    #[serde(flatten)]
    pub status: GenStatus,
    pub attempts: u32,
}

/// Batch accounting. `issued` counts prompts entering the batch and always
/// equals succeeded + failed + skipped; `wire_requests` counts actual calls
/// (retries included) and never exceeds the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchSummary {
    pub issued: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub skipped: u64,
    pub wire_requests: u64,
}

/// Run a prompt batch. `budget` caps total wire requests (retries count);
/// prompts beyond it are marked skipped, results keep prompt order.
///
/// With no budget and `concurrency > 1` the requests fan out across
/// threads; assembly is by prompt index, so results do not depend on
/// completion order. Budgeted batches run sequentially, keeping the wire
/// accounting exact.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    prompts: &[String],
    client: &dyn ChatClient,
    model: &str,
    params: &GenParams,
    budget: Option<u64>,
    retry: &RetryPolicy,
    concurrency: usize,
    audit: &AuditLog,
) -> (Vec<GenerationRecord>, BatchSummary) {
    let mut summary = BatchSummary {
        issued: prompts.len() as u64,
        ..Default::default()
    };
    if budget.is_none() && concurrency > 1 && prompts.len() > 1 {
        let results = fan_out(prompts, client, model, params, retry, concurrency);
        let mut records = Vec::with_capacity(prompts.len());
        for (index, (result, attempts, latency)) in results.into_iter().enumerate() {
            summary.wire_requests += u64::from(attempts);
            let prompt = &prompts[index];
            let status = match result {
                Ok(response) => {
                    summary.succeeded += 1;
                    audit.record("generator", prompt, "succeeded", latency);
                    GenStatus::Succeeded {
                        text: response.text,
                        model_id: model.to_string(),
                    }
                }
                Err(e) => {
                    summary.failed += 1;
                    audit.record("generator", prompt, "failed", latency);
                    GenStatus::Failed {
                        error: e.to_string(),
                    }
                }
            };
            records.push(GenerationRecord {
                index,
                prompt: prompt.clone(),
                status,
                attempts,
            });
        }
        return (records, summary);
    }

    let mut records = Vec::with_capacity(prompts.len());
    for (index, prompt) in prompts.iter().enumerate() {
        let remaining = budget.map(|b| b.saturating_sub(summary.wire_requests));
        if remaining == Some(0) {
            summary.skipped += 1;
            audit.record("generator", prompt, "skipped", 0);
            records.push(GenerationRecord {
                index,
                prompt: prompt.clone(),
                status: GenStatus::Skipped,
                attempts: 0,
            });
            continue;
        }
        let capped_retry = match remaining {
            Some(r) => RetryPolicy {
                max_attempts: retry.max_attempts.min(r.min(u64::from(u32::MAX)) as u32),
                base_delay_ms: retry.base_delay_ms,
            },
            None => *retry,
        };
        let request = ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::user(prompt.clone())],
            params: params.clone(),
        };
        let started = Instant::now();
        let (result, attempts) = capped_retry.run(client, &request);
        let latency = started.elapsed().as_millis() as u64;
        summary.wire_requests += u64::from(attempts);
        let status = match result {
            Ok(response) => {
                summary.succeeded += 1;
                audit.record("generator", prompt, "succeeded", latency);
                GenStatus::Succeeded {
                    text: response.text,
                    model_id: model.to_string(),
                }
            }
            Err(e) => {
                summary.failed += 1;
                audit.record("generator", prompt, "failed", latency);
                GenStatus::Failed {
                    error: e.to_string(),
                }
            }
        };
        records.push(GenerationRecord {
            index,
            prompt: prompt.clone(),
            status,
            attempts,
        });
    }
    (records, summary)
}

type WireResult = (Result<client::ChatResponse, client::ClientError>, u32, u64);

/// Scoped-thread fan-out with a fixed worker cap; the result vector is
/// indexed by prompt position.
fn fan_out(
    prompts: &[String],
    client: &dyn ChatClient,
    model: &str,
    params: &GenParams,
    retry: &RetryPolicy,
    concurrency: usize,
) -> Vec<WireResult> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<WireResult>>> =
        (0..prompts.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(prompts.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let request = ChatRequest {
                    model: model.to_string(),
                    messages: vec![ChatMessage::user(prompts[i].clone())],
                    params: params.clone(),
                };
                let started = Instant::now();
                let (result, attempts) = retry.run(client, &request);
                let latency = started.elapsed().as_millis() as u64;
                *slots[i].lock().unwrap() = Some((result, attempts, latency));
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeMeta {
    pub model_id: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeChoice {
    PreferA,
    PreferB,
    Tie,
}

#[derive(Debug, Clone)]
pub struct JudgeVerdict {
    pub choice: JudgeChoice,
    pub meta: JudgeMeta,
}

pub trait JudgeClient: Send + Sync {
    fn judge(&self, prompt: &str, a: &str, b: &str) -> Result<JudgeVerdict, client::ClientError>;
}

pub const DEFAULT_JUDGE_CRITERIA: &str = "relevance, coherence, and adherence to the prompt";

/// Judge backed by the chat wire contract: asks for a single-letter verdict
/// against the configured criteria and parses A/B/TIE.
pub struct LlmJudge<'a> {
    pub client: &'a dyn ChatClient,
    pub model: String,
    pub criteria: String,
}

impl<'a> LlmJudge<'a> {
    pub fn new(client: &'a dyn ChatClient, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
            criteria: DEFAULT_JUDGE_CRITERIA.to_string(),
        }
    }
}

impl JudgeClient for LlmJudge<'_> {
    fn judge(&self, prompt: &str, a: &str, b: &str) -> Result<JudgeVerdict, client::ClientError> {
        let instruction = format!(
            "You are evaluating two responses to the same prompt based on predefined criteria such as {}.\nPrompt:\n{prompt}\n\nResponse A:\n{a}\n\nResponse B:\n{b}\n\nReply with exactly one word: A, B, or TIE.",
            self.criteria
        );
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(instruction)],
            params: GenParams {
                temperature: 0.0,
                ..GenParams::default()
            },
        };
        let response = self.client.complete(&request)?;
        let token = response
            .text
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        let choice = match token.trim_matches(|c: char| !c.is_ascii_alphabetic()) {
            "A" => JudgeChoice::PreferA,
            "B" => JudgeChoice::PreferB,
            _ => JudgeChoice::Tie,
        };
        Ok(JudgeVerdict {
            choice,
            meta: JudgeMeta {
                model_id: self.model.clone(),
                rationale: response.text,
            },
        })
    }
}

/// Stub judge preferring the longer response; equal lengths tie.
pub struct PreferLongerJudge;

impl JudgeClient for PreferLongerJudge {
    fn judge(&self, _prompt: &str, a: &str, b: &str) -> Result<JudgeVerdict, client::ClientError> {
        let choice = match a.len().cmp(&b.len()) {
            std::cmp::Ordering::Greater => JudgeChoice::PreferA,
            std::cmp::Ordering::Less => JudgeChoice::PreferB,
            std::cmp::Ordering::Equal => JudgeChoice::Tie,
        };
        Ok(JudgeVerdict {
            choice,
            meta: JudgeMeta {
                model_id: "stub-prefer-longer".into(),
                rationale: "longer response wins".into(),
            },
        })
    }
}

/// Emitted preference record: JSON-Lines
/// {prompt, lang, chosen, rejected, judge_meta}. The generation configs
/// stay in memory for invariant checks and never hit the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub lang: LanguageTag,
    pub chosen: String,
    pub rejected: String,
    #[serde(skip)]
    pub gen_configs: Option<(GenParams, GenParams)>,
    pub judge_meta: JudgeMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedPrompt {
    pub prompt: String,
    pub lang: LanguageTag,
    pub reason: String,
}

/// Generate `configs.len()` responses per prompt under pairwise-distinct
/// configurations, then let the judge pick chosen vs rejected. Ties and
/// identical texts drop the prompt with a logged reason; generation
/// failures degrade per prompt, never aborting the batch.
pub fn build_preference_pairs(
    prompts: &[(String, LanguageTag)],
    client: &dyn ChatClient,
    model: &str,
    judge: &dyn JudgeClient,
    configs: &[GenParams],
    retry: &RetryPolicy,
    audit: &AuditLog,
) -> Result<(Vec<PreferencePair>, Vec<DroppedPrompt>)> {
    if configs.len() < 2 {
        return Err(Error::InvalidParams(
            "preference building needs at least two generation configs".into(),
        ));
    }
    for i in 0..configs.len() {
        for j in i + 1..configs.len() {
            if configs[i] == configs[j] {
                return Err(Error::InvalidParams(format!(
                    "generation configs {i} and {j} are identical"
                )));
            }
        }
    }

    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (prompt, lang) in prompts {
        let mut responses: Vec<(String, &GenParams)> = Vec::new();
        for params in configs {
            let request = ChatRequest {
                model: model.to_string(),
                messages: vec![ChatMessage::user(prompt.clone())],
                params: params.clone(),
            };
            let started = Instant::now();
            let (result, _) = retry.run(client, &request);
            let latency = started.elapsed().as_millis() as u64;
            match result {
                Ok(r) => {
                    audit.record("generator", prompt, "succeeded", latency);
                    responses.push((r.text, params));
                }
                Err(_) => audit.record("generator", prompt, "failed", latency),
            }
        }
        if responses.len() < 2 {
            let reason = if responses.is_empty() {
                "all generations failed"
            } else {
                "fewer than two responses generated"
            };
            dropped.push(DroppedPrompt {
                prompt: prompt.clone(),
                lang: *lang,
                reason: reason.to_string(),
            });
            continue;
        }

        // Sequential playoff: the winner so far meets the next response.
        let mut champion = 0usize;
        let mut last_loser: Option<usize> = None;
        let mut verdict_meta: Option<JudgeMeta> = None;
        let mut tied = false;
        for contender in 1..responses.len() {
            let started = Instant::now();
            let verdict = judge.judge(prompt, &responses[champion].0, &responses[contender].0);
            let latency = started.elapsed().as_millis() as u64;
            match verdict {
                Ok(v) => {
                    audit.record("judge", prompt, "succeeded", latency);
                    match v.choice {
                        JudgeChoice::PreferA => {
                            last_loser = Some(contender);
                            verdict_meta = Some(v.meta);
                        }
                        JudgeChoice::PreferB => {
                            last_loser = Some(champion);
                            champion = contender;
                            verdict_meta = Some(v.meta);
                        }
                        JudgeChoice::Tie => {
                            tied = true;
                            break;
                        }
                    }
                }
                Err(_) => {
                    audit.record("judge", prompt, "failed", latency);
                    tied = true;
                    break;
                }
            }
        }
        let Some(loser) = last_loser else {
            dropped.push(DroppedPrompt {
                prompt: prompt.clone(),
                lang: *lang,
                reason: "judge abstained (tie)".into(),
            });
            continue;
        };
        if tied || responses[champion].0 == responses[loser].0 {
            dropped.push(DroppedPrompt {
                prompt: prompt.clone(),
                lang: *lang,
                reason: if tied {
                    "judge abstained (tie)".into()
                } else {
                    "identical responses".to_string()
                },
            });
            continue;
        }
        pairs.push(PreferencePair {
            prompt: prompt.clone(),
            lang: *lang,
            chosen: responses[champion].0.clone(),
            rejected: responses[loser].0.clone(),
            gen_configs: Some((responses[champion].1.clone(), responses[loser].1.clone())),
            judge_meta: verdict_meta.unwrap_or(JudgeMeta {
                model_id: "unknown".into(),
                rationale: String::new(),
            }),
        });
    }
    Ok((pairs, dropped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourcePrompt {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatedPrompt {
    /// Provenance: id of the source-language record.
    pub source_id: String,
    pub lang: LanguageTag,
    pub text: String,
}

/// The 28 translation targets: every covered language except English.
pub fn preference_target_languages() -> Vec<LanguageTag> {
    LanguageTag::ALL
        .into_iter()
        .filter(|l| *l != LanguageTag::En)
        .collect()
}

/// Translate a prompt set into each target language via the chat contract.
/// Per-record failures are logged and skipped; provenance is preserved.
pub fn translate_prompt_set(
    prompts: &[SourcePrompt],
    languages: &[LanguageTag],
    translator: &dyn ChatClient,
    model: &str,
    retry: &RetryPolicy,
    audit: &AuditLog,
) -> Result<BTreeMap<LanguageTag, Vec<TranslatedPrompt>>> {
    let mut out: BTreeMap<LanguageTag, Vec<TranslatedPrompt>> = BTreeMap::new();
    for &lang in languages {
        let name = lang.display_name()?;
        let mut translated = Vec::with_capacity(prompts.len());
        for prompt in prompts {
            let request = ChatRequest {
                model: model.to_string(),
                messages: vec![
                    ChatMessage::system(format!(
                        "Translate the user message into {name}. Output only the translation."
                    )),
                    ChatMessage::user(prompt.text.clone()),
                ],
                params: GenParams {
                    temperature: 0.0,
                    ..GenParams::default()
                },
            };
            let started = Instant::now();
            let (result, _) = retry.run(translator, &request);
            let latency = started.elapsed().as_millis() as u64;
            match result {
                Ok(r) => {
                    audit.record("translator", &prompt.text, "succeeded", latency);
                    translated.push(TranslatedPrompt {
                        source_id: prompt.id.clone(),
                        lang,
                        text: r.text,
                    });
                }
                Err(_) => audit.record("translator", &prompt.text, "failed", latency),
            }
        }
        out.insert(lang, translated);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use client::{CountingClient, EchoClient, FlakyClient, ScriptedClient};

    fn pool_of(n: usize) -> KeywordPool {
        let mut pool = KeywordPool::default();
        for i in 0..n {
            pool.insert(format!("kw{i}"), "physics");
        }
        pool
    }

    #[test]
    fn sampling_whole_pool_returns_everything() {
        let pool = pool_of(7);
        let sample = sample_keywords(&pool, 7, 1).unwrap();
        assert_eq!(sample.len(), 7);
        let set: BTreeSet<_> = sample.into_iter().collect();
        assert_eq!(set.len(), 7);
    }

    #[test]
    fn sampling_zero_returns_empty() {
        assert!(sample_keywords(&pool_of(3), 0, 9).unwrap().is_empty());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let pool = pool_of(20);
        assert_eq!(
            sample_keywords(&pool, 5, 42).unwrap(),
            sample_keywords(&pool, 5, 42).unwrap()
        );
    }

    #[test]
    fn oversampling_errors() {
        assert!(matches!(
            sample_keywords(&pool_of(2), 3, 0),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn pool_round_trips() {
        let pool = pool_of(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.json");
        pool.save(&p).unwrap();
        let back = KeywordPool::load(&p).unwrap();
        assert_eq!(back.len(), pool.len());
    }

    #[test]
    fn explanation_prompt_opens_with_role_and_subject() {
        let spec = PromptSpec::new(Recipe::Explanation)
            .attr("role_1", "teacher")
            .attr("subject", "physics")
            .attr("keywords", "inertia")
            .attr("role_2", "high school");
        let prompt = assemble_prompt(&spec).unwrap();
        assert!(prompt.starts_with("Suppose that you are a/an teacher in physics."));
        assert!(!prompt.contains('{'));
    }

    #[test]
    fn story_prompt_missing_scene_names_the_attribute() {
        let spec = PromptSpec::new(Recipe::Story)
            .attr("role_1", "teacher")
            .attr("subject", "history")
            .attr("type_passage", "story")
            .attr("keywords", "empire")
            .attr("min_length", "100")
            .attr("max_length", "200")
            .attr("style", "narrative")
            .attr("role_2", "college")
            .attr("ending", "a question")
            .attr("language", "French");
        match assemble_prompt(&spec) {
            Err(Error::MissingAttribute(name)) => assert_eq!(name, "scene"),
            other => panic!("expected MissingAttribute(scene), got {other:?}"),
        }
    }

    #[test]
    fn fewshot_prompt_numbers_every_sample() {
        let spec = PromptSpec::new(Recipe::FewshotSft)
            .sample_doc("first sample")
            .sample_doc("second sample")
            .sample_doc("third sample");
        let prompt = assemble_prompt(&spec).unwrap();
        let created_at = prompt.find("Created Sample:").unwrap();
        let before = &prompt[..created_at];
        assert!(before.contains("(1) first sample"));
        assert!(before.contains("(2) second sample"));
        assert!(before.contains("(3) third sample"));
        assert!(!before.contains("(4)"));
    }

    #[test]
    fn echo_generation_returns_prompts() {
        let prompts = vec!["one".to_string(), "two".to_string()];
        let audit = AuditLog::discard();
        let (records, summary) = generate(
            &prompts,
            &EchoClient,
            "stub",
            &GenParams::default(),
            None,
            &RetryPolicy::immediate(),
            1,
            &audit,
        );
        assert_eq!(summary.succeeded, 2);
        for r in &records {
            match &r.status {
                GenStatus::Succeeded { text, .. } => assert_eq!(text, &r.prompt),
                other => panic!("unexpected status {other:?}"),
            }
        }
    }

    #[test]
    fn persistent_failure_is_recorded_and_batch_continues() {
        let prompts = vec!["a".to_string(), "b".to_string()];
        let client = FlakyClient::failing(3); // first prompt exhausts retries
        let audit = AuditLog::discard();
        let (records, summary) = generate(
            &prompts,
            &client,
            "stub",
            &GenParams::default(),
            None,
            &RetryPolicy::immediate(),
            1,
            &audit,
        );
        assert!(matches!(records[0].status, GenStatus::Failed { .. }));
        assert!(matches!(records[1].status, GenStatus::Succeeded { .. }));
        assert_eq!(summary.failed, 1);
        assert_eq!(summary.succeeded, 1);
        assert_eq!(
            summary.issued,
            summary.succeeded + summary.failed + summary.skipped
        );
    }

    #[test]
    fn fan_out_matches_sequential_results() {
        let prompts: Vec<String> = (0..37).map(|i| format!("prompt {i}")).collect();
        let audit = AuditLog::discard();
        let (sequential, seq_summary) = generate(
            &prompts,
            &EchoClient,
            "stub",
            &GenParams::default(),
            None,
            &RetryPolicy::immediate(),
            1,
            &audit,
        );
        let (concurrent, con_summary) = generate(
            &prompts,
            &EchoClient,
            "stub",
            &GenParams::default(),
            None,
            &RetryPolicy::immediate(),
            8,
            &audit,
        );
        assert_eq!(seq_summary, con_summary);
        for (a, b) in sequential.iter().zip(&concurrent) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.prompt, b.prompt);
            assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn budget_limits_requests_and_marks_skips() {
        let prompts: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
        let client = CountingClient::new(EchoClient);
        let audit = AuditLog::discard();
        let (records, summary) = generate(
            &prompts,
            &client,
            "stub",
            &GenParams::default(),
            Some(2),
            &RetryPolicy::immediate(),
            1,
            &audit,
        );
        assert_eq!(client.calls(), 2);
        assert_eq!(summary.succeeded, 2);
        assert_eq!(summary.skipped, 3);
        assert_eq!(
            records
                .iter()
                .filter(|r| matches!(r.status, GenStatus::Skipped))
                .count(),
            3
        );
    }

    #[test]
    fn longer_response_wins_the_stub_judge() {
        let mut responses = std::collections::HashMap::new();
        responses.insert("prompt".to_string(), "short".to_string());
        let client = ScriptedClient {
            responses,
            vary_by_temperature: true,
        };
        // vary_by_temperature appends the config, so the two responses differ
        // and the one with the longer suffix wins.
        let configs = vec![
            GenParams {
                temperature: 0.2,
                ..GenParams::default()
            },
            GenParams {
                temperature: 0.95,
                ..GenParams::default()
            },
        ];
        let audit = AuditLog::discard();
        let (pairs, dropped) = build_preference_pairs(
            &[("prompt".to_string(), LanguageTag::En)],
            &client,
            "stub",
            &PreferLongerJudge,
            &configs,
            &RetryPolicy::immediate(),
            &audit,
        )
        .unwrap();
        assert!(dropped.is_empty());
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].chosen.len() > pairs[0].rejected.len());
        assert_ne!(pairs[0].chosen, pairs[0].rejected);
    }

    #[test]
    fn identical_responses_drop_as_tie() {
        let configs = vec![
            GenParams {
                temperature: 0.2,
                ..GenParams::default()
            },
            GenParams {
                temperature: 0.9,
                ..GenParams::default()
            },
        ];
        let audit = AuditLog::discard();
        // EchoClient answers identically for both configs -> tie at the judge.
        let (pairs, dropped) = build_preference_pairs(
            &[("same".to_string(), LanguageTag::Fr)],
            &EchoClient,
            "stub",
            &PreferLongerJudge,
            &configs,
            &RetryPolicy::immediate(),
            &audit,
        )
        .unwrap();
        assert!(pairs.is_empty());
        assert_eq!(dropped.len(), 1);
        assert!(dropped[0].reason.contains("tie"));
    }

    #[test]
    fn duplicate_configs_rejected() {
        let configs = vec![GenParams::default(), GenParams::default()];
        let audit = AuditLog::discard();
        assert!(build_preference_pairs(
            &[],
            &EchoClient,
            "stub",
            &PreferLongerJudge,
            &configs,
            &RetryPolicy::immediate(),
            &audit,
        )
        .is_err());
    }

    #[test]
    fn identity_translator_copies_into_28_languages() {
        let prompts = vec![
            SourcePrompt {
                id: "p0".into(),
                text: "How do magnets work?".into(),
            },
            SourcePrompt {
                id: "p1".into(),
                text: "Write a haiku.".into(),
            },
        ];
        let targets = preference_target_languages();
        assert_eq!(targets.len(), 28);
        let audit = AuditLog::discard();
        let out = translate_prompt_set(
            &prompts,
            &targets,
            &EchoClient,
            "stub",
            &RetryPolicy::immediate(),
            &audit,
        )
        .unwrap();
        assert_eq!(out.len(), 28);
        for (lang, set) in &out {
            assert_eq!(set.len(), 2);
            assert_eq!(set[0].lang, *lang);
            assert_eq!(set[0].source_id, "p0");
            assert_eq!(set[0].text, "How do magnets work?");
        }
    }

    #[test]
    fn empty_prompt_set_translates_to_28_empty_sets() {
        let audit = AuditLog::discard();
        let out = translate_prompt_set(
            &[],
            &preference_target_languages(),
            &EchoClient,
            "stub",
            &RetryPolicy::immediate(),
            &audit,
        )
        .unwrap();
        assert_eq!(out.len(), 28);
        assert!(out.values().all(Vec::is_empty));
    }

    #[test]
    fn failing_translator_skips_and_logs() {
        let prompts: Vec<SourcePrompt> = (0..5)
            .map(|i| SourcePrompt {
                id: format!("p{i}"),
                text: format!("text {i}"),
            })
            .collect();
        // Fails exactly the retry budget of the first record, succeeds after.
        let client = FlakyClient::failing(3);
        let audit = AuditLog::discard();
        let out = translate_prompt_set(
            &prompts,
            &[LanguageTag::De],
            &client,
            "stub",
            &RetryPolicy::immediate(),
            &audit,
        )
        .unwrap();
        assert_eq!(out[&LanguageTag::De].len(), 4);
        assert_eq!(out[&LanguageTag::De][0].source_id, "p1");
    }
}
