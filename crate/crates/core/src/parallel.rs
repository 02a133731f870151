//! Parallel-pair refinement: heuristic source-side filtering, pluggable
//! similarity scoring, and expansion into training documents through the
//! eleven bundled translation templates (A through K). The lozenge in a
//! pattern marks a line break.

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::lang::{LanguageTag, SourceCategory};
use crate::quality::{metric, Bound, StopwordTable, ThresholdSet};
use crate::rng::SplitMix64;
use crate::textsim::SimilarityScorer;
use crate::tokenize::{words, TokenizerRegistry};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_SIMILARITY_FLOOR: f64 = 0.5;

/// Source-side feature ratios used by the heuristic filter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairFeatures {
    pub special_symbol_ratio: f64,
    pub stopword_ratio: f64,
    pub digit_ratio: f64,
    pub repeated_word_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub src_text: String,
    pub tgt_text: String,
    #[serde(default)]
    pub features: Option<PairFeatures>,
    #[serde(default)]
    pub similarity: Option<f64>,
}

impl SentencePair {
    pub fn new(
        src_lang: LanguageTag,
        tgt_lang: LanguageTag,
        src_text: impl Into<String>,
        tgt_text: impl Into<String>,
    ) -> Result<Self> {
        let (src_text, tgt_text) = (src_text.into(), tgt_text.into());
        if src_lang == tgt_lang {
            return Err(Error::InvalidParams(format!(
                "source and target language are both `{src_lang}`"
            )));
        }
        if src_text.trim().is_empty() || tgt_text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self {
            src_lang,
            tgt_lang,
            src_text,
            tgt_text,
            features: None,
            similarity: None,
        })
    }

    /// Compute the source-side feature ratios.
    pub fn compute_features(&mut self, stopwords: &StopwordTable) {
        let text = &self.src_text;
        let lower = text.to_lowercase();
        let mut non_ws = 0u64;
        let mut special = 0u64;
        let mut digits = 0u64;
        for c in text.chars() {
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
        let toks = words(&lower);
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &toks {
            *counts.entry(t).or_insert(0) += 1;
        }
        let repeated = toks.iter().filter(|t| counts[*t as &str] > 1).count();
        let stops = stopwords
            .for_lang(self.src_lang)
            .map(|set| toks.iter().filter(|t| set.contains(**t)).count())
            .unwrap_or(0);
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        self.features = Some(PairFeatures {
            special_symbol_ratio: ratio(special, non_ws),
            stopword_ratio: ratio(stops as u64, toks.len() as u64),
            digit_ratio: ratio(digits, non_ws),
            repeated_word_ratio: ratio(repeated as u64, toks.len() as u64),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairDecision {
    Accept,
    Reject(Vec<String>),
}

/// Default source-side bounds for pair filtering.
pub fn default_pair_thresholds<I>(langs: I) -> ThresholdSet
where
    I: IntoIterator<Item = LanguageTag>,
{
    let mut set = ThresholdSet {
        langs: BTreeMap::new(),
        provenance: crate::quality::Provenance::Default,
    };
    for lang in langs {
        let mut bounds = BTreeMap::new();
        bounds.insert(metric::SPECIAL_SYMBOL_RATIO.to_string(), Bound::cap(0.30));
        bounds.insert(metric::DIGIT_RATIO.to_string(), Bound::cap(0.30));
        bounds.insert(metric::REPEATED_WORD_RATIO.to_string(), Bound::cap(0.50));
        set.langs.insert(lang, bounds);
    }
    set
}

/// Filter on the source-side ratios; every violated metric is listed.
pub fn pair_heuristic_filter(
    pair: &SentencePair,
    thresholds: &ThresholdSet,
) -> Result<PairDecision> {
    let features = pair.features.ok_or_else(|| {
        Error::InvalidParams("pair features not computed before filtering".into())
    })?;
    let bounds = thresholds
        .langs
        .get(&pair.src_lang)
        .ok_or(Error::ThresholdsMissingLanguage(pair.src_lang))?;
    let value = |name: &str| -> Option<f64> {
        match name {
            metric::SPECIAL_SYMBOL_RATIO => Some(features.special_symbol_ratio),
            metric::STOPWORD_RATIO => Some(features.stopword_ratio),
            metric::DIGIT_RATIO => Some(features.digit_ratio),
            metric::REPEATED_WORD_RATIO => Some(features.repeated_word_ratio),
            _ => None,
        }
    };
    let mut reasons = Vec::new();
    for (name, bound) in bounds {
        if let Some(v) = value(name) {
            if !bound.satisfied(v) {
                reasons.push(name.clone());
            }
        }
    }
    reasons.sort();
    Ok(if reasons.is_empty() {
        PairDecision::Accept
    } else {
        PairDecision::Reject(reasons)
    })
}

/// Symmetric similarity in [-1, 1] under a pluggable scorer. The bundled
/// default is a hashed character-n-gram stand-in, not a sentence encoder.
pub fn pair_similarity(pair: &SentencePair, scorer: &dyn SimilarityScorer) -> Result<f64> {
    for lang in [pair.src_lang, pair.tgt_lang] {
        if !scorer.supports_language(lang) {
            return Err(Error::UnsupportedLanguage(lang));
        }
    }
    scorer.score(&pair.src_text, &pair.tgt_text)
}

/// One translation template. `pattern` uses the placeholders `<src_lang>`,
/// `<tgt_lang>`, `<input>`, `<output>` and the line-break marker `◊`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationTemplate {
    pub id: char,
    pub pattern: String,
}

impl TranslationTemplate {
    pub fn new(id: char, pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        for ph in ["<input>", "<output>"] {
            if pattern.matches(ph).count() != 1 {
                return Err(Error::InvalidRule {
                    name: format!("template {id}"),
                    msg: format!("pattern must contain {ph} exactly once"),
                });
            }
        }
        Ok(Self { id, pattern })
    }
}

const BUNDLED_TEMPLATE_PATTERNS: [(char, &str); 11] = [
    ('A', "<src_lang> phrase: <input>◊<tgt_lang> phrase: <output>"),
    ('B', "<src_lang> text: <input>◊<tgt_lang> text: <output>"),
    (
        'C',
        "Translate the text from <src_lang> to <tgt_lang>:◊<src_lang> text: <input>◊<tgt_lang> text: <output>",
    ),
    (
        'D',
        "Translate the words from <src_lang> to <tgt_lang>:◊<src_lang> words: <input>◊<tgt_lang> words: <output>",
    ),
    (
        'E',
        "Convert the phrase from <src_lang> to <tgt_lang>:◊<src_lang> phrase: <input>◊<tgt_lang> phrase: <output>",
    ),
    ('F', "Render the <src_lang> sentence <input> to <tgt_lang>: <output>"),
    (
        'G',
        "Provide the translation of the sentence <input> from <src_lang> to <tgt_lang>: <output>",
    ),
    (
        'H',
        "Change the phrase <input> to <tgt_lang>, the translated phrase is: <output>",
    ),
    (
        'I',
        "Please change the sentence <input> to <tgt_lang>, and the resulting translation is: <output>",
    ),
    ('J', "Change the phrase <input> to <tgt_lang>, resulting in: <output>"),
    ('K', "The sentence <input> in <src_lang> means <output> in <tgt_lang>"),
];

/// The eleven bundled templates, A through K.
pub fn bundled_templates() -> Vec<TranslationTemplate> {
    BUNDLED_TEMPLATE_PATTERNS
        .iter()
        .map(|&(id, p)| TranslationTemplate::new(id, p).expect("bundled template is well-formed"))
        .collect()
}

/// English display names used to fill `<src_lang>`/`<tgt_lang>`.
#[derive(Debug, Clone, Default)]
pub struct LangNameMap(pub BTreeMap<LanguageTag, String>);

impl LangNameMap {
    /// Names for all 29 covered languages.
    pub fn default_english() -> Self {
        let mut map = BTreeMap::new();
        for lang in LanguageTag::ALL {
            map.insert(lang, lang.display_name().unwrap().to_string());
        }
        Self(map)
    }

    fn get(&self, lang: LanguageTag) -> Result<&str> {
        self.0
            .get(&lang)
            .map(String::as_str)
            .ok_or(Error::UnmappedLanguageName(lang))
    }
}

/// Substitute the placeholders and the line-break marker in one left-to-right
/// pass, so substituted text is never rescanned and the pair's bytes pass
/// through untouched.
pub fn render_template(
    pair: &SentencePair,
    template: &TranslationTemplate,
    names: &LangNameMap,
) -> Result<String> {
    let src_name = names.get(pair.src_lang)?;
    let tgt_name = names.get(pair.tgt_lang)?;
    let markers: [(&str, &str); 5] = [
        ("<src_lang>", src_name),
        ("<tgt_lang>", tgt_name),
        ("<input>", &pair.src_text),
        ("<output>", &pair.tgt_text),
        ("◊", "\n"),
    ];
    let mut out = String::with_capacity(template.pattern.len() + pair.src_text.len() + pair.tgt_text.len());
    let mut rest = template.pattern.as_str();
    while !rest.is_empty() {
        let next = markers
            .iter()
            .filter_map(|(m, r)| rest.find(m).map(|i| (i, *m, *r)))
            .min_by_key(|(i, _, _)| *i);
        match next {
            Some((i, marker, replacement)) => {
                out.push_str(&rest[..i]);
                out.push_str(replacement);
                rest = &rest[i + marker.len()..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePolicy {
    RoundRobin,
    SeededUniform,
}

/// Render each pair with exactly one template and wrap the result as a
/// parallel-category document. Deterministic given the seed.
pub fn expand_corpus(
    pairs: &[SentencePair],
    templates: &[TranslationTemplate],
    policy: TemplatePolicy,
    seed: u64,
    names: &LangNameMap,
    registry: &TokenizerRegistry,
    tokenizer_id: &str,
) -> Result<Vec<Document>> {
    if templates.is_empty() {
        return Err(Error::EmptyTemplateSet);
    }
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let idx = match policy {
            TemplatePolicy::RoundRobin => i % templates.len(),
            TemplatePolicy::SeededUniform => rng.next_below(templates.len() as u64) as usize,
        };
        let text = render_template(pair, &templates[idx], names)?;
        let mut doc = Document::new(
            format!("parallel-{i:08}"),
            None,
            pair.tgt_lang,
            text,
            SourceCategory::Parallel,
            registry,
            tokenizer_id,
        )?;
        doc.record_stage("parallel_expand");
        out.push(doc);
    }
    Ok(out)
}

/// Parse `src_lang\ttgt_lang\tsrc_text\ttgt_text` lines.
pub fn parse_pairs_tsv(content: &str, path_for_errors: &str) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(Error::CorruptRecord {
                path: path_for_errors.to_string(),
                line: i as u64 + 1,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let src_lang: LanguageTag = fields[0].parse()?;
        let tgt_lang: LanguageTag = fields[1].parse()?;
        pairs.push(SentencePair::new(src_lang, tgt_lang, fields[2], fields[3])?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textsim::CharNgramScorer;
    use crate::tokenize::DEFAULT_TOKENIZER_ID;

    fn pair(src: &str, tgt: &str) -> SentencePair {
        SentencePair::new(LanguageTag::Fr, LanguageTag::En, src, tgt).unwrap()
    }

    #[test]
    fn same_language_pair_rejected() {
        assert!(SentencePair::new(LanguageTag::En, LanguageTag::En, "a", "b").is_err());
        assert!(SentencePair::new(LanguageTag::Fr, LanguageTag::En, "", "b").is_err());
    }

    #[test]
    fn clean_pair_accepts() {
        let mut p = pair("Le chat dort sur le canapé du salon", "The cat sleeps on the sofa");
        p.compute_features(StopwordTable::bundled());
        let t = default_pair_thresholds([LanguageTag::Fr]);
        assert_eq!(pair_heuristic_filter(&p, &t).unwrap(), PairDecision::Accept);
    }

    #[test]
    fn digit_only_source_rejected() {
        let mut p = pair("11111 22222 33333", "numbers");
        p.compute_features(StopwordTable::bundled());
        let t = default_pair_thresholds([LanguageTag::Fr]);
        match pair_heuristic_filter(&p, &t).unwrap() {
            PairDecision::Reject(reasons) => {
                assert!(reasons.contains(&metric::DIGIT_RATIO.to_string()))
            }
            other => panic!("expected reject, got {other:?}"),
        }
    }

    #[test]
    fn repeated_source_rejected() {
        let mut p = pair("x x x x x", "y");
        p.compute_features(StopwordTable::bundled());
        let t = default_pair_thresholds([LanguageTag::Fr]);
        match pair_heuristic_filter(&p, &t).unwrap() {
            PairDecision::Reject(reasons) => {
                assert!(reasons.contains(&metric::REPEATED_WORD_RATIO.to_string()))
            }
            other => panic!("expected reject, got {other:?}"),
        }
    }

    #[test]
    fn similarity_of_identical_texts_is_one() {
        let p = pair("même texte", "même texte");
        let s = pair_similarity(&p, &CharNgramScorer::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_of_disjoint_scripts_is_zero() {
        let p = pair("abc", "ξυζ");
        assert_eq!(pair_similarity(&p, &CharNgramScorer::default()).unwrap(), 0.0);
    }

    #[test]
    fn unsupported_language_errors() {
        struct EnOnly;
        impl SimilarityScorer for EnOnly {
            fn score(&self, _a: &str, _b: &str) -> Result<f64> {
                Ok(0.0)
            }
            fn supports_language(&self, lang: LanguageTag) -> bool {
                lang == LanguageTag::En
            }
        }
        let p = pair("texte", "text");
        assert!(matches!(
            pair_similarity(&p, &EnOnly),
            Err(Error::UnsupportedLanguage(LanguageTag::Fr))
        ));
    }

    #[test]
    fn template_k_renders_the_published_example() {
        let p = pair("Bonjour", "Hello");
        let templates = bundled_templates();
        let k = templates.iter().find(|t| t.id == 'K').unwrap();
        let out = render_template(&p, k, &LangNameMap::default_english()).unwrap();
        assert_eq!(out, "The sentence Bonjour in French means Hello in English");
    }

    #[test]
    fn template_a_renders_with_line_break() {
        let p = SentencePair::new(LanguageTag::En, LanguageTag::De, "Hi", "Hallo").unwrap();
        let templates = bundled_templates();
        let a = templates.iter().find(|t| t.id == 'A').unwrap();
        let out = render_template(&p, a, &LangNameMap::default_english()).unwrap();
        assert_eq!(out, "English phrase: Hi\nGerman phrase: Hallo");
    }

    #[test]
    fn no_placeholder_survives_any_template() {
        let p = pair("Bonjour le monde", "Hello world");
        let names = LangNameMap::default_english();
        for t in bundled_templates() {
            let out = render_template(&p, &t, &names).unwrap();
            assert!(!out.contains("<input>"), "template {}", t.id);
            assert!(!out.contains("<output>"), "template {}", t.id);
            assert!(!out.contains('◊'), "template {}", t.id);
        }
    }

    #[test]
    fn rendering_never_alters_pair_bytes() {
        // Text containing placeholder-like strings must pass through as-is.
        let p = pair("texte <output> avec ◊ marqueurs", "plain target");
        let templates = bundled_templates();
        let a = templates.iter().find(|t| t.id == 'A').unwrap();
        let out = render_template(&p, a, &LangNameMap::default_english()).unwrap();
        assert!(out.contains("texte <output> avec ◊ marqueurs"));
    }

    #[test]
    fn unmapped_language_name_errors() {
        let p = pair("a", "b");
        let t = bundled_templates();
        let empty = LangNameMap::default();
        assert!(matches!(
            render_template(&p, &t[0], &empty),
            Err(Error::UnmappedLanguageName(_))
        ));
    }

    #[test]
    fn round_robin_uses_each_template_once_over_eleven_pairs() {
        let reg = TokenizerRegistry::default();
        let pairs: Vec<SentencePair> = (0..11)
            .map(|i| pair(&format!("phrase {i}"), &format!("sentence {i}")))
            .collect();
        let docs = expand_corpus(
            &pairs,
            &bundled_templates(),
            TemplatePolicy::RoundRobin,
            0,
            &LangNameMap::default_english(),
            &reg,
            DEFAULT_TOKENIZER_ID,
        )
        .unwrap();
        assert_eq!(docs.len(), 11);
        // Template A starts with the language name, K with "The sentence".
        assert!(docs[0].text.starts_with("French phrase:"));
        assert!(docs[10].text.starts_with("The sentence"));
    }

    #[test]
    fn zero_pairs_expand_to_nothing() {
        let reg = TokenizerRegistry::default();
        let docs = expand_corpus(
            &[],
            &bundled_templates(),
            TemplatePolicy::SeededUniform,
            1,
            &LangNameMap::default_english(),
            &reg,
            DEFAULT_TOKENIZER_ID,
        )
        .unwrap();
        assert!(docs.is_empty());
    }

    #[test]
    fn empty_template_set_errors() {
        let reg = TokenizerRegistry::default();
        assert!(matches!(
            expand_corpus(
                &[],
                &[],
                TemplatePolicy::RoundRobin,
                0,
                &LangNameMap::default_english(),
                &reg,
                DEFAULT_TOKENIZER_ID,
            ),
            Err(Error::EmptyTemplateSet)
        ));
    }

    /// Binomial bound worked out by hand: for 11,000 draws over 11 templates
    /// the per-template count is 1000 ± 3·sqrt(11000·(1/11)·(10/11)) ≈ ±90.5.
    #[test]
    fn seeded_uniform_histogram_within_three_sigma() {
        let reg = TokenizerRegistry::default();
        let pairs: Vec<SentencePair> = (0..11_000)
            .map(|i| pair(&format!("p {i}"), &format!("s {i}")))
            .collect();
        let docs = expand_corpus(
            &pairs,
            &bundled_templates(),
            TemplatePolicy::SeededUniform,
            42,
            &LangNameMap::default_english(),
            &reg,
            DEFAULT_TOKENIZER_ID,
        )
        .unwrap();
        // Recover which template produced each doc by its skeleton.
        let names = LangNameMap::default_english();
        let mut histogram = [0u64; 11];
        'doc: for (i, doc) in docs.iter().enumerate() {
            for (t_idx, t) in bundled_templates().iter().enumerate() {
                if render_template(&pairs[i], t, &names).unwrap() == doc.text {
                    histogram[t_idx] += 1;
                    continue 'doc;
                }
            }
            panic!("doc {i} matches no template");
        }
        let expected = 1000.0;
        let sigma = (11_000.0_f64 * (1.0 / 11.0) * (10.0 / 11.0)).sqrt();
        for (t_idx, &count) in histogram.iter().enumerate() {
            let dev = (count as f64 - expected).abs();
            assert!(
                dev <= 3.0 * sigma,
                "template {t_idx} drawn {count} times, |dev| {dev} > 3σ {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn expansion_is_deterministic_per_seed() {
        let reg = TokenizerRegistry::default();
        let pairs: Vec<SentencePair> = (0..50)
            .map(|i| pair(&format!("p {i}"), &format!("s {i}")))
            .collect();
        let run = || {
            expand_corpus(
                &pairs,
                &bundled_templates(),
                TemplatePolicy::SeededUniform,
                7,
                &LangNameMap::default_english(),
                &reg,
                DEFAULT_TOKENIZER_ID,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tsv_parses_and_reports_bad_lines() {
        let content = "fr\ten\tBonjour\tHello\nde\ten\tHallo\tHello\n";
        let pairs = parse_pairs_tsv(content, "pairs.tsv").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].src_lang, LanguageTag::Fr);

        match parse_pairs_tsv("fr\ten\tonly three", "pairs.tsv") {
            Err(Error::CorruptRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected corrupt record, got {other:?}"),
        }
    }
}
