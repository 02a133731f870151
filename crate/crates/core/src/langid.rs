//! Character n-gram language identification.
//!
//! A multinomial model over character 1..3-grams with add-one smoothing.
//! Classification looks at the first 4,000 characters only, keeping the
//! cost bounded before the expensive pipeline stages run. Grams never seen
//! in training carry no signal; a text made only of them (digits, say)
//! yields a uniform posterior and falls below any sensible confidence
//! floor, coming back as `Unknown`.
//!
//! A small seed corpus ships in-repo so the bundled model trains at first
//! use with no downloads.

use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.65;
pub const CLASSIFY_PREFIX_CHARS: usize = 4000;
const MODEL_MAGIC: &[u8; 5] = b"MLID1";
const MODEL_VERSION: u8 = 1;
const MAX_GRAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangPrediction {
    pub lang: LanguageTag,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default)]
struct ClassCounts {
    /// Dense counts indexed by gram id.
    counts: Vec<u64>,
    total: u64,
}

/// Grams are interned into ids shared across classes, so scoring is an
/// array walk instead of string lookups.
#[derive(Debug, Clone)]
pub struct LangIdModel {
    classes: BTreeMap<LanguageTag, ClassCounts>,
    gram_ids: std::collections::HashMap<String, u32>,
    grams_by_id: Vec<String>,
}

fn grams_of(text: &str, out: &mut BTreeMap<String, u64>) {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().take(CLASSIFY_PREFIX_CHARS).collect();
    for n in 1..=MAX_GRAM {
        if chars.len() < n {
            break;
        }
        for w in chars.windows(n) {
            *out.entry(w.iter().collect()).or_insert(0) += 1;
        }
    }
}

/// Train over labeled sentences. `classes` is the label space; every class
/// must contribute at least one sentence.
pub fn train_langid(
    corpus: &[(LanguageTag, &str)],
    classes: &[LanguageTag],
) -> Result<LangIdModel> {
    // First pass: per-class string-keyed counts.
    let mut raw: BTreeMap<LanguageTag, BTreeMap<String, u64>> =
        classes.iter().map(|&l| (l, BTreeMap::new())).collect();
    for (lang, sentence) in corpus {
        let Some(class) = raw.get_mut(lang) else {
            continue;
        };
        grams_of(sentence, class);
    }
    for (lang, grams) in &raw {
        if grams.is_empty() {
            return Err(Error::MissingLanguageClass(*lang));
        }
    }
    Ok(LangIdModel::from_raw(raw))
}

impl LangIdModel {
    fn from_raw(raw: BTreeMap<LanguageTag, BTreeMap<String, u64>>) -> Self {
        let vocab: BTreeSet<&String> = raw.values().flat_map(|g| g.keys()).collect();
        let grams_by_id: Vec<String> = vocab.into_iter().cloned().collect();
        let gram_ids: std::collections::HashMap<String, u32> = grams_by_id
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
        let classes = raw
            .into_iter()
            .map(|(lang, grams)| {
                let mut counts = vec![0u64; grams_by_id.len()];
                let mut total = 0u64;
                for (g, c) in grams {
                    counts[gram_ids[&g] as usize] = c;
                    total += c;
                }
                (lang, ClassCounts { counts, total })
            })
            .collect();
        Self {
            classes,
            gram_ids,
            grams_by_id,
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = LanguageTag> + '_ {
        self.classes.keys().copied()
    }

    fn vocab_size(&self) -> u64 {
        self.grams_by_id.len() as u64
    }

    /// Log-likelihood of an id-keyed gram bag under one class, add-one
    /// smoothed. Class counts are rescaled to a common pseudo-total first,
    /// so classes with more seed text do not soak up shared grams. Grams
    /// outside the training vocabulary never reach here: they carry no
    /// class signal.
    fn log_likelihood(&self, grams: &[(u32, u64)], class: &ClassCounts) -> f64 {
        const PSEUDO_TOTAL: f64 = 10_000.0;
        let scale = PSEUDO_TOTAL / class.total as f64;
        let denom = PSEUDO_TOTAL + self.vocab_size() as f64;
        let mut ll = 0.0;
        for &(id, n) in grams {
            let count = class.counts[id as usize];
            ll += n as f64 * ((count as f64 * scale + 1.0) / denom).ln();
        }
        ll
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&[MODEL_VERSION])?;
        w.write_all(&(self.classes.len() as u32).to_le_bytes())?;
        for (lang, class) in &self.classes {
            let code = lang.code().as_bytes();
            w.write_all(&[code.len() as u8])?;
            w.write_all(code)?;
            w.write_all(&class.total.to_le_bytes())?;
            let nonzero = class.counts.iter().filter(|&&c| c > 0).count() as u32;
            w.write_all(&nonzero.to_le_bytes())?;
            for (id, &c) in class.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let bytes = self.grams_by_id[id].as_bytes();
                w.write_all(&[bytes.len() as u8])?;
                w.write_all(bytes)?;
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let bad = |msg: &str| Error::InvalidModelFile(msg.to_string());
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("wrong magic header"));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(|_| bad("truncated version"))?;
        if version[0] != MODEL_VERSION {
            return Err(bad("unsupported version"));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated u32"))?;
            Ok(u32::from_le_bytes(b))
        };
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated u64"))?;
            Ok(u64::from_le_bytes(b))
        };
        let read_str = |r: &mut dyn Read| -> Result<String> {
            let mut len = [0u8; 1];
            r.read_exact(&mut len).map_err(|_| bad("truncated length"))?;
            let mut buf = vec![0u8; len[0] as usize];
            r.read_exact(&mut buf).map_err(|_| bad("truncated string"))?;
            String::from_utf8(buf).map_err(|_| bad("non-utf8 string"))
        };

        let n_classes = read_u32(&mut r)?;
        let mut raw = BTreeMap::new();
        for _ in 0..n_classes {
            let code = read_str(&mut r)?;
            let lang: LanguageTag = code
                .parse()
                .map_err(|_| bad(&format!("unknown language `{code}`")))?;
            let total = read_u64(&mut r)?;
            let n_grams = read_u32(&mut r)?;
            let mut grams = BTreeMap::new();
            let mut seen_total = 0u64;
            for _ in 0..n_grams {
                let g = read_str(&mut r)?;
                let c = read_u64(&mut r)?;
                seen_total += c;
                grams.insert(g, c);
            }
            if seen_total != total {
                return Err(bad("class total does not match gram counts"));
            }
            raw.insert(lang, grams);
        }
        Ok(Self::from_raw(raw))
    }
}

/// Classify the text's primary language. Pure in (text, model, floor):
/// the argmax class with its normalized posterior, `Unknown` when the
/// posterior stays below the floor.
pub fn identify_language(text: &str, model: &LangIdModel, floor: f64) -> Result<LangPrediction> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let mut raw = BTreeMap::new();
    grams_of(text, &mut raw);
    // Id-keyed bag in sorted-gram order, so summation order is fixed.
    let grams: Vec<(u32, u64)> = raw
        .iter()
        .filter_map(|(g, &n)| model.gram_ids.get(g).map(|&id| (id, n)))
        .collect();

    let logs: Vec<(LanguageTag, f64)> = model
        .classes
        .iter()
        .map(|(&lang, class)| (lang, model.log_likelihood(&grams, class)))
        .collect();
    let max_log = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let mut posts: Vec<(LanguageTag, f64)> = logs
        .iter()
        .map(|&(lang, l)| (lang, (l - max_log).exp()))
        .collect();
    let z: f64 = posts.iter().map(|(_, p)| p).sum();
    for (_, p) in posts.iter_mut() {
        *p /= z;
    }
    // Argmax with language order as the deterministic tie break.
    let (best_lang, confidence) = posts
        .iter()
        .fold((LanguageTag::Unknown, f64::NEG_INFINITY), |acc, &(l, p)| {
            if p > acc.1 {
                (l, p)
            } else {
                acc
            }
        });
    if confidence < floor {
        return Ok(LangPrediction {
            lang: LanguageTag::Unknown,
            confidence,
        });
    }
    Ok(LangPrediction {
        lang: best_lang,
        confidence,
    })
}

/// Parsed rows of the in-repo seed corpus.
pub struct SeedCorpus {
    pub train: Vec<(LanguageTag, &'static str)>,
    pub eval: Vec<(LanguageTag, &'static str)>,
}

pub fn bundled_seed_corpus() -> &'static SeedCorpus {
    static CORPUS: OnceLock<SeedCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for line in include_str!("../assets/langid_seed.tsv").lines() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(code), Some(split), Some(sentence)) =
                (parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            let Ok(lang) = code.parse::<LanguageTag>() else {
                continue;
            };
            match split {
                "train" => train.push((lang, sentence)),
                "eval" => eval.push((lang, sentence)),
                _ => {}
            }
        }
        SeedCorpus { train, eval }
    })
}

/// Model trained on the bundled seed corpus, covering all 29 languages.
pub fn bundled_model() -> &'static LangIdModel {
    static MODEL: OnceLock<LangIdModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus = bundled_seed_corpus();
        train_langid(&corpus.train, &LanguageTag::ALL)
            .expect("bundled seed corpus covers every language")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_errors() {
        let model = bundled_model();
        assert!(matches!(
            identify_language("", model, 0.5),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn digits_only_comes_back_unknown() {
        // The seed corpus is digit-free, so "12345" has no known gram and
        // the posterior stays uniform, far below the floor.
        let model = bundled_model();
        let p = identify_language("12345", model, DEFAULT_CONFIDENCE_FLOOR).unwrap();
        assert_eq!(p.lang, LanguageTag::Unknown);
        assert!(p.confidence < 0.1, "confidence {}", p.confidence);
    }

    #[test]
    fn posterior_is_a_probability() {
        let model = bundled_model();
        let p = identify_language("the weather is nice today", model, 0.0).unwrap();
        assert!(p.confidence > 0.0 && p.confidence <= 1.0);
    }

    #[test]
    fn bundled_model_separates_the_eval_split() {
        // Held-out accuracy over the bundled evaluation sentences.
        let model = bundled_model();
        let corpus = bundled_seed_corpus();
        assert!(!corpus.eval.is_empty());
        let mut hits = 0usize;
        for (lang, sentence) in &corpus.eval {
            let p = identify_language(sentence, model, 0.0).unwrap();
            if p.lang == *lang {
                hits += 1;
            }
        }
        let accuracy = hits as f64 / corpus.eval.len() as f64;
        assert!(
            accuracy >= 0.95,
            "held-out accuracy {accuracy:.3} below 0.95 ({hits}/{})",
            corpus.eval.len()
        );
    }

    #[test]
    fn single_class_predicts_it_with_full_confidence() {
        let corpus = vec![(LanguageTag::Fr, "le chat dort sur le canapé")];
        let model = train_langid(&corpus, &[LanguageTag::Fr]).unwrap();
        let p = identify_language("le chien", &model, 0.0).unwrap();
        assert_eq!(p.lang, LanguageTag::Fr);
        assert_eq!(p.confidence, 1.0);
    }

    #[test]
    fn disjoint_scripts_separate_perfectly() {
        let corpus = vec![
            (LanguageTag::Ja, "今日は天気がいいですね"),
            (LanguageTag::Ru, "сегодня хорошая погода"),
        ];
        let model = train_langid(&corpus, &[LanguageTag::Ja, LanguageTag::Ru]).unwrap();
        for (lang, text) in &corpus {
            let p = identify_language(text, &model, 0.0).unwrap();
            assert_eq!(p.lang, *lang);
            assert!(p.confidence > 0.99);
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let corpus = vec![(LanguageTag::En, "hello world")];
        assert!(matches!(
            train_langid(&corpus, &[LanguageTag::En, LanguageTag::De]),
            Err(Error::MissingLanguageClass(LanguageTag::De))
        ));
    }

    #[test]
    fn model_round_trips_with_identical_predictions() {
        let model = bundled_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mlid");
        model.save(&path).unwrap();
        let back = LangIdModel::load(&path).unwrap();
        for text in [
            "the quick brown fox",
            "der schnelle braune fuchs",
            "быстрая коричневая лиса",
            "狐狸跳过了篱笆",
        ] {
            let a = identify_language(text, model, 0.0).unwrap();
            let b = identify_language(text, &back, 0.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_model_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mlid");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(matches!(
            LangIdModel::load(&path),
            Err(Error::InvalidModelFile(_))
        ));
    }

    #[test]
    fn identification_is_pure() {
        let model = bundled_model();
        let a = identify_language("un texte en français assez long", model, 0.5).unwrap();
        let b = identify_language("un texte en français assez long", model, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
