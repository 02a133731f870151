//! The closed language set, the high/low-resource split, and source categories.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Two-letter tag from the closed set of 29 covered languages, plus
/// `Unknown` for text the classifier could not attribute.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum LanguageTag {
    En,
    Zh,
    Ar,
    De,
    Es,
    Fr,
    Ko,
    Ja,
    Pt,
    Tr,
    Az,
    Bn,
    Cs,
    El,
    He,
    Hu,
    Id,
    It,
    Kk,
    Ms,
    Ne,
    Nl,
    Pl,
    Ro,
    Ru,
    Th,
    Uk,
    Ur,
    Vi,
    Unknown,
}

impl LanguageTag {
    /// The 29 covered languages, high-resource first, in fixed order.
    pub const ALL: [LanguageTag; 29] = [
        LanguageTag::En,
        LanguageTag::Zh,
        LanguageTag::Ar,
        LanguageTag::De,
        LanguageTag::Es,
        LanguageTag::Fr,
        LanguageTag::Ko,
        LanguageTag::Ja,
        LanguageTag::Pt,
        LanguageTag::Tr,
        LanguageTag::Bn,
        LanguageTag::He,
        LanguageTag::Id,
        LanguageTag::It,
        LanguageTag::Ms,
        LanguageTag::Nl,
        LanguageTag::Pl,
        LanguageTag::Ru,
        LanguageTag::Th,
        LanguageTag::Uk,
        LanguageTag::Ur,
        LanguageTag::Vi,
        LanguageTag::Cs,
        LanguageTag::El,
        LanguageTag::Hu,
        LanguageTag::Kk,
        LanguageTag::Ro,
        LanguageTag::Az,
        LanguageTag::Ne,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LanguageTag::En => "en",
            LanguageTag::Zh => "zh",
            LanguageTag::Ar => "ar",
            LanguageTag::De => "de",
            LanguageTag::Es => "es",
            LanguageTag::Fr => "fr",
            LanguageTag::Ko => "ko",
            LanguageTag::Ja => "ja",
            LanguageTag::Pt => "pt",
            LanguageTag::Tr => "tr",
            LanguageTag::Az => "az",
            LanguageTag::Bn => "bn",
            LanguageTag::Cs => "cs",
            LanguageTag::El => "el",
            LanguageTag::He => "he",
            LanguageTag::Hu => "hu",
            LanguageTag::Id => "id",
            LanguageTag::It => "it",
            LanguageTag::Kk => "kk",
            LanguageTag::Ms => "ms",
            LanguageTag::Ne => "ne",
            LanguageTag::Nl => "nl",
            LanguageTag::Pl => "pl",
            LanguageTag::Ro => "ro",
            LanguageTag::Ru => "ru",
            LanguageTag::Th => "th",
            LanguageTag::Uk => "uk",
            LanguageTag::Ur => "ur",
            LanguageTag::Vi => "vi",
            LanguageTag::Unknown => "unknown",
        }
    }

    /// English display name, used by translation templates.
    pub fn display_name(self) -> Result<&'static str> {
        Ok(match self {
            LanguageTag::En => "English",
            LanguageTag::Zh => "Chinese",
            LanguageTag::Ar => "Arabic",
            LanguageTag::De => "German",
            LanguageTag::Es => "Spanish",
            LanguageTag::Fr => "French",
            LanguageTag::Ko => "Korean",
            LanguageTag::Ja => "Japanese",
            LanguageTag::Pt => "Portuguese",
            LanguageTag::Tr => "Turkish",
            LanguageTag::Az => "Azerbaijani",
            LanguageTag::Bn => "Bengali",
            LanguageTag::Cs => "Czech",
            LanguageTag::El => "Greek",
            LanguageTag::He => "Hebrew",
            LanguageTag::Hu => "Hungarian",
            LanguageTag::Id => "Indonesian",
            LanguageTag::It => "Italian",
            LanguageTag::Kk => "Kazakh",
            LanguageTag::Ms => "Malay",
            LanguageTag::Ne => "Nepali",
            LanguageTag::Nl => "Dutch",
            LanguageTag::Pl => "Polish",
            LanguageTag::Ro => "Romanian",
            LanguageTag::Ru => "Russian",
            LanguageTag::Th => "Thai",
            LanguageTag::Uk => "Ukrainian",
            LanguageTag::Ur => "Urdu",
            LanguageTag::Vi => "Vietnamese",
            LanguageTag::Unknown => return Err(Error::UnmappedLanguageName(self)),
        })
    }

    /// HR/LR split for the 29 covered languages; `None` for `Unknown`.
    pub fn resource_class(self) -> Option<ResourceClass> {
        match self {
            LanguageTag::En
            | LanguageTag::Zh
            | LanguageTag::Ar
            | LanguageTag::De
            | LanguageTag::Es
            | LanguageTag::Fr
            | LanguageTag::Ko
            | LanguageTag::Ja
            | LanguageTag::Pt
            | LanguageTag::Tr => Some(ResourceClass::HighResource),
            LanguageTag::Unknown => None,
            _ => Some(ResourceClass::LowResource),
        }
    }

    pub fn high_resource() -> impl Iterator<Item = LanguageTag> {
        LanguageTag::ALL
            .into_iter()
            .filter(|l| l.resource_class() == Some(ResourceClass::HighResource))
    }

    pub fn low_resource() -> impl Iterator<Item = LanguageTag> {
        LanguageTag::ALL
            .into_iter()
            .filter(|l| l.resource_class() == Some(ResourceClass::LowResource))
    }
}

impl FromStr for LanguageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        for lang in LanguageTag::ALL {
            if lang.code() == s {
                return Ok(lang);
            }
        }
        if s == "unknown" {
            return Ok(LanguageTag::Unknown);
        }
        Err(Error::UnknownLanguage(s.to_string()))
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Coarse taxonomy of corpus sources: the HR/LR language split plus the
/// three non-web source kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    HighResource,
    LowResource,
    Parallel,
    Knowledge,
    Synthetic,
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceCategory {
    Web,
    Parallel,
    Knowledge,
    Synthetic,
}

impl SourceCategory {
    pub fn code(self) -> &'static str {
        match self {
            SourceCategory::Web => "web",
            SourceCategory::Parallel => "parallel",
            SourceCategory::Knowledge => "knowledge",
            SourceCategory::Synthetic => "synthetic",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_codes() {
        for lang in LanguageTag::ALL {
            assert_eq!(lang.code().parse::<LanguageTag>().unwrap(), lang);
        }
        assert_eq!("unknown".parse::<LanguageTag>().unwrap(), LanguageTag::Unknown);
    }

    #[test]
    fn rejects_codes_outside_the_set() {
        assert!("xx".parse::<LanguageTag>().is_err());
        assert!("eng".parse::<LanguageTag>().is_err());
        assert!("".parse::<LanguageTag>().is_err());
    }

    #[test]
    fn hr_lr_split_is_10_19() {
        assert_eq!(LanguageTag::high_resource().count(), 10);
        assert_eq!(LanguageTag::low_resource().count(), 19);
        assert_eq!(LanguageTag::ALL.len(), 29);
    }

    #[test]
    fn hr_group_matches_published_grouping() {
        let hr: Vec<_> = LanguageTag::high_resource().map(|l| l.code()).collect();
        assert_eq!(
            hr,
            ["en", "zh", "ar", "de", "es", "fr", "ko", "ja", "pt", "tr"]
        );
    }

    #[test]
    fn serde_uses_two_letter_codes() {
        let json = serde_json::to_string(&LanguageTag::De).unwrap();
        assert_eq!(json, "\"de\"");
        let back: LanguageTag = serde_json::from_str("\"ms\"").unwrap();
        assert_eq!(back, LanguageTag::Ms);
        assert!(serde_json::from_str::<LanguageTag>("\"zz\"").is_err());
    }
}
