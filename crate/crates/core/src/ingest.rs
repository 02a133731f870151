//! Raw input to text: main-content extraction for plain/HTML/WARC payloads
//! and first-match-wins URL blocklist filtering.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractFormat {
    Warc,
    Html,
    Plain,
}

impl std::str::FromStr for ExtractFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warc" => Ok(ExtractFormat::Warc),
            "html" => Ok(ExtractFormat::Html),
            "plain" => Ok(ExtractFormat::Plain),
            other => Err(Error::InvalidParams(format!("unknown format `{other}`"))),
        }
    }
}

/// Extract main text content: markup stripped, boilerplate removed by a
/// short-line density rule, output NFC-normalized UTF-8. Empty results are
/// an error, not an empty document.
pub fn extract_main_content(raw: &[u8], format: ExtractFormat) -> Result<String> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| Error::UndecodablePayload(e.to_string()))?;
    let extracted = match format {
        ExtractFormat::Plain => text.trim().to_string(),
        ExtractFormat::Html => extract_html(text),
        ExtractFormat::Warc => {
            if !text.starts_with("WARC/") {
                return Err(Error::UndecodablePayload(
                    "missing WARC/ record header".into(),
                ));
            }
            // WARC header block, then HTTP header block, then the payload.
            let mut body = text;
            for _ in 0..2 {
                match body.split_once("\r\n\r\n") {
                    Some((_, rest)) => body = rest,
                    None => break,
                }
            }
            extract_html(body)
        }
    };
    let normalized: String = extracted.nfc().collect();
    if normalized.trim().is_empty() {
        return Err(Error::EmptyExtraction);
    }
    Ok(normalized)
}

const DROPPED_ELEMENTS: [&str; 4] = ["script", "style", "head", "noscript"];
const BLOCK_ELEMENTS: [&str; 14] = [
    "p", "div", "br", "li", "tr", "h1", "h2", "h3", "h4", "h5", "h6", "section", "article",
    "table",
];

fn decode_entities(s: &str) -> String {
    s.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Strip tags, skip script/style subtrees, insert line breaks at block
/// boundaries, then drop boilerplate: runs of three or more consecutive
/// short lines (under three words), the shape of nav and footer link lists.
fn extract_html(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let bytes = html.as_bytes();
    let mut i = 0;
    let mut skip_until: Option<String> = None;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let end = match html[i..].find('>') {
                Some(rel) => i + rel,
                None => break,
            };
            let tag_body = &html[i + 1..end];
            let tag_name: String = tag_body
                .trim_start_matches('/')
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase();
            let closing = tag_body.starts_with('/');
            if let Some(awaited) = &skip_until {
                if closing && &tag_name == awaited {
                    skip_until = None;
                }
            } else if !closing && DROPPED_ELEMENTS.contains(&tag_name.as_str()) {
                skip_until = Some(tag_name.clone());
            } else if BLOCK_ELEMENTS.contains(&tag_name.as_str()) {
                out.push('\n');
            }
            i = end + 1;
            continue;
        }
        if skip_until.is_none() {
            let next_tag = html[i..].find('<').map_or(html.len(), |rel| i + rel);
            out.push_str(&html[i..next_tag]);
            i = next_tag;
        } else {
            i += 1;
        }
    }

    let decoded = decode_entities(&out);
    let lines: Vec<&str> = decoded
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();

    let short: Vec<bool> = lines
        .iter()
        .map(|l| l.split_whitespace().count() < 3)
        .collect();
    let mut keep = vec![true; lines.len()];
    let mut run_start = None;
    #[allow(clippy::needless_range_loop)] // sentinel pass one past the end
    for i in 0..=lines.len() {
        let is_short = i < lines.len() && short[i];
        if is_short {
            run_start.get_or_insert(i);
        } else if let Some(start) = run_start.take() {
            if i - start >= 3 {
                for k in keep.iter_mut().take(i).skip(start) {
                    *k = false;
                }
            }
        }
    }

    lines
        .iter()
        .zip(keep)
        .filter_map(|(l, k)| k.then_some(*l))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One blocklist entry: glob over the host (or host/path) plus the category
/// it targets. Matching is case-insensitive on the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlRule {
    pub pattern: String,
    pub category: String,
}

impl UrlRule {
    pub fn new(pattern: impl Into<String>, category: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        if pattern.is_empty() {
            return Err(Error::InvalidRule {
                name: "url".into(),
                msg: "empty pattern".into(),
            });
        }
        Ok(Self {
            pattern,
            category: category.into(),
        })
    }
}

/// Parse a rules file: one `<glob> <category>` per line, `#` comments.
pub fn parse_url_rules(content: &str) -> Result<Vec<UrlRule>> {
    let mut rules = Vec::new();
    for line in content.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (pattern, category) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::InvalidRule {
                name: "url".into(),
                msg: format!("expected `<glob> <category>`, got `{line}`"),
            })?;
        rules.push(UrlRule::new(pattern, category.trim())?);
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UrlDecision {
    Accept,
    Reject { category: String },
}

fn glob_match(pattern: &str, target: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = target.chars().collect();
    // Classic two-pointer glob with * backtracking.
    let (mut pi, mut ti) = (0usize, 0usize);
    let (mut star, mut mark) = (usize::MAX, 0usize);
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = pi;
            mark = ti;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

/// First matching rule wins; no match accepts. Unparseable URLs reject
/// with the reserved category `malformed`.
pub fn url_filter(url: &str, rules: &[UrlRule]) -> UrlDecision {
    let Some((_scheme, rest)) = url.split_once("://") else {
        return UrlDecision::Reject {
            category: "malformed".into(),
        };
    };
    let (host, path) = match rest.split_once('/') {
        Some((h, p)) => (h, format!("/{p}")),
        None => (rest, "/".to_string()),
    };
    let host = host.to_ascii_lowercase();
    if host.is_empty() {
        return UrlDecision::Reject {
            category: "malformed".into(),
        };
    }
    for rule in rules {
        let hit = if rule.pattern.contains('/') {
            let (phost, ppath) = rule.pattern.split_once('/').unwrap();
            glob_match(&phost.to_ascii_lowercase(), &host)
                && glob_match(&format!("/{ppath}"), &path)
        } else {
            glob_match(&rule.pattern.to_ascii_lowercase(), &host)
        };
        if hit {
            return UrlDecision::Reject {
                category: rule.category.clone(),
            };
        }
    }
    UrlDecision::Accept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_passthrough() {
        assert_eq!(
            extract_main_content(b"hello", ExtractFormat::Plain).unwrap(),
            "hello"
        );
    }

    #[test]
    fn html_strips_tags_and_script() {
        assert_eq!(
            extract_main_content(b"<p>a</p><script>x</script>", ExtractFormat::Html).unwrap(),
            "a"
        );
    }

    #[test]
    fn empty_payload_is_an_error() {
        assert!(matches!(
            extract_main_content(b"", ExtractFormat::Plain),
            Err(Error::EmptyExtraction)
        ));
        assert!(matches!(
            extract_main_content(b"<script>only junk()</script>", ExtractFormat::Html),
            Err(Error::EmptyExtraction)
        ));
    }

    #[test]
    fn invalid_utf8_is_undecodable() {
        assert!(matches!(
            extract_main_content(&[0xff, 0xfe, 0x41], ExtractFormat::Plain),
            Err(Error::UndecodablePayload(_))
        ));
    }

    #[test]
    fn nav_link_runs_are_dropped() {
        let html = b"<ul><li>Home</li><li>About</li><li>Contact us</li></ul>\
                     <p>This paragraph carries the actual readable content of the page.</p>";
        let out = extract_main_content(html, ExtractFormat::Html).unwrap();
        assert_eq!(
            out,
            "This paragraph carries the actual readable content of the page."
        );
    }

    #[test]
    fn entities_decoded_and_nfc_applied() {
        let out = extract_main_content(b"<p>a&amp;b</p>", ExtractFormat::Html).unwrap();
        assert_eq!(out, "a&b");
        // e + combining acute composes to a single char under NFC.
        let out = extract_main_content("cafe\u{0301}".as_bytes(), ExtractFormat::Plain).unwrap();
        assert_eq!(out, "café");
    }

    #[test]
    fn warc_payload_unwrapped() {
        let warc = b"WARC/1.0\r\nWARC-Type: response\r\nContent-Length: 64\r\n\r\n\
                     HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n\
                     <html><body><p>warc body text here</p></body></html>";
        let out = extract_main_content(warc, ExtractFormat::Warc).unwrap();
        assert_eq!(out, "warc body text here");
    }

    #[test]
    fn non_warc_bytes_rejected_as_warc() {
        assert!(matches!(
            extract_main_content(b"<p>x</p>", ExtractFormat::Warc),
            Err(Error::UndecodablePayload(_))
        ));
    }

    #[test]
    fn empty_rules_accept() {
        assert_eq!(url_filter("https://ok.example/a", &[]), UrlDecision::Accept);
    }

    #[test]
    fn direct_host_match_rejects_with_category() {
        let rules = vec![UrlRule::new("bad.example", "adult").unwrap()];
        assert_eq!(
            url_filter("https://bad.example/x", &rules),
            UrlDecision::Reject {
                category: "adult".into()
            }
        );
    }

    #[test]
    fn glob_matches_subdomains() {
        // Hand-applied glob: "*.bad.example" covers "sub.bad.example" but
        // not the bare apex.
        let rules = vec![UrlRule::new("*.bad.example", "adult").unwrap()];
        assert_eq!(
            url_filter("http://sub.bad.example/", &rules),
            UrlDecision::Reject {
                category: "adult".into()
            }
        );
        assert_eq!(
            url_filter("http://bad.example/", &rules),
            UrlDecision::Accept
        );
    }

    #[test]
    fn host_matching_is_case_insensitive() {
        let rules = vec![UrlRule::new("Bad.Example", "gambling").unwrap()];
        assert_eq!(
            url_filter("https://BAD.example/page", &rules),
            UrlDecision::Reject {
                category: "gambling".into()
            }
        );
    }

    #[test]
    fn first_match_wins_and_appending_rules_keeps_earlier_outcomes() {
        let mut rules = vec![
            UrlRule::new("*.example", "first").unwrap(),
            UrlRule::new("a.example", "second").unwrap(),
        ];
        let before = url_filter("https://a.example/", &rules);
        assert_eq!(
            before,
            UrlDecision::Reject {
                category: "first".into()
            }
        );
        rules.push(UrlRule::new("a.example", "third").unwrap());
        assert_eq!(url_filter("https://a.example/", &rules), before);
    }

    #[test]
    fn malformed_urls_reject() {
        assert_eq!(
            url_filter("not a url", &[]),
            UrlDecision::Reject {
                category: "malformed".into()
            }
        );
        assert_eq!(
            url_filter("https:///nohost", &[]),
            UrlDecision::Reject {
                category: "malformed".into()
            }
        );
    }

    #[test]
    fn path_globs_apply() {
        let rules = vec![UrlRule::new("ads.example/banners/*", "ads").unwrap()];
        assert_eq!(
            url_filter("https://ads.example/banners/123", &rules),
            UrlDecision::Reject {
                category: "ads".into()
            }
        );
        assert_eq!(
            url_filter("https://ads.example/about", &rules),
            UrlDecision::Accept
        );
    }

    #[test]
    fn rules_file_parses() {
        let rules = parse_url_rules("# comment\n*.bad.example adult\ncasino.example gambling\n")
            .unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[1].category, "gambling");
        assert!(parse_url_rules("nocategory").is_err());
    }
}
