//! Extraction of selections, reasons and the compatibility paragraph from a
//! model response.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::library::{ConstraintPool, Element};

/// Case, whitespace, quote and terminal-punctuation fold used for matching
/// echoed constraint text against the library.
pub fn normalize_text(s: &str) -> String {
    let folded: String = s
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
            '\u{2013}' | '\u{2014}' | '\u{2212}' => '-',
            '\u{00A0}' => ' ',
            c => c,
        })
        .flat_map(char::to_lowercase)
        .collect();
    let mut t = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    t = strip_element_label(&t).to_string();
    let edge = |c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | '*' | '`');
    t.trim_matches(|c: char| edge(c) || c.is_whitespace()).to_string()
}

fn strip_element_label(s: &str) -> &str {
    let Some(rest) = s.strip_prefix('[') else {
        return s;
    };
    for e in Element::ALL {
        let name = e.id_prefix();
        if let Some(after) = rest.strip_prefix(name).and_then(|r| r.strip_prefix(']')) {
            return after.trim_start();
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    /// Accept a normalized edit similarity at or above `fuzzy_threshold`
    /// when no exact normalized match exists.
    pub fuzzy: bool,
    pub fuzzy_threshold: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            fuzzy: false,
            fuzzy_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub item: usize,
    pub text: String,
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParseProblem {
    NoArray,
    MissingCompatibility,
    MalformedItem { item: usize, detail: String },
    Unresolved { item: usize, text: String },
}

impl fmt::Display for ParseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseProblem::NoArray => f.write_str("no JSON array found"),
            ParseProblem::MissingCompatibility => {
                f.write_str("trailing compatibility object missing")
            }
            ParseProblem::MalformedItem { item, detail } => write!(f, "item {item}: {detail}"),
            ParseProblem::Unresolved { item, text } => {
                write!(f, "item {item}: constraint text not found in library: {text:?}")
            }
        }
    }
}

/// Everything recovered from a response. `problems` is empty for a clean parse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub selections: Vec<String>,
    pub reasons: BTreeMap<String, String>,
    pub compatibility: Option<String>,
    pub fuzzy_matches: Vec<FuzzyMatch>,
    pub problems: Vec<ParseProblem>,
}

impl ParsedResponse {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Lookup from normalized text to constraint id.
pub struct TextResolver<'a> {
    pool: &'a ConstraintPool,
    exact: HashMap<String, usize>,
    normalized: Vec<String>,
}

impl<'a> TextResolver<'a> {
    pub fn new(pool: &'a ConstraintPool) -> Self {
        let normalized: Vec<String> = pool
            .constraints()
            .iter()
            .map(|c| normalize_text(&c.text))
            .collect();
        let exact = normalized
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            pool,
            exact,
            normalized,
        }
    }

    pub fn exact(&self, text: &str) -> Option<&'a str> {
        let pool = self.pool;
        self.exact
            .get(&normalize_text(text))
            .map(|&i| pool.get(i).id.as_str())
    }

    /// Best normalized Levenshtein match at or above `threshold`.
    pub fn fuzzy(&self, text: &str, threshold: f64) -> Option<(&'a str, f64)> {
        let pool = self.pool;
        let n = normalize_text(text);
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in self.normalized.iter().enumerate() {
            let s = strsim::normalized_levenshtein(&n, cand);
            if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, s)| (pool.get(i).id.as_str(), s))
    }
}

/// Finds the first JSON array of objects embedded in `raw`.
fn find_array(raw: &str) -> Option<Vec<Value>> {
    for (pos, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if items.iter().any(Value::is_object) {
                return Some(items);
            }
        }
    }
    None
}

fn constraint_text(obj: &serde_json::Map<String, Value>) -> Option<&str> {
    if let Some((_, Value::String(s))) = obj.iter().find(|(k, _)| k.eq_ignore_ascii_case("constraint")) {
        return Some(s);
    }
    obj.iter()
        .filter(|(k, _)| !k.eq_ignore_ascii_case("reason") && !k.eq_ignore_ascii_case("compatibility"))
        .find_map(|(_, v)| v.as_str())
}

fn reason_text(obj: &serde_json::Map<String, Value>) -> Option<String> {
    obj.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("reason"))
        .and_then(|(_, v)| v.as_str().map(String::from))
}

/// Parses a raw response in the JSON-array wire format. Never fails outright;
/// problems are reported per item in the result.
pub fn parse_response(raw: &str, pool: &ConstraintPool, options: ParseOptions) -> ParsedResponse {
    parse_with(raw, &TextResolver::new(pool), options)
}

pub fn parse_with(raw: &str, resolver: &TextResolver<'_>, options: ParseOptions) -> ParsedResponse {
    let mut out = ParsedResponse::default();
    let Some(items) = find_array(raw) else {
        out.problems.push(ParseProblem::NoArray);
        return out;
    };
    for (i, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            out.problems.push(ParseProblem::MalformedItem {
                item: i,
                detail: "not a JSON object".into(),
            });
            continue;
        };
        if let Some((_, v)) = obj
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("compatibility"))
        {
            out.compatibility = Some(match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            });
            continue;
        }
        let Some(text) = constraint_text(obj) else {
            out.problems.push(ParseProblem::MalformedItem {
                item: i,
                detail: "no constraint text".into(),
            });
            continue;
        };
        let id = match resolver.exact(text) {
            Some(id) => Some(id),
            None if options.fuzzy => resolver.fuzzy(text, options.fuzzy_threshold).map(|(id, s)| {
                out.fuzzy_matches.push(FuzzyMatch {
                    item: i,
                    text: text.to_string(),
                    id: id.to_string(),
                    similarity: s,
                });
                id
            }),
            None => None,
        };
        match id {
            Some(id) => {
                out.selections.push(id.to_string());
                if let Some(r) = reason_text(obj) {
                    out.reasons.entry(id.to_string()).or_insert(r);
                }
            }
            None => out.problems.push(ParseProblem::Unresolved {
                item: i,
                text: text.to_string(),
            }),
        }
    }
    if out.compatibility.is_none() {
        out.problems.push(ParseProblem::MissingCompatibility);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire(texts: &[&str]) -> String {
        let mut items: Vec<Value> = texts
            .iter()
            .map(|t| serde_json::json!({"constraint": t, "reason": format!("because {t}")}))
            .collect();
        items.push(serde_json::json!({"compatibility": "They fit."}));
        serde_json::to_string_pretty(&items).unwrap()
    }

    #[test]
    fn well_formed_twenty() {
        let pool = ConstraintPool::canonical();
        let texts: Vec<&str> = pool.constraints()[..20].iter().map(|c| c.text.as_str()).collect();
        let raw = format!("Here is my answer:\n```json\n{}\n```", wire(&texts));
        let p = parse_response(&raw, &pool, ParseOptions::default());
        assert!(p.is_clean(), "{:?}", p.problems);
        assert_eq!(p.selections.len(), 20);
        assert_eq!(p.reasons.len(), 20);
        assert_eq!(p.compatibility.as_deref(), Some("They fit."));
        assert_eq!(p.selections[0], pool.get(0).id);
    }

    #[test]
    fn nineteen_items_still_parse() {
        let pool = ConstraintPool::canonical();
        let texts: Vec<&str> = pool.constraints()[..19].iter().map(|c| c.text.as_str()).collect();
        let p = parse_response(&wire(&texts), &pool, ParseOptions::default());
        assert!(p.is_clean());
        assert_eq!(p.selections.len(), 19);
    }

    #[test]
    fn normalization_resolves_sloppy_echo() {
        let pool = ConstraintPool::canonical();
        let c = pool.by_id("event_9").unwrap();
        let sloppy = format!("  {}  ", c.text.to_uppercase().replace(' ', "  ").trim_end_matches('.'));
        let sloppy = format!("{sloppy}.");
        let p = parse_response(&wire(&[&sloppy]), &pool, ParseOptions::default());
        assert_eq!(p.selections, vec!["event_9".to_string()]);
        let labeled = format!("[Style] {}", pool.by_id("style_22").unwrap().text);
        let p = parse_response(&wire(&[&labeled]), &pool, ParseOptions::default());
        assert_eq!(p.selections, vec!["style_22".to_string()]);
    }

    #[test]
    fn curly_quotes_fold() {
        assert_eq!(normalize_text("He said \u{201C}no\u{201D}."), "he said \"no");
        assert_eq!(normalize_text("it\u{2019}s  fine!"), "it's fine");
    }

    #[test]
    fn fuzzy_is_gated_and_logged() {
        let pool = ConstraintPool::canonical();
        let text = pool.by_id("setting_18").unwrap().text.replacen("alien", "alein", 1);
        let p = parse_response(&wire(&[&text]), &pool, ParseOptions::default());
        assert!(p.selections.is_empty());
        assert!(matches!(p.problems[0], ParseProblem::Unresolved { item: 0, .. }));
        let p = parse_response(
            &wire(&[&text]),
            &pool,
            ParseOptions {
                fuzzy: true,
                ..Default::default()
            },
        );
        assert_eq!(p.selections, vec!["setting_18".to_string()]);
        assert_eq!(p.fuzzy_matches.len(), 1);
        assert!(p.fuzzy_matches[0].similarity >= 0.9);
    }

    #[test]
    fn structural_problems() {
        let pool = ConstraintPool::canonical();
        let p = parse_response("I refuse.", &pool, ParseOptions::default());
        assert_eq!(p.problems, vec![ParseProblem::NoArray]);
        let raw = format!(r#"[{{"constraint": "{}", "reason": "x"}}]"#, pool.get(3).text);
        let p = parse_response(&raw, &pool, ParseOptions::default());
        assert_eq!(p.selections.len(), 1);
        assert_eq!(p.problems, vec![ParseProblem::MissingCompatibility]);
    }

    #[test]
    fn skips_bracketed_prose_before_array() {
        let pool = ConstraintPool::canonical();
        let raw = format!("[Style] choices first.\n{}", wire(&[&pool.get(60).text]));
        let p = parse_response(&raw, &pool, ParseOptions::default());
        assert!(p.is_clean());
        assert_eq!(p.selections, vec![pool.get(60).id.clone()]);
    }
}
