//! Group-distinctive n-grams in justification texts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Lowercased word tokens; apostrophes inside words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhraseOptions {
    pub min_n: usize,
    pub max_n: usize,
    /// Minimum ratio of within-group to other-group relative frequency.
    pub ratio: f64,
    pub min_support: usize,
    pub top_k: usize,
}

impl Default for PhraseOptions {
    fn default() -> Self {
        Self {
            min_n: 1,
            max_n: 3,
            ratio: 3.0,
            min_support: 5,
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub phrase: String,
    pub count: usize,
    /// Position in the group's full frequency ordering, from 1.
    pub rank: usize,
    /// Relative-frequency ratio versus the other groups; infinite when the
    /// phrase never occurs elsewhere.
    pub ratio: f64,
}

struct GroupCounts {
    counts: HashMap<String, usize>,
    total: usize,
}

fn count_ngrams<'a>(texts: impl Iterator<Item = &'a str>, min_n: usize, max_n: usize) -> GroupCounts {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0;
    for text in texts {
        let toks = tokenize(text);
        for n in min_n.max(1)..=max_n {
            for w in toks.windows(n) {
                *counts.entry(w.join(" ")).or_default() += 1;
                total += 1;
            }
        }
    }
    GroupCounts { counts, total }
}

fn ngram_len(p: &str) -> usize {
    p.split(' ').count()
}

/// Frequency order: count descending, longer n-grams first on ties, then
/// lexical.
fn frequency_order(a: &(&String, &usize), b: &(&String, &usize)) -> std::cmp::Ordering {
    b.1.cmp(a.1)
        .then_with(|| ngram_len(b.0).cmp(&ngram_len(a.0)))
        .then_with(|| a.0.cmp(b.0))
}

/// Per group, the n-grams whose relative frequency is at least `ratio`
/// times that of all other groups pooled, with at least `min_support`
/// occurrences. A phrase qualifying in several groups is kept only where
/// its ratio is largest. Output per group is in frequency-rank order.
pub fn distinctive_phrases(docs: &[(String, String)], options: PhraseOptions) -> BTreeMap<String, Vec<Phrase>> {
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (g, t) in docs {
        by_group.entry(g.as_str()).or_default().push(t.as_str());
    }
    let groups: BTreeMap<&str, GroupCounts> = by_group
        .iter()
        .map(|(g, texts)| (*g, count_ngrams(texts.iter().copied(), options.min_n, options.max_n)))
        .collect();
    let mut all: HashMap<&str, usize> = HashMap::new();
    let mut grand_total = 0;
    for gc in groups.values() {
        grand_total += gc.total;
        for (p, &c) in &gc.counts {
            *all.entry(p.as_str()).or_default() += c;
        }
    }

    let mut candidates: BTreeMap<&str, Vec<Phrase>> = BTreeMap::new();
    for (g, gc) in &groups {
        let mut ordered: Vec<(&String, &usize)> = gc.counts.iter().collect();
        ordered.sort_by(frequency_order);
        let other_total = grand_total - gc.total;
        let mut out = Vec::new();
        for (rank, (p, &c)) in ordered.into_iter().enumerate() {
            if c < options.min_support {
                continue;
            }
            let other = all[p.as_str()] - c;
            let within = c as f64 / gc.total as f64;
            let ratio = if other == 0 {
                f64::INFINITY
            } else {
                within / (other as f64 / other_total as f64)
            };
            if ratio >= options.ratio {
                out.push(Phrase {
                    phrase: p.clone(),
                    count: c,
                    rank: rank + 1,
                    ratio,
                });
            }
        }
        candidates.insert(g, out);
    }

    // keep each phrase under its best group only
    let mut best: HashMap<&str, (&str, f64)> = HashMap::new();
    for (g, list) in &candidates {
        for p in list {
            let e = best.entry(p.phrase.as_str()).or_insert((g, p.ratio));
            if p.ratio > e.1 {
                *e = (g, p.ratio);
            }
        }
    }
    let mut result = BTreeMap::new();
    for (g, list) in &candidates {
        let kept: Vec<Phrase> = list
            .iter()
            .filter(|p| best[p.phrase.as_str()].0 == *g)
            .take(options.top_k)
            .cloned()
            .collect();
        result.insert(g.to_string(), kept);
    }
    result
}
