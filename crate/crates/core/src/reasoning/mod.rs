//! Justification-text analysis: embedding distances compared across groups
//! with Kruskal-Wallis and Cliff's delta, and distinctive expressions.

pub mod embed;
pub mod phrases;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

pub use embed::{cache_key, EmbedError, Embedder, EmbeddingCache, HashingEmbedder, OpenAiEmbedder};
pub use phrases::{distinctive_phrases, tokenize, Phrase, PhraseOptions};

use crate::harness::{Persona, RunRecord};
use crate::stats::bh_fdr;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("corpus has no embeddings")]
    NoEmbeddings,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub run_id: String,
    pub model: String,
    pub persona: Persona,
    pub constraint_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningCorpus {
    pub docs: Vec<Document>,
    /// One vector per document once embedded.
    pub embeddings: Option<Vec<Vec<f32>>>,
}

impl ReasoningCorpus {
    /// One document per selected constraint with a reason, from valid runs,
    /// ordered by run id then selection order.
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut runs: Vec<&RunRecord> = records.iter().filter(|r| r.is_valid()).collect();
        runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        let mut docs = Vec::new();
        for r in runs {
            for id in &r.selections {
                if let Some(text) = r.reasons.get(id) {
                    docs.push(Document {
                        run_id: r.run_id.clone(),
                        model: r.config.model.clone(),
                        persona: r.config.persona,
                        constraint_id: id.clone(),
                        text: text.clone(),
                    });
                }
            }
        }
        Self { docs, embeddings: None }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.as_ref().and_then(|e| e.first()).map(Vec::len)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedStats {
    pub cached: usize,
    pub fetched: usize,
}

/// Embeds every distinct text once, reading and filling the cache.
pub fn embed_corpus(
    corpus: &mut ReasoningCorpus,
    embedder: &dyn Embedder,
    cache: Option<&EmbeddingCache>,
    batch_size: usize,
) -> Result<EmbedStats, ReasoningError> {
    let mut distinct: Vec<&str> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for d in &corpus.docs {
        if !seen.contains_key(d.text.as_str()) {
            seen.insert(&d.text, distinct.len());
            distinct.push(&d.text);
        }
    }
    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; distinct.len()];
    let mut stats = EmbedStats::default();
    let mut missing = Vec::new();
    for (i, t) in distinct.iter().enumerate() {
        match cache.map(|c| c.get(&cache_key(embedder.name(), t))).transpose()?.flatten() {
            Some(v) => {
                vectors[i] = Some(v);
                stats.cached += 1;
            }
            None => missing.push(i),
        }
    }
    for chunk in missing.chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk.iter().map(|&i| distinct[i].to_string()).collect();
        let got = embedder.embed(&texts)?;
        if got.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                found: got.len(),
            }
            .into());
        }
        for (&i, v) in chunk.iter().zip(got) {
            if let Some(c) = cache {
                c.put(&cache_key(embedder.name(), distinct[i]), &v)?;
            }
            vectors[i] = Some(v);
            stats.fetched += 1;
        }
    }
    let vectors: Vec<Vec<f32>> = vectors.into_iter().map(|v| v.expect("every text embedded")).collect();
    if let Some(first) = vectors.first() {
        let dim = first.len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            }
            .into());
        }
    }
    corpus.embeddings = Some(corpus.docs.iter().map(|d| vectors[seen[d.text.as_str()]].clone()).collect());
    Ok(stats)
}

/// Euclidean distance of each embedding to the corpus centroid.
pub fn centroid_distances(embeddings: &[Vec<f32>]) -> Vec<f64> {
    let Some(first) = embeddings.first() else {
        return Vec::new();
    };
    let n = embeddings.len() as f64;
    let mut centroid = vec![0f64; first.len()];
    for v in embeddings {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += *x as f64;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    embeddings
        .iter()
        .map(|v| {
            v.iter()
                .zip(&centroid)
                .map(|(x, c)| (*x as f64 - c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    #[default]
    Model,
    Persona,
}

/// Centroid distances split by group, groups in name order.
pub fn grouped_distances(corpus: &ReasoningCorpus, by: GroupBy) -> Result<Vec<(String, Vec<f64>)>, ReasoningError> {
    let emb = corpus.embeddings.as_ref().ok_or(ReasoningError::NoEmbeddings)?;
    if emb.is_empty() {
        return Err(ReasoningError::EmptyCorpus);
    }
    let d = centroid_distances(emb);
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (doc, x) in corpus.docs.iter().zip(d) {
        let key = match by {
            GroupBy::Model => doc.model.clone(),
            GroupBy::Persona => doc.persona.to_string(),
        };
        groups.entry(key).or_default().push(x);
    }
    Ok(groups.into_iter().collect())
}

/// Ranks from 1 with ties averaged, and the tie term sum(t^3 - t).
fn pooled_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub epsilon2: f64,
    pub n: usize,
}

/// Tie-corrected Kruskal-Wallis H with epsilon^2 = H / (n - 1). When every
/// value is tied, H = 0 and p = 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, ReasoningError> {
    if groups.len() < 2 {
        return Err(ReasoningError::TooFewGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(ReasoningError::EmptyGroup(i.to_string()));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let (ranks, ties) = pooled_ranks(&all);
    let mut pos = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[pos..pos + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        pos += g.len();
    }
    let correction = 1.0 - ties / (n * n * n - n);
    let h = if correction <= 0.0 {
        0.0
    } else {
        ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0)
    };
    let df = groups.len() - 1;
    let p = if h == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("df >= 1").sf(h)
    };
    Ok(KruskalWallis {
        h,
        df,
        p,
        epsilon2: if n > 1.0 { h / (n - 1.0) } else { 0.0 },
        n: all.len(),
    })
}

/// (#{a > b} - #{a < b}) / (|A||B|).
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut diff: i64 = 0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x) as i64;
        let not_above = sorted.partition_point(|&y| y <= x) as i64;
        let above = sorted.len() as i64 - not_above;
        diff += below - above;
    }
    diff as f64 / (a.len() * b.len()) as f64
}

/// Two-sided Mann-Whitney p-value, normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = na + nb;
    let (ranks, ties) = pooled_ranks(&all);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let u = ra - na * (na + 1.0) / 2.0;
    let mu = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * Normal::standard().sf(z)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliffsPair {
    pub a: String,
    pub b: String,
    pub delta: f64,
    pub p: f64,
    pub q: f64,
}

/// Cliff's delta for every pair of groups with Mann-Whitney p-values and BH
/// q-values over the family.
pub fn cliffs_delta_posthoc(groups: &[(String, Vec<f64>)]) -> Result<Vec<CliffsPair>, ReasoningError> {
    if groups.len() < 2 {
        return Err(ReasoningError::TooFewGroups(groups.len()));
    }
    if let Some((name, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(ReasoningError::EmptyGroup(name.clone()));
    }
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i], &groups[j]);
            let p = mann_whitney_p(&a.1, &b.1);
            out.push(CliffsPair {
                a: a.0.clone(),
                b: b.0.clone(),
                delta: cliffs_delta(&a.1, &b.1),
                p,
                q: p,
            });
        }
    }
    let q = bh_fdr(&out.iter().map(|c| c.p).collect::<Vec<_>>()).expect("p-values in [0, 1]");
    for (c, q) in out.iter_mut().zip(q) {
        c.q = q;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_h(groups: &[Vec<f64>]) -> f64 {
        // H = (n-1) sum n_i (rbar_i - rbar)^2 / sum (r - rbar)^2 with
        // midranks counted by direct comparison
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let rank = |x: f64| {
            let less = all.iter().filter(|&&y| y < x).count() as f64;
            let eq = all.iter().filter(|&&y| y == x).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let n = all.len() as f64;
        let rbar = (n + 1.0) / 2.0;
        let mut between = 0.0;
        for g in groups {
            let m = g.iter().map(|&x| rank(x)).sum::<f64>() / g.len() as f64;
            between += g.len() as f64 * (m - rbar).powi(2);
        }
        let total: f64 = all.iter().map(|&x| (rank(x) - rbar).powi(2)).sum();
        (n - 1.0) * between / total
    }

    fn brute_delta(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0i64;
        for x in a {
            for y in b {
                s += (x > y) as i64 - (x < y) as i64;
            }
        }
        s as f64 / (a.len() * b.len()) as f64
    }

    #[test]
    fn kw_matches_brute_force_small_fixtures() {
        let fixtures: Vec<Vec<Vec<f64>>> = vec![
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            vec![vec![1.0, 2.0, 2.0], vec![2.0, 3.0], vec![3.0, 5.0]],
            vec![vec![0.5], vec![0.1, 0.9], vec![0.3, 0.3, 0.7, 0.2]],
        ];
        for g in fixtures {
            let kw = kruskal_wallis(&g).unwrap();
            assert!((kw.h - brute_h(&g)).abs() < 1e-12, "{} {}", kw.h, brute_h(&g));
            assert_eq!(kw.epsilon2, kw.h / (kw.n as f64 - 1.0));
        }
        // fully separated: ranks 1..3 and 4..6 give H = 27/7
        let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((kw.h - 27.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn kw_constant_groups() {
        let kw = kruskal_wallis(&[vec![1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(kw.h, 0.0);
        assert_eq!(kw.epsilon2, 0.0);
        assert_eq!(kw.p, 1.0);
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![]]).is_err());
    }

    #[test]
    fn delta_extremes_and_oracle() {
        assert_eq!(cliffs_delta(&[3.0, 4.0], &[1.0, 2.0]), 1.0);
        assert_eq!(cliffs_delta(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let a = [0.3, 0.9, 0.9, 0.1, 0.5];
        let b = [0.9, 0.2, 0.4, 0.4];
        assert_eq!(cliffs_delta(&a, &b), brute_delta(&a, &b));
    }

    #[test]
    fn posthoc_family() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0, 4.0]),
            ("b".to_string(), vec![5.0, 6.0, 7.0, 8.0]),
            ("c".to_string(), vec![1.5, 2.5, 3.5, 4.5]),
        ];
        let res = cliffs_delta_posthoc(&groups).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[0].delta, -1.0);
        for r in &res {
            assert!(r.q >= r.p);
        }
        assert!(cliffs_delta_posthoc(&groups[..1]).is_err());
    }

    #[test]
    fn null_kw_pvalues_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps: Vec<f64> = (0..200)
            .map(|_| {
                let g: Vec<Vec<f64>> = (0..3).map(|_| (0..30).map(|_| rng.random::<f64>()).collect()).collect();
                kruskal_wallis(&g).unwrap().p
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.1, "{ks}");
    }

    #[test]
    fn embedding_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let emb = HashingEmbedder::new(16);
        let mut corpus = ReasoningCorpus {
            docs: ["same words here", "other words", "same words here"]
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    run_id: format!("r{i}"),
                    model: "m".into(),
                    persona: Persona::Basic,
                    constraint_id: "event_1".into(),
                    text: t.to_string(),
                })
                .collect(),
            embeddings: None,
        };
        let first = embed_corpus(&mut corpus, &emb, Some(&cache), 8).unwrap();
        assert_eq!(first, EmbedStats { cached: 0, fetched: 2 });
        let e1 = corpus.embeddings.clone().unwrap();
        assert_eq!(e1[0], e1[2]);
        assert_eq!(corpus.dim(), Some(16));
        let second = embed_corpus(&mut corpus, &emb, Some(&cache), 8).unwrap();
        assert_eq!(second, EmbedStats { cached: 2, fetched: 0 });
        assert_eq!(corpus.embeddings.unwrap(), e1);
    }

    struct Basis;

    impl Embedder for Basis {
        fn name(&self) -> &str {
            "basis"
        }

        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            Ok(texts
                .iter()
                .map(|t| {
                    let mut v = vec![0.0; 4];
                    v[t.len() % 4] = 1.0;
                    v
                })
                .collect())
        }
    }

    #[test]
    fn basis_vectors_round_trip() {
        let mut corpus = ReasoningCorpus {
            docs: (0..8)
                .map(|i| Document {
                    run_id: format!("r{i}"),
                    model: ["a", "b"][i % 2].into(),
                    persona: Persona::Quality,
                    constraint_id: "style_1".into(),
                    text: "x".repeat(i + 1),
                })
                .collect(),
            embeddings: None,
        };
        embed_corpus(&mut corpus, &Basis, None, 3).unwrap();
        let e = corpus.embeddings.as_ref().unwrap();
        assert!(e.iter().all(|v| v.len() == 4 && v.iter().sum::<f32>() == 1.0));
        let g = grouped_distances(&corpus, GroupBy::Model).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].1.len(), 4);
    }

    #[test]
    fn cached_dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let emb = HashingEmbedder::new(8);
        cache.put(&cache_key(emb.name(), "alpha"), &[1.0, 2.0]).unwrap();
        let mut corpus = ReasoningCorpus {
            docs: ["alpha", "beta"]
                .iter()
                .map(|t| Document {
                    run_id: "r".into(),
                    model: "m".into(),
                    persona: Persona::Basic,
                    constraint_id: "event_1".into(),
                    text: t.to_string(),
                })
                .collect(),
            embeddings: None,
        };
        let err = embed_corpus(&mut corpus, &emb, Some(&cache), 4).unwrap_err();
        assert!(matches!(err, ReasoningError::Embed(EmbedError::DimensionMismatch { .. })));
    }

    #[test]
    fn parses_openai_embedding_body() {
        let body = serde_json::json!({"data": [
            {"index": 1, "embedding": [0.5, 0.25]},
            {"index": 0, "embedding": [1.0, 0.0]},
        ]});
        let v = embed::parse_embedding_response(&body, 2).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.5, 0.25]]);
        assert!(embed::parse_embedding_response(&body, 3).is_err());
    }

    proptest! {
        #[test]
        fn rank_statistics_invariants(
            a in proptest::collection::vec(-50i32..50, 1..10),
            b in proptest::collection::vec(-50i32..50, 1..10),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = cliffs_delta(&a, &b);
            prop_assert_eq!(d, brute_delta(&a, &b));
            prop_assert_eq!(d, -cliffs_delta(&b, &a));
            prop_assert!(d.abs() <= 1.0);
            let kw = kruskal_wallis(&[a.clone(), b.clone()]).unwrap();
            let cubed: Vec<Vec<f64>> = [&a, &b].iter().map(|g| g.iter().map(|x| x.powi(3) + 2.0).collect()).collect();
            let kw2 = kruskal_wallis(&cubed).unwrap();
            prop_assert!((kw.h - kw2.h).abs() < 1e-9);
            prop_assert!(kw.epsilon2 >= 0.0 && kw.epsilon2 <= 1.0);
            if kw.h > 0.0 {
                prop_assert!((kw.h - brute_h(&[a, b])).abs() < 1e-9);
            }
        }
    }
}
