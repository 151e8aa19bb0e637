//! Co-occurrence and PPMI networks over selected constraints, node-strength
//! rankings and their comparison.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::Persona;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("no runs to build a network from")]
    NoRuns,
    #[error("no co-occurring pairs; PPMI is undefined")]
    ZeroTotal,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("`{0}` is not a node of the graph")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Cooccurrence,
    Ppmi,
}

/// Undirected graph stored as a dense symmetric matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub kind: GraphKind,
    pub nodes: Vec<String>,
    weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n() + j]
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    pub fn weight_between(&self, a: &str, b: &str) -> Result<f64, NetworkError> {
        let i = self.index(a).ok_or_else(|| NetworkError::UnknownNode(a.into()))?;
        let j = self.index(b).ok_or_else(|| NetworkError::UnknownNode(b.into()))?;
        Ok(self.weight(i, j))
    }

    /// Edges with positive weight, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Sum of incident edge weights per node.
    pub fn strengths(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| self.weight(i, j)).sum())
            .collect()
    }

    /// `i<TAB>j<TAB>weight` lines for positive edges.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::from("source\ttarget\tweight\n");
        for (i, j, w) in self.edges() {
            let _ = writeln!(s, "{}\t{}\t{}", self.nodes[i], self.nodes[j], fmt_weight(w));
        }
        s
    }
}

fn fmt_weight(w: f64) -> String {
    if w.fract() == 0.0 && w.abs() < 1e15 {
        format!("{}", w as i64)
    } else {
        format!("{w:.10}")
    }
}

/// Orders ids by their non-numeric prefix, then by trailing number, so that
/// `event_2` sorts before `event_10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (&s[..cut], s[cut..].parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then(a.cmp(b))
}

const RUN_CHUNK: usize = 64;

/// Counts, for every pair of nodes, the runs that selected both. `nodes`
/// fixes the node set and order; selections outside it are ignored.
pub fn build_cooccurrence(nodes: &[String], runs: &[Vec<String>]) -> Result<WeightedGraph, NetworkError> {
    if runs.is_empty() {
        return Err(NetworkError::NoRuns);
    }
    if nodes.is_empty() {
        return Err(NetworkError::EmptyGraph);
    }
    let n = nodes.len();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let chunks = runs.len().div_ceil(RUN_CHUNK);
    let partial = par::map_range(chunks, |ci| {
        let mut counts = vec![0u32; n * n];
        for sel in &runs[ci * RUN_CHUNK..((ci + 1) * RUN_CHUNK).min(runs.len())] {
            let mut idx: Vec<usize> = sel.iter().filter_map(|s| index.get(s.as_str()).copied()).collect();
            idx.sort_unstable();
            idx.dedup();
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    counts[i * n + j] += 1;
                    counts[j * n + i] += 1;
                }
            }
        }
        counts
    });
    let mut total = vec![0u32; n * n];
    for c in partial {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(WeightedGraph {
        kind: GraphKind::Cooccurrence,
        nodes: nodes.to_vec(),
        weights: total.into_iter().map(f64::from).collect(),
    })
}

/// PPMI(i, j) = max(0, ln(c_ij T / (c_i c_j))) where T sums the whole
/// co-occurrence matrix (ordered pairs) and c_i is row i's sum.
pub fn build_ppmi(cooc: &WeightedGraph) -> Result<WeightedGraph, NetworkError> {
    let n = cooc.n();
    let rows: Vec<f64> = (0..n).map(|i| (0..n).map(|j| cooc.weight(i, j)).sum()).collect();
    let total: f64 = rows.iter().sum();
    if total <= 0.0 {
        return Err(NetworkError::ZeroTotal);
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let c = cooc.weight(i, j);
            if i != j && c > 0.0 {
                weights[i * n + j] = (c * total / (rows[i] * rows[j])).ln().max(0.0);
            }
        }
    }
    Ok(WeightedGraph {
        kind: GraphKind::Ppmi,
        nodes: cooc.nodes.clone(),
        weights,
    })
}

/// Nodes by descending strength; ties broken by natural id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub ids: Vec<String>,
    pub strengths: Vec<f64>,
    /// Fewer nodes than requested were available.
    pub truncated: bool,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn set(&self) -> BTreeSet<&str> {
        self.ids.iter().map(String::as_str).collect()
    }
}

pub fn node_strength_topk(graph: &WeightedGraph, k: usize) -> Result<Ranking, NetworkError> {
    if graph.n() == 0 {
        return Err(NetworkError::EmptyGraph);
    }
    let s = graph.strengths();
    let mut order: Vec<usize> = (0..graph.n()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then_with(|| natural_cmp(&graph.nodes[a], &graph.nodes[b])));
    let truncated = k > order.len();
    order.truncate(k);
    Ok(Ranking {
        ids: order.iter().map(|&i| graph.nodes[i].clone()).collect(),
        strengths: order.iter().map(|&i| s[i]).collect(),
        truncated,
    })
}

pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let overlap = a.intersection(b).count();
    let union = a.len() + b.len() - overlap;
    if union == 0 {
        1.0
    } else {
        overlap as f64 / union as f64
    }
}

/// Ranks starting at 1 with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho (Pearson on average ranks). NaN when either side is
/// constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided permutation p-value for rho: (1 + #{|rho*| >= |rho|}) / (B + 1).
pub fn spearman_permutation_p(x: &[f64], y: &[f64], replicates: usize, seed: u64) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry);
    if rho.is_nan() || replicates == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ry.clone();
    let mut hits = 0usize;
    for _ in 0..replicates {
        shuffled.shuffle(&mut rng);
        if pearson(&rx, &shuffled).abs() >= rho.abs() - 1e-12 {
            hits += 1;
        }
    }
    (1.0 + hits as f64) / (replicates as f64 + 1.0)
}

/// Mean over runs of the fraction of each run's selections inside `set`.
/// Runs without selections are skipped.
pub fn inclusion_rate(set: &BTreeSet<&str>, runs: &[Vec<String>]) -> f64 {
    let rates: Vec<f64> = runs
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| r.iter().filter(|s| set.contains(s.as_str())).count() as f64 / r.len() as f64)
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingComparison {
    pub k: usize,
    pub overlap: usize,
    pub jaccard: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    /// Nodes over which rho is computed (union of both top sets).
    pub n_union: usize,
    pub avg_inclusion_cooc: f64,
    pub avg_inclusion_ppmi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub k: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            k: 100,
            replicates: 2000,
            seed: 0,
        }
    }
}

/// Frequency hubs versus PPMI backbone for one slice of runs. Rho is taken
/// over the union of the two top-k sets, using each graph's full strengths.
pub fn compare_rankings(
    cooc: &WeightedGraph,
    ppmi: &WeightedGraph,
    runs: &[Vec<String>],
    options: CompareOptions,
) -> Result<RankingComparison, NetworkError> {
    let a = node_strength_topk(cooc, options.k)?;
    let b = node_strength_topk(ppmi, options.k)?;
    if a.is_empty() || b.is_empty() {
        return Err(NetworkError::EmptyRanking);
    }
    let (sa, sb) = (a.set(), b.set());
    let union: Vec<&str> = sa.union(&sb).copied().collect();
    let full_a = cooc.strengths();
    let full_b = ppmi.strengths();
    let mut x = Vec::with_capacity(union.len());
    let mut y = Vec::with_capacity(union.len());
    for id in &union {
        x.push(full_a[cooc.index(id).ok_or_else(|| NetworkError::UnknownNode(id.to_string()))?]);
        y.push(full_b[ppmi.index(id).ok_or_else(|| NetworkError::UnknownNode(id.to_string()))?]);
    }
    Ok(RankingComparison {
        k: options.k,
        overlap: sa.intersection(&sb).count(),
        jaccard: jaccard(&sa, &sb),
        spearman_rho: spearman(&x, &y),
        spearman_p: spearman_permutation_p(&x, &y, options.replicates, options.seed),
        n_union: union.len(),
        avg_inclusion_cooc: inclusion_rate(&sa, runs),
        avg_inclusion_ppmi: inclusion_rate(&sb, runs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub id: String,
    pub rank_basic: f64,
    pub rank_quality: f64,
    pub rank_creativity: f64,
    pub avg_bq: f64,
    pub delta: f64,
    /// Some persona ranking lacked the node.
    pub missing: bool,
}

/// |mean(rank_B, rank_Q) - rank_C| per node, largest first. Nodes absent
/// from a ranking get rank (node count + 1) and are marked.
pub fn persona_rank_divergence(rankings: &BTreeMap<Persona, Vec<String>>) -> Vec<DivergenceRow> {
    let mut all: BTreeSet<&str> = BTreeSet::new();
    for r in rankings.values() {
        all.extend(r.iter().map(String::as_str));
    }
    let fill = all.len() as f64 + 1.0;
    let positions: BTreeMap<Persona, HashMap<&str, f64>> = Persona::ALL
        .into_iter()
        .map(|p| {
            let m = rankings
                .get(&p)
                .map(|r| r.iter().enumerate().map(|(i, s)| (s.as_str(), i as f64 + 1.0)).collect())
                .unwrap_or_default();
            (p, m)
        })
        .collect();
    let mut rows: Vec<DivergenceRow> = all
        .into_iter()
        .map(|id| {
            let mut missing = false;
            let mut rank = |p: Persona| {
                positions[&p].get(id).copied().unwrap_or_else(|| {
                    missing = true;
                    fill
                })
            };
            let (b, q, c) = (rank(Persona::Basic), rank(Persona::Quality), rank(Persona::Creativity));
            let avg = (b + q) / 2.0;
            DivergenceRow {
                id: id.to_string(),
                rank_basic: b,
                rank_quality: q,
                rank_creativity: c,
                avg_bq: avg,
                delta: (avg - c).abs(),
                missing,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| natural_cmp(&a.id, &b.id)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn hand() -> (Vec<String>, Vec<Vec<String>>) {
        (
            ids(&["a", "b", "c", "d"]),
            vec![ids(&["a", "b", "c"]), ids(&["a", "b"]), ids(&["b", "c", "d"]), ids(&["a", "d"])],
        )
    }

    #[test]
    fn hand_fixture_cooccurrence_and_ppmi() {
        let (nodes, runs) = hand();
        let g = build_cooccurrence(&nodes, &runs).unwrap();
        let expect = [[0., 2., 1., 1.], [2., 0., 2., 1.], [1., 2., 0., 1.], [1., 1., 1., 0.]];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.weight(i, j), expect[i][j]);
            }
        }
        // rows 4, 5, 4, 3; T = 16
        let p = build_ppmi(&g).unwrap();
        let w = |a, b| p.weight_between(a, b).unwrap();
        assert_eq!(w("a", "b"), (32.0f64 / 20.0).ln());
        assert_eq!(w("a", "c"), 0.0);
        assert_eq!(w("a", "d"), (16.0f64 / 12.0).ln());
        assert_eq!(w("b", "c"), (32.0f64 / 20.0).ln());
        assert_eq!(w("b", "d"), (16.0f64 / 15.0).ln());
        assert_eq!(w("c", "d"), (16.0f64 / 12.0).ln());
    }

    #[test]
    fn three_node_closed_form() {
        let nodes = ids(&["a", "b", "c"]);
        let runs = vec![ids(&["a", "b"]), ids(&["a", "b"]), ids(&["a", "c"]), ids(&["b", "c"])];
        let g = build_cooccurrence(&nodes, &runs).unwrap();
        assert_eq!(g.weight_between("a", "b").unwrap(), 2.0);
        let p = build_ppmi(&g).unwrap();
        assert!((p.weight_between("a", "b").unwrap() - (16.0f64 / 9.0).ln()).abs() < 1e-15);
        assert!((p.weight_between("a", "c").unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((p.weight_between("b", "c").unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn one_pooled_run_has_190_edges() {
        let nodes: Vec<String> = (1..=200).map(|i| format!("c_{i}")).collect();
        let run: Vec<String> = nodes.iter().step_by(10).cloned().collect();
        assert_eq!(run.len(), 20);
        let g = build_cooccurrence(&nodes, &[run]).unwrap();
        let e = g.edges();
        assert_eq!(e.len(), 190);
        assert!(e.iter().all(|&(_, _, w)| w == 1.0));
        assert_eq!(g.to_edge_list().lines().count(), 191);
    }

    #[test]
    fn errors() {
        let nodes = ids(&["a", "b"]);
        assert_eq!(build_cooccurrence(&nodes, &[]).unwrap_err(), NetworkError::NoRuns);
        let g = build_cooccurrence(&nodes, &[ids(&["a"])]).unwrap();
        assert_eq!(build_ppmi(&g).unwrap_err(), NetworkError::ZeroTotal);
    }

    #[test]
    fn always_together_is_positive() {
        let nodes: Vec<String> = (0..20).map(|i| format!("n{i}")).collect();
        let runs: Vec<Vec<String>> = (0..10)
            .map(|r| vec!["n0".into(), "n1".into(), format!("n{}", 2 + r % 18), format!("n{}", 2 + (r + 5) % 18)])
            .collect();
        let p = build_ppmi(&build_cooccurrence(&nodes, &runs).unwrap()).unwrap();
        assert!(p.weight_between("n0", "n1").unwrap() > 0.0);
    }

    #[test]
    fn independent_selection_gives_near_zero_ppmi() {
        // pair-marginal normalisation leaves a bias of ln(n / (n - 1))
        let n = 30;
        let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs: Vec<Vec<String>> = (0..100_000)
            .map(|_| nodes.iter().filter(|_| rng.random_bool(0.3)).cloned().collect())
            .collect();
        let p = build_ppmi(&build_cooccurrence(&nodes, &runs).unwrap()).unwrap();
        let edges = p.edges();
        let max = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
        let mean = edges.iter().map(|e| e.2).sum::<f64>() / edges.len() as f64;
        let bias = (n as f64 / (n as f64 - 1.0)).ln();
        assert!(max < 0.1, "{max}");
        assert!((mean - bias).abs() < 0.01, "{mean}");
    }

    fn graph(nodes: &[&str], edges: &[(&str, &str, f64)]) -> WeightedGraph {
        let nodes = ids(nodes);
        let n = nodes.len();
        let mut weights = vec![0.0; n * n];
        for &(a, b, w) in edges {
            let i = nodes.iter().position(|x| x == a).unwrap();
            let j = nodes.iter().position(|x| x == b).unwrap();
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
        WeightedGraph {
            kind: GraphKind::Cooccurrence,
            nodes,
            weights,
        }
    }

    #[test]
    fn star_strengths_and_ties() {
        let g = graph(
            &["hub", "l1", "l2", "l3", "l4", "l5"],
            &[("hub", "l1", 1.), ("hub", "l2", 1.), ("hub", "l3", 1.), ("hub", "l4", 1.), ("hub", "l5", 1.)],
        );
        let r = node_strength_topk(&g, 3).unwrap();
        assert_eq!(r.ids, ids(&["hub", "l1", "l2"]));
        assert_eq!(r.strengths, vec![5.0, 1.0, 1.0]);
        assert!(!r.truncated);
        assert!(node_strength_topk(&g, 10).unwrap().truncated);
        let g = graph(&["event_10", "event_2", "x"], &[("event_10", "x", 1.), ("event_2", "x", 1.)]);
        assert_eq!(node_strength_topk(&g, 3).unwrap().ids, ids(&["x", "event_2", "event_10"]));
    }

    #[test]
    fn ranking_matches_brute_force() {
        let (nodes, runs) = hand();
        let g = build_cooccurrence(&nodes, &runs).unwrap();
        let r = node_strength_topk(&g, 4).unwrap();
        let mut brute: Vec<(f64, &str)> = nodes
            .iter()
            .map(|a| (nodes.iter().filter(|b| *b != a).map(|b| g.weight_between(a, b).unwrap()).sum(), a.as_str()))
            .collect();
        brute.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
        assert_eq!(r.ids, brute.iter().map(|x| x.1.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn published_jaccard_values() {
        let make = |offset: usize| -> Vec<String> { (offset..offset + 100).map(|i| format!("c{i}")).collect() };
        let (a, b83, b43) = (make(0), make(17), make(57));
        fn set(v: &[String]) -> BTreeSet<&str> {
            v.iter().map(String::as_str).collect()
        }
        assert_eq!(format!("{:.2}", jaccard(&set(&a), &set(&b83))), "0.71");
        assert_eq!(format!("{:.2}", jaccard(&set(&a), &set(&b43))), "0.27");
        assert_eq!(jaccard(&set(&a), &set(&a)), 1.0);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &x), 1.0);
        assert_eq!(spearman(&x, &rev), -1.0);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        let p = spearman_permutation_p(&x, &x, 999, 1);
        // 2 of 120 orderings reach |rho| = 1
        assert!((p - 2.0 / 120.0).abs() < 0.015);
    }

    #[test]
    fn identical_graphs_compare_perfectly() {
        let (nodes, runs) = hand();
        let g = build_cooccurrence(&nodes, &runs).unwrap();
        let c = compare_rankings(&g, &g, &runs, CompareOptions { k: 4, replicates: 99, seed: 0 }).unwrap();
        assert_eq!(c.jaccard, 1.0);
        assert_eq!(c.spearman_rho, 1.0);
        assert_eq!(c.avg_inclusion_cooc, 1.0);
        assert_eq!(c.overlap, 4);
    }

    #[test]
    fn divergence_arithmetic() {
        let mut basic: Vec<String> = (0..200).map(|i| format!("n{i}")).collect();
        let mut quality = basic.clone();
        let mut creativity = basic.clone();
        // move "event_9" to ranks 183 / 170 / 5
        basic.insert(182, "event_9".into());
        quality.insert(169, "event_9".into());
        creativity.insert(4, "event_9".into());
        let rankings = BTreeMap::from([
            (Persona::Basic, basic),
            (Persona::Quality, quality),
            (Persona::Creativity, creativity),
        ]);
        let rows = persona_rank_divergence(&rankings);
        assert_eq!(rows[0].id, "event_9");
        assert_eq!(rows[0].avg_bq, 176.5);
        assert_eq!(rows[0].delta, 171.5);
        assert!(!rows[0].missing);

        let same: BTreeMap<Persona, Vec<String>> = Persona::ALL.into_iter().map(|p| (p, ids(&["a", "b", "c"]))).collect();
        assert!(persona_rank_divergence(&same).iter().all(|r| r.delta == 0.0));

        let mut gap = same.clone();
        gap.get_mut(&Persona::Creativity).unwrap().retain(|s| s != "b");
        let rows = persona_rank_divergence(&gap);
        let b = rows.iter().find(|r| r.id == "b").unwrap();
        assert!(b.missing);
        assert_eq!(b.rank_creativity, 4.0);
        assert_eq!(b.delta, 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn graph_invariants(
            runs in proptest::collection::vec(proptest::sample::subsequence((0..12usize).collect::<Vec<_>>(), 4), 1..12),
            shift in 0usize..12,
        ) {
            let nodes: Vec<String> = (0..12).map(|i| format!("n{i}")).collect();
            let sel: Vec<Vec<String>> = runs.iter().map(|r| r.iter().map(|&i| nodes[i].clone()).collect()).collect();
            let g = build_cooccurrence(&nodes, &sel).unwrap();
            for s in g.strengths() {
                prop_assert!(s <= (sel.len() * 3) as f64);
            }
            for i in 0..12 {
                prop_assert_eq!(g.weight(i, i), 0.0);
                for j in 0..12 {
                    prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                }
            }
            if let Ok(p) = build_ppmi(&g) {
                for (i, j, w) in p.edges() {
                    prop_assert!(w > 0.0 && g.weight(i, j) > 0.0);
                }
                // relabelling nodes leaves the comparison unchanged
                let opts = CompareOptions { k: 5, replicates: 0, seed: 0 };
                let base = compare_rankings(&g, &p, &sel, opts).unwrap();
                let renamed: Vec<String> = (0..12).map(|i| format!("m{}", (i + shift) % 12 + 100)).collect();
                let map: HashMap<&str, &str> = nodes.iter().map(String::as_str).zip(renamed.iter().map(String::as_str)).collect();
                let sel2: Vec<Vec<String>> = sel.iter().map(|r| r.iter().map(|s| map[s.as_str()].to_string()).collect()).collect();
                let g2 = build_cooccurrence(&renamed, &sel2).unwrap();
                let p2 = build_ppmi(&g2).unwrap();
                let other = compare_rankings(&g2, &p2, &sel2, opts).unwrap();
                // ties may be broken differently under renaming, so compare
                // only when strengths are distinct
                let s = g.strengths();
                let t = p.strengths();
                let distinct = |v: &Vec<f64>| { let mut w = v.clone(); w.sort_by(f64::total_cmp); w.windows(2).all(|x| x[0] != x[1]) };
                if distinct(&s) && distinct(&t) {
                    prop_assert_eq!(base.overlap, other.overlap);
                    prop_assert!((base.spearman_rho - other.spearman_rho).abs() < 1e-12 || (base.spearman_rho.is_nan() && other.spearman_rho.is_nan()));
                }
                let a: BTreeSet<&str> = nodes[..6].iter().map(String::as_str).collect();
                let b: BTreeSet<&str> = nodes[shift / 2..shift / 2 + 5].iter().map(String::as_str).collect();
                prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
                prop_assert!(a.intersection(&b).count() <= a.len().min(b.len()));
            }
        }
    }

    #[test]
    fn full_pool_inclusion_is_one() {
        let (nodes, runs) = hand();
        let all: BTreeSet<&str> = nodes.iter().map(String::as_str).collect();
        assert_eq!(inclusion_rate(&all, &runs), 1.0);
    }
}
