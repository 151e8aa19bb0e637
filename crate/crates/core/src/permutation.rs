//! Constraint-level over/under-selection tests against a supply-adjusted
//! permutation null, and axis enrichment of the flagged constraints.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::TaskCondition;
use crate::harness::{sub_seed, Persona, RunRecord};
use crate::library::{AxisKey, Category, ConstraintPool, Element};
use crate::par;
use crate::stats::bh_fdr;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PermutationError {
    #[error("run {0} has an empty candidate pool")]
    EmptyPool(String),
    #[error("run {run} selected `{id}`, which is not in its candidate pool")]
    NotInPool { run: String, id: String },
    #[error("no runs to test")]
    NoRuns,
    #[error("replicate count must be at least 1")]
    NoReplicates,
}

/// One independently budgeted candidate list of a run: `selected` are drawn
/// from `items` (pool indices).
#[derive(Debug, Clone, PartialEq)]
pub struct RunUnit {
    pub items: Vec<usize>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermRun {
    pub run_id: String,
    pub model: String,
    pub persona: Persona,
    pub units: Vec<RunUnit>,
}

impl PermRun {
    pub fn budget(&self) -> usize {
        self.units.iter().map(|u| u.selected.len()).sum()
    }
}

/// Splits valid runs into budget units: one pooled list for 2-1/2-2, one per
/// element when the budget is fixed or free per element (1-1, 1-2, 3).
pub fn runs_from_records(records: &[RunRecord], pool: &ConstraintPool) -> Result<Vec<PermRun>, PermutationError> {
    let mut out = Vec::new();
    let mut records: Vec<&RunRecord> = records.iter().filter(|r| r.is_valid()).collect();
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    for r in records {
        let presented: Vec<usize> = r.permutation.iter().filter_map(|id| pool.index_of(id)).collect();
        let mut selected = Vec::new();
        for id in &r.selections {
            match pool.index_of(id) {
                Some(i) if presented.contains(&i) => selected.push(i),
                _ => {
                    return Err(PermutationError::NotInPool {
                        run: r.run_id.clone(),
                        id: id.clone(),
                    })
                }
            }
        }
        let per_element = !matches!(r.config.condition, TaskCondition::C2_1 | TaskCondition::C2_2);
        let units = if per_element {
            Element::ALL
                .into_iter()
                .map(|e| RunUnit {
                    items: presented.iter().copied().filter(|&i| pool.get(i).element == e).collect(),
                    selected: selected.iter().copied().filter(|&i| pool.get(i).element == e).collect(),
                })
                .filter(|u| !u.items.is_empty())
                .collect()
        } else {
            vec![RunUnit {
                items: presented,
                selected,
            }]
        };
        out.push(PermRun {
            run_id: r.run_id.clone(),
            model: r.config.model.clone(),
            persona: r.config.persona,
            units,
        });
    }
    Ok(out)
}

/// E[Y_c] = sum over run units of K_u * 1[c in pool_u] / N_u.
pub fn expected_counts(runs: &[PermRun], pool_size: usize) -> Result<Vec<f64>, PermutationError> {
    let mut e = vec![0.0; pool_size];
    for r in runs {
        for u in &r.units {
            if u.items.is_empty() {
                return Err(PermutationError::EmptyPool(r.run_id.clone()));
            }
            let share = u.selected.len() as f64 / u.items.len() as f64;
            for &i in &u.items {
                e[i] += share;
            }
        }
    }
    Ok(e)
}

pub fn observed_counts(runs: &[PermRun], pool_size: usize) -> Vec<f64> {
    let mut y = vec![0.0; pool_size];
    for r in runs {
        for u in &r.units {
            for &i in &u.selected {
                y[i] += 1.0;
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Over,
    Under,
    Neutral,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Over => "over",
            Direction::Under => "under",
            Direction::Neutral => "neutral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub id: String,
    pub model: String,
    pub persona: Persona,
    pub element: Element,
    pub category: Category,
    /// Runs in the model x persona slice.
    pub runs: usize,
    pub y_obs: f64,
    pub expected: f64,
    pub share_obs: f64,
    pub share_exp: f64,
    pub rd_share: f64,
    pub rr_smoothed: f64,
    pub p_two: f64,
    pub p_over: f64,
    pub p_under: f64,
    /// Within-stratum BH q; equal to `p_two` until `flag_significant` runs.
    pub q: f64,
    pub direction: Direction,
    pub flagged: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            replicates: 2000,
            seed: 0,
        }
    }
}

const TIE_EPS: f64 = 1e-9;
const CHUNK: usize = 50;

/// Tail counts (two-sided, over, under) for one slice of runs.
fn tail_counts(runs: &[PermRun], y_obs: &[f64], e: &[f64], replicates: usize, seed: u64) -> Vec<[u32; 3]> {
    let n = y_obs.len();
    let chunks = replicates.div_ceil(CHUNK);
    let partial = par::map_range(chunks, |ci| {
        let mut tails = vec![[0u32; 3]; n];
        let mut y = vec![0u32; n];
        for b in ci * CHUNK..((ci + 1) * CHUNK).min(replicates) {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("replicate-{b}")));
            y.iter_mut().for_each(|v| *v = 0);
            for r in runs {
                for u in &r.units {
                    for j in sample(&mut rng, u.items.len(), u.selected.len()) {
                        y[u.items[j]] += 1;
                    }
                }
            }
            for i in 0..n {
                let ys = y[i] as f64;
                if (ys - e[i]).abs() >= (y_obs[i] - e[i]).abs() - TIE_EPS {
                    tails[i][0] += 1;
                }
                if ys >= y_obs[i] - TIE_EPS {
                    tails[i][1] += 1;
                }
                if ys <= y_obs[i] + TIE_EPS {
                    tails[i][2] += 1;
                }
            }
        }
        tails
    });
    let mut total = vec![[0u32; 3]; n];
    for t in partial {
        for (acc, v) in total.iter_mut().zip(t) {
            for k in 0..3 {
                acc[k] += v[k];
            }
        }
    }
    total
}

/// Stratified permutation test. Runs are grouped into model x persona
/// slices; under the null each run redraws its budget uniformly from each of
/// its candidate lists. Results are ordered by slice then pool order.
pub fn permutation_test(
    runs: &[PermRun],
    pool: &ConstraintPool,
    options: PermutationOptions,
) -> Result<Vec<PermutationResult>, PermutationError> {
    if runs.is_empty() {
        return Err(PermutationError::NoRuns);
    }
    if options.replicates == 0 {
        return Err(PermutationError::NoReplicates);
    }
    let mut slices: BTreeMap<(String, Persona), Vec<PermRun>> = BTreeMap::new();
    for r in runs {
        slices.entry((r.model.clone(), r.persona)).or_default().push(r.clone());
    }
    let b1 = (options.replicates + 1) as f64;
    let mut out = Vec::new();
    for ((model, persona), slice) in slices {
        let e = expected_counts(&slice, pool.len())?;
        let y = observed_counts(&slice, pool.len());
        let total_k: f64 = slice.iter().map(|r| r.budget() as f64).sum();
        let seed = sub_seed(options.seed, &format!("{model}/{persona}"));
        let tails = tail_counts(&slice, &y, &e, options.replicates, seed);
        for (i, c) in pool.constraints().iter().enumerate() {
            if e[i] <= 0.0 {
                continue;
            }
            let (share_obs, share_exp) = if total_k > 0.0 {
                (y[i] / total_k, e[i] / total_k)
            } else {
                (0.0, 0.0)
            };
            let direction = if share_obs > share_exp + TIE_EPS {
                Direction::Over
            } else if share_obs < share_exp - TIE_EPS {
                Direction::Under
            } else {
                Direction::Neutral
            };
            let p_two = (1.0 + tails[i][0] as f64) / b1;
            out.push(PermutationResult {
                id: c.id.clone(),
                model: model.clone(),
                persona,
                element: c.element,
                category: c.category,
                runs: slice.len(),
                y_obs: y[i],
                expected: e[i],
                share_obs,
                share_exp,
                rd_share: share_obs - share_exp,
                rr_smoothed: (y[i] + 0.5) / (e[i] + 0.5),
                p_two,
                p_over: (1.0 + tails[i][1] as f64) / b1,
                p_under: (1.0 + tails[i][2] as f64) / b1,
                q: p_two,
                direction,
                flagged: false,
                fallback: false,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagOptions {
    pub q_threshold: f64,
    pub fallback_p: f64,
    /// Strata with fewer runs than this are degenerate.
    pub min_runs: usize,
}

impl Default for FlagOptions {
    fn default() -> Self {
        Self {
            q_threshold: 0.10,
            fallback_p: 0.05,
            min_runs: 5,
        }
    }
}

/// BH within each model x persona x element x category stratum. Degenerate
/// strata (fewer than two distinct p-values, or too few runs) fall back to
/// raw `p_two`. Updates `q`, `flagged` and `fallback` in place and returns
/// the flagged rows.
pub fn flag_significant(results: &mut [PermutationResult], options: FlagOptions) -> Vec<PermutationResult> {
    let mut strata: BTreeMap<(String, Persona, Category), Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        strata.entry((r.model.clone(), r.persona, r.category)).or_default().push(i);
    }
    for idx in strata.values() {
        let ps: Vec<f64> = idx.iter().map(|&i| results[i].p_two).collect();
        let mut distinct = ps.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let degenerate = distinct.len() < 2 || results[idx[0]].runs < options.min_runs;
        let qs = bh_fdr(&ps).expect("permutation p-values lie in (0, 1]");
        for (&i, q) in idx.iter().zip(qs) {
            let r = &mut results[i];
            r.q = q;
            r.fallback = degenerate;
            r.flagged = r.direction != Direction::Neutral
                && if degenerate {
                    r.p_two <= options.fallback_p
                } else {
                    q <= options.q_threshold
                };
        }
    }
    results.iter().filter(|r| r.flagged).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    ModelPersona,
    Persona,
}

/// Reference share for enrichment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentBaseline {
    /// Axis share among all flagged annotations of the same direction,
    /// pooled over groups.
    #[default]
    PooledFlagged,
    /// Axis share among the annotations of the whole library.
    PoolAnnotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentOptions {
    pub grouping: Grouping,
    pub baseline: EnrichmentBaseline,
    /// Keep the top rows per (group, direction) by enrichment; `None` keeps all.
    pub top_k: Option<usize>,
}

impl Default for EnrichmentOptions {
    fn default() -> Self {
        Self {
            grouping: Grouping::ModelPersona,
            baseline: EnrichmentBaseline::PooledFlagged,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisEnrichment {
    pub group: String,
    pub direction: Direction,
    pub axis: AxisKey,
    pub dimension: String,
    pub label: String,
    pub support: usize,
    pub share: f64,
    pub baseline: f64,
    pub enrichment: f64,
}

fn axis_counts<'a>(
    ids: impl Iterator<Item = &'a str>,
    pool: &ConstraintPool,
) -> (BTreeMap<AxisKey, usize>, usize) {
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for id in ids {
        if let Some(c) = pool.by_id(id) {
            for k in c.axis_keys() {
                *counts.entry(k).or_default() += 1;
                total += 1;
            }
        }
    }
    (counts, total)
}

/// Axis shares among flagged constraints per (group, direction) relative to
/// the chosen baseline. Rows are sorted by group, direction, then enrichment
/// (descending) and axis.
pub fn axis_enrichment(
    flagged: &[PermutationResult],
    pool: &ConstraintPool,
    options: EnrichmentOptions,
) -> Vec<AxisEnrichment> {
    let group_of = |r: &PermutationResult| match options.grouping {
        Grouping::ModelPersona => format!("{}/{}", r.model, r.persona),
        Grouping::Persona => r.persona.to_string(),
    };
    let mut groups: BTreeMap<(String, Direction), Vec<&str>> = BTreeMap::new();
    for r in flagged.iter().filter(|r| r.direction != Direction::Neutral) {
        groups.entry((group_of(r), r.direction)).or_default().push(&r.id);
    }
    let library = axis_counts(pool.constraints().iter().map(|c| c.id.as_str()), pool);
    let mut pooled: BTreeMap<Direction, (BTreeMap<AxisKey, usize>, usize)> = BTreeMap::new();
    for d in [Direction::Over, Direction::Under] {
        let ids = groups
            .iter()
            .filter(|((_, dir), _)| *dir == d)
            .flat_map(|(_, v)| v.iter().copied());
        pooled.insert(d, axis_counts(ids, pool));
    }

    let mut out = Vec::new();
    for ((group, direction), ids) in &groups {
        let (counts, total) = axis_counts(ids.iter().copied(), pool);
        if total == 0 {
            continue;
        }
        let (base_counts, base_total) = match options.baseline {
            EnrichmentBaseline::PooledFlagged => &pooled[direction],
            EnrichmentBaseline::PoolAnnotations => &library,
        };
        let mut rows: Vec<AxisEnrichment> = counts
            .into_iter()
            .map(|(axis, support)| {
                let share = support as f64 / total as f64;
                let baseline = base_counts.get(&axis).copied().unwrap_or(0) as f64 / *base_total as f64;
                let dimension = axis
                    .category
                    .dimensions()
                    .get(axis.dimension)
                    .map(|d| d.name.to_string())
                    .unwrap_or_default();
                AxisEnrichment {
                    group: group.clone(),
                    direction: *direction,
                    label: axis.label(),
                    dimension,
                    axis,
                    support,
                    share,
                    baseline,
                    enrichment: share / baseline,
                }
            })
            .collect();
        rows.sort_by(|a, b| b.enrichment.total_cmp(&a.enrichment).then_with(|| a.axis.cmp(&b.axis)));
        if let Some(k) = options.top_k {
            rows.truncate(k);
        }
        out.extend(rows);
    }
    out
}
