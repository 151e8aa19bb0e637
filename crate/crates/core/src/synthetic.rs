//! Synthetic authors with known selection preferences, used as ground truth
//! for the inference pipeline.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::condition::{Budget, TaskCondition};
use crate::harness::config::sub_seed;
use crate::harness::provider::{Completion, CompletionRequest, ModelProvider, ProviderError, Usage};
use crate::library::{subset_for_condition, Category, ConstraintPool, Element};

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("rate ratio for {0} must be positive, got {1}")]
    NonPositiveRate(String, f64),
    #[error("baseline element {0} must have rate ratio 1, got {1}")]
    BaselineNotOne(Element, f64),
    #[error("profile has no weight for constraint {0}")]
    MissingWeight(String),
    #[error("only {available} candidates with positive weight, budget needs {needed}")]
    Insufficient { available: usize, needed: usize },
    #[error("target inclusion probability {0:.3} exceeds 1; weights cannot be calibrated for this budget")]
    Infeasible(f64),
}

/// Selection propensity per constraint id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub description: String,
}

impl PreferenceProfile {
    pub fn uniform(pool: &ConstraintPool) -> Self {
        Self {
            weights: pool.constraints().iter().map(|c| (c.id.clone(), 1.0)).collect(),
            description: "uniform".into(),
        }
    }

    pub fn weight(&self, id: &str) -> Option<f64> {
        self.weights.get(id).copied()
    }
}

/// Rate-ratio description of a profile, as written in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    #[serde(default)]
    pub element_rr: BTreeMap<Element, f64>,
    #[serde(default)]
    pub category_rr: BTreeMap<Category, f64>,
    #[serde(default = "default_baseline")]
    pub baseline: Element,
}

fn default_baseline() -> Element {
    Element::Event
}

impl Default for RateSpec {
    fn default() -> Self {
        Self {
            element_rr: BTreeMap::new(),
            category_rr: BTreeMap::new(),
            baseline: Element::Event,
        }
    }
}

impl RateSpec {
    pub fn to_profile(&self, pool: &ConstraintPool) -> Result<PreferenceProfile, SyntheticError> {
        let cat = (!self.category_rr.is_empty()).then_some(&self.category_rr);
        profile_from_rates(pool, &self.element_rr, cat, self.baseline)
    }
}

/// Weight of a constraint = element RR x within-element category RR.
/// Elements or categories absent from the maps get RR 1.
pub fn profile_from_rates(
    pool: &ConstraintPool,
    element_rr: &BTreeMap<Element, f64>,
    category_rr: Option<&BTreeMap<Category, f64>>,
    baseline: Element,
) -> Result<PreferenceProfile, SyntheticError> {
    for (e, &r) in element_rr {
        if !(r > 0.0 && r.is_finite()) {
            return Err(SyntheticError::NonPositiveRate(e.to_string(), r));
        }
    }
    if let Some(cats) = category_rr {
        for (c, &r) in cats {
            if !(r > 0.0 && r.is_finite()) {
                return Err(SyntheticError::NonPositiveRate(c.to_string(), r));
            }
        }
    }
    let base = element_rr.get(&baseline).copied().unwrap_or(1.0);
    if base != 1.0 {
        return Err(SyntheticError::BaselineNotOne(baseline, base));
    }
    let weights = pool
        .constraints()
        .iter()
        .map(|c| {
            let e = element_rr.get(&c.element).copied().unwrap_or(1.0);
            let k = category_rr
                .and_then(|m| m.get(&c.category).copied())
                .unwrap_or(1.0);
            (c.id.clone(), e * k)
        })
        .collect();
    let description = Element::ALL
        .iter()
        .map(|e| format!("{e}={}", element_rr.get(e).copied().unwrap_or(1.0)))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(PreferenceProfile {
        weights,
        description: format!("element rates vs {baseline}: {description}"),
    })
}

/// How raw profile weights drive the sequential draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Draw with the profile weights directly. Inclusion probabilities are
    /// then only roughly proportional to the weights.
    Sequential,
    /// Adjust the draw weights so that inclusion probabilities are exactly
    /// proportional to the profile weights, then draw sequentially.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    #[serde(default)]
    pub scheme: Scheme,
    /// Range of k for pooled free choice.
    #[serde(default = "default_free_pooled")]
    pub free_pooled: (usize, usize),
    /// Range of k per element for element-wise free choice.
    #[serde(default = "default_free_element")]
    pub free_per_element: (usize, usize),
}

fn default_free_pooled() -> (usize, usize) {
    (10, 30)
}

fn default_free_element() -> (usize, usize) {
    (2, 8)
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Calibrated,
            free_pooled: default_free_pooled(),
            free_per_element: default_free_element(),
        }
    }
}

/// Draws `k` distinct indices by successive weighted sampling: each draw picks
/// among the remaining items with probability proportional to weight.
/// Implemented with exponential race keys, which has the same law.
pub fn sequential_sample<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = rng.random();
            (-(1.0 - u).ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter().take(k).map(|(_, i)| i).collect()
}

// Gauss-Legendre nodes on [-1, 1], 20 points.
const GL_X: [f64; 10] = [
    0.076_526_521_133_497_33,
    0.227_785_851_141_645_08,
    0.373_706_088_715_419_56,
    0.510_867_001_950_827_1,
    0.636_053_680_726_515,
    0.746_331_906_460_150_8,
    0.839_116_971_822_218_8,
    0.912_234_428_251_326,
    0.963_971_927_277_913_8,
    0.993_128_599_185_094_9,
];
const GL_W: [f64; 10] = [
    0.152_753_387_130_725_85,
    0.149_172_986_472_603_75,
    0.142_096_109_318_382_05,
    0.131_688_638_449_176_63,
    0.118_194_531_961_518_42,
    0.101_930_119_817_240_44,
    0.083_276_741_576_704_75,
    0.062_672_048_334_109_44,
    0.040_601_429_800_386_94,
    0.017_614_007_139_152_118,
];

/// Exact inclusion probabilities of [`sequential_sample`] for budget `k`.
///
/// Item i is drawn iff its race time beats the k-th fastest of the others:
/// pi_i = integral of w_i exp(-w_i t) P(#{j != i : T_j < t} <= k-1) dt.
/// Items with equal weight share a value, so the count distribution is a
/// convolution of one binomial per distinct weight.
pub fn inclusion_probabilities(weights: &[f64], k: usize) -> Vec<f64> {
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if k == 0 {
        return vec![0.0; weights.len()];
    }
    if k >= positive {
        return weights.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect();
    }
    // distinct weight groups
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &w in weights.iter().filter(|&&w| w > 0.0) {
        match groups.iter_mut().find(|(g, _)| *g == w) {
            Some((_, m)) => *m += 1,
            None => groups.push((w, 1)),
        }
    }
    let total: f64 = groups.iter().map(|(w, m)| w * *m as f64).sum();
    let scale = k as f64 / total;
    let g = groups.len();

    // integrate over t = scale * s / (1 - s), s in [0, 1), composite GL
    let panels = 64;
    let mut acc = vec![0.0; g];
    let mut binoms: Vec<Vec<f64>> = vec![vec![0.0; k]; g];
    let mut binoms_less: Vec<Vec<f64>> = vec![vec![0.0; k]; g];
    for p in 0..panels {
        let a = p as f64 / panels as f64;
        let b = (p + 1) as f64 / panels as f64;
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for q in 0..20 {
            let (x, wq) = if q < 10 {
                (-GL_X[q], GL_W[q])
            } else {
                (GL_X[q - 10], GL_W[q - 10])
            };
            let s = mid + half * x;
            let t = scale * s / (1.0 - s);
            let dt = scale / ((1.0 - s) * (1.0 - s));
            for (gi, &(w, m)) in groups.iter().enumerate() {
                let pr = -(-w * t).exp_m1();
                binomial_pmf_truncated(m, pr, &mut binoms[gi]);
                binomial_pmf_truncated(m - 1, pr, &mut binoms_less[gi]);
            }
            // prefix/suffix convolutions, truncated at k-1
            let mut prefix = vec![vec![0.0; k]; g + 1];
            prefix[0][0] = 1.0;
            for gi in 0..g {
                prefix[gi + 1] = convolve(&prefix[gi], &binoms[gi]);
            }
            let mut suffix = vec![0.0; k];
            suffix[0] = 1.0;
            for gi in (0..g).rev() {
                let others = convolve(&convolve(&prefix[gi], &suffix), &binoms_less[gi]);
                let cdf: f64 = others.iter().sum();
                let w = groups[gi].0;
                acc[gi] += half * wq * dt * w * (-w * t).exp() * cdf;
                suffix = convolve(&suffix, &binoms[gi]);
            }
        }
    }
    weights
        .iter()
        .map(|&w| {
            if w > 0.0 {
                let gi = groups.iter().position(|(g, _)| *g == w).expect("group exists");
                acc[gi].clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn binomial_pmf_truncated(m: usize, p: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let q = 1.0 - p;
    let len = out.len().min(m + 1);
    if q <= 0.0 {
        if m < out.len() {
            out[m] = 1.0;
        }
        return;
    }
    // pmf(0) = q^m, pmf(j+1) = pmf(j) * (m-j)/(j+1) * p/q
    let mut v = q.powi(m as i32);
    let ratio = p / q;
    for (j, slot) in out.iter_mut().enumerate().take(len) {
        *slot = v;
        v *= (m - j) as f64 / (j + 1) as f64 * ratio;
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let k = a.len();
    let mut out = vec![0.0; k];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(k - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Draw weights whose sequential-sampling inclusion probabilities are
/// proportional to `target`.
pub fn calibrate_weights(target: &[f64], k: usize) -> Result<Vec<f64>, SyntheticError> {
    let sum: f64 = target.iter().filter(|&&w| w > 0.0).sum();
    let goal: Vec<f64> = target
        .iter()
        .map(|&w| if w > 0.0 { k as f64 * w / sum } else { 0.0 })
        .collect();
    let max_goal = goal.iter().cloned().fold(0.0, f64::max);
    if max_goal > 1.0 + 1e-12 {
        return Err(SyntheticError::Infeasible(max_goal));
    }
    let positive = target.iter().filter(|&&w| w > 0.0).count();
    if k == 0 || k >= positive {
        return Ok(target.to_vec());
    }
    let mut w = target.to_vec();
    for _ in 0..200 {
        let pi = inclusion_probabilities(&w, k);
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            if w[i] > 0.0 {
                worst = worst.max((pi[i] / goal[i] - 1.0).abs());
                w[i] *= goal[i] / pi[i];
            }
        }
        if worst < 1e-10 {
            break;
        }
    }
    Ok(w)
}

/// Sampled selections and their wire-format response.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticResponse {
    pub selections: Vec<String>,
    pub text: String,
}

/// Synthetic author over a fixed pool and profile. Calibrated weights are
/// cached per (candidate list, budget).
pub struct SyntheticAuthor {
    pool: ConstraintPool,
    profile: PreferenceProfile,
    options: SamplerOptions,
    cache: Mutex<HashMap<(Vec<usize>, usize), Vec<f64>>>,
    name: String,
}

impl SyntheticAuthor {
    pub fn new(pool: ConstraintPool, profile: PreferenceProfile, options: SamplerOptions) -> Result<Self, SyntheticError> {
        if let Some(c) = pool.constraints().iter().find(|c| profile.weight(&c.id).is_none()) {
            return Err(SyntheticError::MissingWeight(c.id.clone()));
        }
        Ok(Self {
            pool,
            profile,
            options,
            cache: Mutex::new(HashMap::new()),
            name: "synthetic".into(),
        })
    }

    pub fn profile(&self) -> &PreferenceProfile {
        &self.profile
    }

    fn draw_weights(&self, items: &[usize], k: usize) -> Result<Vec<f64>, SyntheticError> {
        let raw: Vec<f64> = items
            .iter()
            .map(|&i| self.profile.weights[&self.pool.get(i).id])
            .collect();
        let available = raw.iter().filter(|&&w| w > 0.0).count();
        if available < k {
            return Err(SyntheticError::Insufficient {
                available,
                needed: k,
            });
        }
        if self.options.scheme == Scheme::Sequential {
            return Ok(raw);
        }
        let key = (items.to_vec(), k);
        if let Some(w) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(w.clone());
        }
        let w = calibrate_weights(&raw, k)?;
        self.cache.lock().expect("cache lock").insert(key, w.clone());
        Ok(w)
    }

    /// Selects per the condition's budget and renders a wire-format response.
    pub fn sample_run(&self, condition: TaskCondition, seed: u64) -> Result<SyntheticResponse, SyntheticError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lists = subset_for_condition(&self.pool, condition);
        let mut picked: Vec<usize> = Vec::new();
        match condition.budget() {
            Budget::Pooled(k) => {
                let w = self.draw_weights(&lists[0].items, k)?;
                picked.extend(sequential_sample(&w, k, &mut rng).into_iter().map(|j| lists[0].items[j]));
            }
            Budget::Free if !condition.is_element_wise() => {
                let (lo, hi) = self.options.free_pooled;
                let k = rng.random_range(lo..=hi.max(lo));
                let w = self.draw_weights(&lists[0].items, k)?;
                picked.extend(sequential_sample(&w, k, &mut rng).into_iter().map(|j| lists[0].items[j]));
            }
            Budget::PerElement(_) | Budget::Free | Budget::Quota { .. } => {
                // per-element draws; the quota condition shows one pooled list
                // but its budget decomposes by element
                for e in Element::ALL {
                    let items = self.pool.indices_in(e);
                    let k = match condition.budget() {
                        Budget::PerElement(k) => k,
                        Budget::Quota { per_element, .. } => per_element,
                        _ => {
                            let (lo, hi) = self.options.free_per_element;
                            rng.random_range(lo..=hi.max(lo))
                        }
                    };
                    let w = self.draw_weights(&items, k)?;
                    picked.extend(sequential_sample(&w, k, &mut rng).into_iter().map(|j| items[j]));
                }
            }
        }
        let selections: Vec<String> = picked.iter().map(|&i| self.pool.get(i).id.clone()).collect();
        let mut arr: Vec<serde_json::Value> = picked
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                json!({
                    "constraint": self.pool.get(i).text,
                    "reason": format!("Placeholder reason {} of {}.", r + 1, picked.len()),
                })
            })
            .collect();
        arr.push(json!({"compatibility": "Placeholder compatibility paragraph."}));
        Ok(SyntheticResponse {
            selections,
            text: serde_json::to_string_pretty(&arr).expect("json"),
        })
    }
}

impl ModelProvider for SyntheticAuthor {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let condition = request
            .hints
            .condition
            .ok_or_else(|| ProviderError::Fatal("synthetic author needs the run condition".into()))?;
        let resp = self
            .sample_run(condition, sub_seed(request.hints.seed, "synthetic"))
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(Completion {
            text: resp.text,
            usage: Usage::default(),
        })
    }
}

/// Element rates used as generating values in recovery checks.
pub fn reference_rates() -> BTreeMap<Element, f64> {
    BTreeMap::from([
        (Element::Event, 1.00),
        (Element::Style, 1.67),
        (Element::Character, 1.10),
        (Element::Setting, 1.05),
    ])
}
