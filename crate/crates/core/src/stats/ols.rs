//! Share regressions for condition contrasts: OLS or K-weighted WLS with
//! run-clustered sandwich covariance, and joint Wald tests.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::counts::{Cell, Grain, RunCountsTable};
use super::fdr::bh_fdr;
use super::linalg::{inverse_spd, rank, select, symmetrize};
use super::{ContrastResult, SeKind, StatsError};
use crate::condition::TaskCondition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Ols,
    WlsK,
}

/// Treatment versus control condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionPair {
    pub treatment: TaskCondition,
    pub control: TaskCondition,
}

impl ConditionPair {
    pub const fn new(treatment: TaskCondition, control: TaskCondition) -> Self {
        Self { treatment, control }
    }

    /// The four planned contrasts.
    pub const PLANNED: [ConditionPair; 4] = [
        ConditionPair::new(TaskCondition::C1_2, TaskCondition::C1_1),
        ConditionPair::new(TaskCondition::C2_2, TaskCondition::C2_1),
        ConditionPair::new(TaskCondition::C3, TaskCondition::C1_2),
        ConditionPair::new(TaskCondition::C3, TaskCondition::C2_2),
    ];

    /// Within-element shares when an element-wise condition is involved,
    /// whole-pool shares otherwise.
    pub fn grain(self) -> Grain {
        if self.treatment.is_element_wise() || self.control.is_element_wise() {
            Grain::Category
        } else {
            Grain::CategoryPooled
        }
    }

    pub fn label(self) -> String {
        format!("{} vs {}", self.treatment, self.control)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Cluster-robust covariance, row-major `p x p`.
    pub cov: Vec<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub se_kind: SeKind,
}

impl LinearFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p(), self.p(), &self.cov)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn se(&self, i: usize) -> f64 {
        self.cov[i * self.p() + i].max(0.0).sqrt()
    }
}

/// Weighted least squares with sandwich covariance clustered on `clusters`
/// (one label per row). With unit weights this is OLS.
pub fn fit_linear(
    names: Vec<String>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    clusters: &[usize],
    se_kind: SeKind,
) -> Result<LinearFit, StatsError> {
    let (n, p) = x.shape();
    if rank(x) < p {
        return Err(StatsError::Singular(format!("design of rank {} with {p} columns", rank(x))));
    }
    let w = weights.cloned().unwrap_or_else(|| DVector::from_element(n, 1.0));
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
    let xtwx = xw.transpose() * x;
    let bread = inverse_spd(&xtwx).ok_or_else(|| StatsError::Singular("X'WX not invertible".into()))?;
    let beta = &bread * (xw.transpose() * y);
    let resid = y - x * &beta;

    let n_clusters = {
        let mut c = clusters.to_vec();
        c.sort();
        c.dedup();
        c.len()
    };
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(clusters[i]).or_insert_with(|| DVector::zeros(p));
        for j in 0..p {
            s[j] += xw[(i, j)] * resid[i];
        }
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let mut cov = &bread * meat * &bread;
    if se_kind == SeKind::Cr1 && n_clusters > 1 && n > p {
        let g = n_clusters as f64;
        cov *= g / (g - 1.0) * (n as f64 - 1.0) / (n - p) as f64;
    }
    symmetrize(&mut cov);
    Ok(LinearFit {
        names,
        beta: beta.iter().copied().collect(),
        cov: cov.transpose().iter().copied().collect(),
        n_obs: n,
        n_clusters,
        se_kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Joint Wald chi-square test that the named coefficients are all zero.
pub fn wald_heterogeneity(fit: &LinearFit, terms: &[String]) -> Result<WaldTest, StatsError> {
    let idx: Vec<usize> = terms
        .iter()
        .map(|t| fit.index(t).ok_or_else(|| StatsError::UnknownTerm(t.clone())))
        .collect::<Result<_, _>>()?;
    wald_on(&fit.beta, &fit.cov_matrix(), &idx)
}

pub(crate) fn wald_on(beta: &[f64], cov: &DMatrix<f64>, idx: &[usize]) -> Result<WaldTest, StatsError> {
    if idx.is_empty() {
        return Err(StatsError::EmptyBlock);
    }
    let v = select(cov, idx);
    if rank(&v) < idx.len() {
        return Err(StatsError::Singular(format!(
            "covariance of the {}-term block is rank deficient",
            idx.len()
        )));
    }
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| beta[i]));
    let vinv = inverse_spd(&v).ok_or_else(|| StatsError::Singular("block covariance".into()))?;
    let stat = (b.transpose() * vinv * &b)[(0, 0)];
    let df = idx.len();
    let p = ChiSquared::new(df as f64).expect("df > 0").sf(stat);
    Ok(WaldTest { statistic: stat, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastOptions {
    pub weighting: Weighting,
    pub se: SeKind,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Ols,
            se: SeKind::Cr0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionContrast {
    pub pair: ConditionPair,
    pub grain: Grain,
    pub options: ContrastOptions,
    pub results: Vec<ContrastResult>,
    /// Cells whose supply share was constant and therefore absorbed by the
    /// cell intercept.
    pub supply_absorbed: Vec<Cell>,
    pub fit: LinearFit,
}

struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    clusters: Vec<usize>,
    absorbed: Vec<Cell>,
}

fn build_design(
    table: &RunCountsTable,
    pair: ConditionPair,
    weighting: Weighting,
    with_models: bool,
) -> Result<Design, StatsError> {
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.condition == pair.treatment || r.condition == pair.control)
        .collect();
    for c in [pair.treatment, pair.control] {
        if !rows.iter().any(|r| r.condition == c) {
            return Err(StatsError::ConditionAbsent(c));
        }
    }
    let mut cells: Vec<Cell> = rows.iter().map(|r| r.cell).collect();
    cells.sort();
    cells.dedup();
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.sort();
    models.dedup();
    let extra_models: Vec<&str> = if with_models { models[1..].to_vec() } else { vec![] };

    let mut names = Vec::new();
    let mut col: BTreeMap<String, usize> = BTreeMap::new();
    let mut absorbed = Vec::new();
    let mut push = |names: &mut Vec<String>, s: String| {
        col.insert(s.clone(), names.len());
        names.push(s);
    };
    for &c in &cells {
        push(&mut names, format!("int[{c}]"));
        for m in &extra_models {
            push(&mut names, format!("model[{m}][{c}]"));
        }
        push(&mut names, format!("D[{c}]"));
        for m in &extra_models {
            push(&mut names, format!("Dxmodel[{m}][{c}]"));
        }
        let supplies: Vec<f64> = rows.iter().filter(|r| r.cell == c).map(|r| r.supply_share()).collect();
        let constant = supplies.iter().all(|&s| (s - supplies[0]).abs() < 1e-15);
        if constant {
            absorbed.push(c);
        } else {
            push(&mut names, format!("supply[{c}]"));
        }
    }
    let col = |s: String| col[&s];

    let n = rows.len();
    let p = names.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut cluster_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut clusters = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let c = r.cell;
        let d = if r.condition == pair.treatment { 1.0 } else { 0.0 };
        x[(i, col(format!("int[{c}]")))] = 1.0;
        x[(i, col(format!("D[{c}]")))] = d;
        if extra_models.contains(&r.model.as_str()) {
            x[(i, col(format!("model[{}][{c}]", r.model)))] = 1.0;
            x[(i, col(format!("Dxmodel[{}][{c}]", r.model)))] = d;
        }
        if !absorbed.contains(&c) {
            x[(i, col(format!("supply[{c}]")))] = r.supply_share();
        }
        y[i] = r.share();
        w[i] = match weighting {
            Weighting::Ols => 1.0,
            Weighting::WlsK => r.k,
        };
        let next = cluster_ids.len();
        clusters.push(*cluster_ids.entry(r.run_id.as_str()).or_insert(next));
    }
    Ok(Design {
        names,
        x,
        y,
        w,
        clusters,
        absorbed,
    })
}

/// Per-cell risk differences (percentage points) of treatment versus control
/// from a stacked share regression with cell-specific intercepts, condition
/// indicators and, where it varies, the supply share.
pub fn condition_contrast(
    table: &RunCountsTable,
    pair: ConditionPair,
    options: ContrastOptions,
) -> Result<ConditionContrast, StatsError> {
    let d = build_design(table, pair, options.weighting, false)?;
    let fit = fit_linear(d.names, &d.x, &d.y, Some(&d.w), &d.clusters, options.se)?;
    let mut cells: Vec<Cell> = table.rows.iter().map(|r| r.cell).collect();
    cells.sort();
    cells.dedup();
    let z = Normal::standard();
    let mut results = Vec::new();
    for c in cells {
        let Some(i) = fit.index(&format!("D[{c}]")) else {
            continue;
        };
        let est = 100.0 * fit.beta[i];
        let se = 100.0 * fit.se(i);
        let p = if se > 0.0 {
            2.0 * z.sf((est / se).abs())
        } else if est == 0.0 {
            1.0
        } else {
            0.0
        };
        results.push(ContrastResult {
            label: c.to_string(),
            estimate: est,
            se,
            ci_low: est - 1.959_963_984_540_054 * se,
            ci_high: est + 1.959_963_984_540_054 * se,
            p,
            q: p,
            delta_pct: None,
            reported: false,
        });
    }
    let q = bh_fdr(&results.iter().map(|r| r.p).collect::<Vec<_>>())?;
    for (r, q) in results.iter_mut().zip(q) {
        r.q = q;
    }
    Ok(ConditionContrast {
        pair,
        grain: table.grain,
        options,
        results,
        supply_absorbed: d.absorbed,
        fit,
    })
}

/// Joint Wald test of condition x model interactions across cells. Within
/// each group of cells whose shares sum to one, the last cell is left out of
/// the block because its interaction is implied by the others.
pub fn model_heterogeneity(
    table: &RunCountsTable,
    pair: ConditionPair,
    options: ContrastOptions,
) -> Result<(LinearFit, WaldTest), StatsError> {
    let d = build_design(table, pair, options.weighting, true)?;
    let fit = fit_linear(d.names, &d.x, &d.y, Some(&d.w), &d.clusters, options.se)?;
    let mut cells: Vec<Cell> = table.rows.iter().map(|r| r.cell).collect();
    cells.sort();
    cells.dedup();
    let group = |c: &Cell| match table.grain {
        Grain::Category => Some(c.element()),
        _ => None,
    };
    let mut last_in_group: BTreeMap<Option<crate::library::Element>, Cell> = BTreeMap::new();
    for c in &cells {
        last_in_group.insert(group(c), *c);
    }
    let terms: Vec<String> = fit
        .names
        .iter()
        .filter(|n| n.starts_with("Dxmodel["))
        .filter(|n| !last_in_group.values().any(|c| n.ends_with(&format!("[{c}]"))))
        .cloned()
        .collect();
    let test = wald_heterogeneity(&fit, &terms)?;
    Ok((fit, test))
}
