//! Poisson estimating equations with log link, run-clustered.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::counts::{Cell, RunCountsTable};
use super::linalg::{inverse_spd, rank, solve_spd, symmetrize};
use super::{SeKind, StatsError};
use crate::harness::Persona;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetKind {
    /// log K
    LogK,
    /// log K + log n
    LogKPlusLogN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrKind {
    Exchangeable,
    Independence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeeOptions {
    pub offset: OffsetKind,
    pub corr: CorrKind,
    pub se: SeKind,
    /// Add cell x model and cell x persona terms (when a factor has more
    /// than one level).
    pub model_terms: bool,
    pub persona_terms: bool,
    pub max_iter: usize,
    pub tol: f64,
    /// The exchangeable correlation is kept inside
    /// (-1/(n_max-1) + margin, 1 - margin) so the working matrix stays
    /// invertible.
    pub alpha_margin: f64,
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self {
            offset: OffsetKind::LogK,
            corr: CorrKind::Exchangeable,
            se: SeKind::Cr0,
            model_terms: true,
            persona_terms: true,
            max_iter: 100,
            tol: 1e-8,
            alpha_margin: 1e-6,
        }
    }
}

/// Rows removed because a cell was never selected within a model x persona
/// stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCell {
    pub model: String,
    pub persona: Persona,
    pub cell: Cell,
    pub rows: usize,
}

/// Model matrix for a Poisson GEE with clusters.
#[derive(Debug, Clone)]
pub struct GeeDesign {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub offset: DVector<f64>,
    /// Row indices of each cluster.
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeeFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Sandwich covariance, row-major.
    pub cov_robust: Vec<f64>,
    /// Model-based covariance phi * B^-1, row-major.
    pub cov_naive: Vec<f64>,
    pub corr: CorrKind,
    pub alpha: Option<f64>,
    pub alpha_clamped: bool,
    pub phi: f64,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
    pub offset: Option<OffsetKind>,
    pub se: SeKind,
    pub models: Vec<String>,
    pub personas: Vec<Persona>,
    pub dropped: Vec<DroppedCell>,
    pub dropped_columns: Vec<String>,
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
}

impl GeeFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p(), self.p(), &self.cov_robust)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.beta[i])
    }
}

pub fn cell_term(c: Cell) -> String {
    format!("cell[{c}]")
}

pub fn model_term(c: Cell, m: &str) -> String {
    format!("cell[{c}]:model[{m}]")
}

pub fn persona_term(c: Cell, p: Persona) -> String {
    format!("cell[{c}]:persona[{p}]")
}

/// Builds the no-intercept design of cell effects plus cell x model and
/// cell x persona interactions (reference levels: first model by name,
/// first persona in Basic/Quality/Creativity order).
pub fn gee_design(
    table: &RunCountsTable,
    options: &GeeOptions,
) -> Result<(GeeDesign, Vec<String>, Vec<Persona>, Vec<DroppedCell>, Vec<String>), StatsError> {
    let models = table.models();
    let personas = table.personas();
    let cells = table.cells();

    // separation: a cell never selected in a model x persona stratum
    let mut stratum_sum: BTreeMap<(&str, Persona, Cell), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = stratum_sum.entry((r.model.as_str(), r.persona, r.cell)).or_default();
        e.0 += r.y;
        e.1 += 1;
    }
    let mut dropped = Vec::new();
    for (&(m, p, c), &(sum, rows)) in &stratum_sum {
        if sum == 0.0 {
            dropped.push(DroppedCell {
                model: m.to_string(),
                persona: p,
                cell: c,
                rows,
            });
        }
    }
    let is_dropped = |m: &str, p: Persona, c: Cell| {
        dropped
            .iter()
            .any(|d| d.model == m && d.persona == p && d.cell == c)
    };

    let mut names = Vec::new();
    for &c in &cells {
        names.push(cell_term(c));
        if options.model_terms {
            for m in models.iter().skip(1) {
                names.push(model_term(c, m));
            }
        }
        if options.persona_terms {
            for &p in personas.iter().skip(1) {
                names.push(persona_term(c, p));
            }
        }
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let kept: Vec<usize> = (0..table.rows.len())
        .filter(|&i| {
            let r = &table.rows[i];
            !is_dropped(&r.model, r.persona, r.cell)
        })
        .collect();
    if kept.is_empty() {
        return Err(StatsError::EmptyTable);
    }
    let mut x = DMatrix::zeros(kept.len(), names.len());
    let mut y = DVector::zeros(kept.len());
    let mut off = DVector::zeros(kept.len());
    let mut by_run: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, &i) in kept.iter().enumerate() {
        let r = &table.rows[i];
        if !(r.k > 0.0) || !(r.n > 0.0) {
            return Err(StatsError::Domain(format!("non-positive exposure in run {}", r.run_id)));
        }
        x[(row, index[cell_term(r.cell).as_str()])] = 1.0;
        if options.model_terms && r.model != models[0] {
            x[(row, index[model_term(r.cell, &r.model).as_str()])] = 1.0;
        }
        if options.persona_terms && r.persona != personas[0] {
            x[(row, index[persona_term(r.cell, r.persona).as_str()])] = 1.0;
        }
        y[row] = r.y;
        off[row] = match options.offset {
            OffsetKind::LogK => r.k.ln(),
            OffsetKind::LogKPlusLogN => r.k.ln() + r.n.ln(),
        };
        by_run.entry(r.run_id.as_str()).or_default().push(row);
    }
    // columns left empty by dropped rows
    let keep_cols: Vec<usize> = (0..names.len())
        .filter(|&j| x.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let dropped_columns: Vec<String> = (0..names.len())
        .filter(|j| !keep_cols.contains(j))
        .map(|j| names[j].clone())
        .collect();
    let x = x.select_columns(&keep_cols);
    let names: Vec<String> = keep_cols.iter().map(|&j| names[j].clone()).collect();
    Ok((
        GeeDesign {
            names,
            x,
            y,
            offset: off,
            clusters: by_run.into_values().collect(),
        },
        models,
        personas,
        dropped,
        dropped_columns,
    ))
}

/// Fits the Poisson GEE for a counts table.
pub fn fit_poisson_gee(table: &RunCountsTable, options: &GeeOptions) -> Result<GeeFit, StatsError> {
    let (design, models, personas, dropped, dropped_columns) = gee_design(table, options)?;
    let mut fit = fit_gee(&design, options)?;
    fit.offset = Some(options.offset);
    fit.models = models;
    fit.personas = personas;
    fit.dropped = dropped;
    fit.dropped_columns = dropped_columns;
    Ok(fit)
}

struct Moments {
    phi: f64,
    alpha: f64,
    clamped: bool,
}

fn moments(design: &GeeDesign, r: &DVector<f64>, corr: CorrKind, margin: f64) -> Moments {
    let n = r.len() as f64;
    let p = design.x.ncols() as f64;
    let ssr: f64 = r.iter().map(|v| v * v).sum();
    let phi = ssr / (n - p).max(1.0);
    if corr == CorrKind::Independence {
        return Moments {
            phi,
            alpha: 0.0,
            clamped: false,
        };
    }
    let mut cross = 0.0;
    let mut pairs = 0.0;
    let mut n_max = 1usize;
    for c in &design.clusters {
        let s: f64 = c.iter().map(|&i| r[i]).sum();
        let sq: f64 = c.iter().map(|&i| r[i] * r[i]).sum();
        cross += (s * s - sq) / 2.0;
        pairs += (c.len() * (c.len() - 1)) as f64 / 2.0;
        n_max = n_max.max(c.len());
    }
    if pairs == 0.0 || phi == 0.0 {
        // clusters of size one: no within-cluster pairs
        return Moments {
            phi,
            alpha: 0.0,
            clamped: false,
        };
    }
    let raw = cross / phi / (pairs - p).max(1.0);
    let lo = if n_max > 1 { -1.0 / (n_max as f64 - 1.0) + margin } else { 0.0 };
    let hi = 1.0 - margin;
    let alpha = raw.clamp(lo, hi);
    Moments {
        phi,
        alpha,
        clamped: alpha != raw,
    }
}

/// Accumulates bread B = sum Z' R^-1 Z and score pieces u_i = Z_i' R^-1 r_i,
/// with Z = diag(sqrt(mu)) X and exchangeable R^-1 = c1 (I - c2 J).
fn accumulate(
    design: &GeeDesign,
    mu: &DVector<f64>,
    r: &DVector<f64>,
    alpha: f64,
) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let p = design.x.ncols();
    let mut bread = DMatrix::zeros(p, p);
    let mut scores = Vec::with_capacity(design.clusters.len());
    for c in &design.clusters {
        let m = c.len();
        let c1 = 1.0 / (1.0 - alpha);
        let c2 = alpha / (1.0 + (m as f64 - 1.0) * alpha);
        let z = DMatrix::from_fn(m, p, |a, j| design.x[(c[a], j)] * mu[c[a]].sqrt());
        let rc = DVector::from_fn(m, |a, _| r[c[a]]);
        let zsum = z.row_sum().transpose();
        let rsum: f64 = rc.sum();
        let ztz = z.transpose() * &z;
        bread += (ztz - &zsum * zsum.transpose() * c2) * c1;
        let u = (z.transpose() * &rc - &zsum * (c2 * rsum)) * c1;
        scores.push(u);
    }
    (bread, scores)
}

fn linear_predictor(design: &GeeDesign, beta: &DVector<f64>) -> DVector<f64> {
    (&design.x * beta + &design.offset).map(|e| e.min(700.0).exp())
}

fn pearson(design: &GeeDesign, mu: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mu.len(), |i, _| (design.y[i] - mu[i]) / mu[i].sqrt())
}

/// Fisher scoring on the estimating equations.
pub fn fit_gee(design: &GeeDesign, options: &GeeOptions) -> Result<GeeFit, StatsError> {
    let (n, p) = design.x.shape();
    if design.clusters.len() < 2 {
        return Err(StatsError::TooFewClusters(design.clusters.len()));
    }
    if rank(&design.x) < p {
        return Err(StatsError::Singular(format!(
            "GEE design of rank {} with {p} columns",
            rank(&design.x)
        )));
    }
    // start from least squares on log((y + 0.1) / exposure)
    let target = DVector::from_fn(n, |i, _| (design.y[i] + 0.1).ln() - design.offset[i]);
    let xtx = design.x.transpose() * &design.x;
    let mut beta = solve_spd(&xtx, &(design.x.transpose() * target))
        .ok_or_else(|| StatsError::Singular("X'X".into()))?;

    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    for it in 1..=options.max_iter {
        iterations = it;
        let mu = linear_predictor(design, &beta);
        let r = pearson(design, &mu);
        let mo = moments(design, &r, options.corr, options.alpha_margin);
        let (bread, scores) = accumulate(design, &mu, &r, mo.alpha);
        let score = scores.iter().fold(DVector::zeros(p), |a, s| a + s);
        let mut step = solve_spd(&bread, &score)
            .ok_or_else(|| StatsError::Singular("GEE information matrix".into()))?;
        let max = step.amax();
        if max > 5.0 {
            step *= 5.0 / max;
        }
        beta += &step;
        last_step = step.amax();
        if !last_step.is_finite() {
            break;
        }
        if last_step < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StatsError::NonConvergence {
            iterations,
            last_step,
        });
    }

    let mu = linear_predictor(design, &beta);
    let r = pearson(design, &mu);
    let mo = moments(design, &r, options.corr, options.alpha_margin);
    let (bread, scores) = accumulate(design, &mu, &r, mo.alpha);
    let binv = inverse_spd(&bread).ok_or_else(|| StatsError::Singular("GEE bread".into()))?;
    let mut meat = DMatrix::zeros(p, p);
    for s in &scores {
        meat += s * s.transpose();
    }
    let mut robust = &binv * meat * &binv;
    let g = design.clusters.len() as f64;
    if options.se == SeKind::Cr1 {
        robust *= g / (g - 1.0);
    }
    symmetrize(&mut robust);
    let mut naive = &binv * mo.phi;
    symmetrize(&mut naive);
    Ok(GeeFit {
        names: design.names.clone(),
        beta: beta.iter().copied().collect(),
        cov_robust: robust.transpose().iter().copied().collect(),
        cov_naive: naive.transpose().iter().copied().collect(),
        corr: options.corr,
        alpha: (options.corr == CorrKind::Exchangeable).then_some(mo.alpha),
        alpha_clamped: mo.clamped,
        phi: mo.phi,
        n_clusters: design.clusters.len(),
        n_obs: n,
        iterations,
        converged,
        last_step,
        offset: None,
        se: options.se,
        models: Vec::new(),
        personas: Vec::new(),
        dropped: Vec::new(),
        dropped_columns: Vec::new(),
        y: design.y.iter().copied().collect(),
        mu: mu.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::TaskCondition;
    use crate::library::Element;
    use crate::stats::counts::{CountRow, Grain};

    fn row(run: usize, model: &str, persona: Persona, e: Element, y: f64, k: f64, n: f64) -> CountRow {
        CountRow {
            run_id: format!("r{run:03}"),
            model: model.into(),
            persona,
            condition: TaskCondition::C2_1,
            cell: Cell::Element(e),
            y,
            k,
            n,
            big_n: 200.0,
        }
    }

    // Frozen from statsmodels 0.14.6 GEE(Poisson, offset log K).
    const SM_Y: [f64; 64] = [
        2., 4., 5., 0., 1., 6., 3., 0., 7., 6., 4., 3., 2., 4., 1., 3., 8., 10., 4., 5., 4., 3., 4., 0., 3., 4., 2., 2., 3.,
        3., 4., 2., 3., 14., 8., 3., 2., 10., 9., 6., 3., 7., 1., 2., 1., 8., 2., 0., 4., 6., 4., 4., 3., 10., 2., 0.,
        2., 3., 3., 0., 3., 13., 7., 7.,
    ];
    const SM_K: [f64; 16] = [11., 10., 20., 10., 27., 11., 11., 12., 28., 27., 13., 11., 18., 15., 8., 30.];
    const SM_EXCH: [f64; 12] = [
        -1.492979447914561,
        -0.9667184095624791,
        -1.3032364842093958,
        -2.256394897044509,
        -0.6025002349230087,
        0.26806196452625375,
        -0.03274731557357297,
        0.1532957357160806,
        0.26091449226079994,
        -0.10474694788227308,
        -0.20007961181808034,
        0.3594204089600801,
    ];
    const SM_EXCH_BSE: [f64; 12] = [
        0.24282891551281185,
        0.12783785361504818,
        0.16981829332510315,
        0.31242637137016027,
        0.19709237130184132,
        0.11711498429178523,
        0.1717190987390192,
        0.29523475237364144,
        0.2306397453033145,
        0.12700090391890953,
        0.16928664572840987,
        0.3219461792471554,
    ];
    const SM_ALPHA: f64 = -0.28545198349976125;
    const SM_INDEP: [f64; 12] = [
        -1.4861705770739384,
        -0.9615465595763337,
        -1.2970291365518103,
        -2.2466509083883666,
        -0.6086526227960056,
        0.26397572917517304,
        -0.037804667307345566,
        0.14562465321922502,
        0.2547960975888029,
        -0.10960189660058131,
        -0.206087021381921,
        0.35085726162509384,
    ];

    fn fixture() -> RunCountsTable {
        let strata = [(0, 0), (0, 0), (0, 0), (0, 1), (0, 1), (0, 1), (0, 1), (0, 1), (1, 0), (1, 0), (1, 0), (1, 0), (1, 1), (1, 1), (1, 1), (1, 1)];
        let mut rows = Vec::new();
        for (g, &(m, p)) in strata.iter().enumerate() {
            let model = ["m0", "m1"][m];
            let persona = [Persona::Basic, Persona::Quality][p];
            for (c, e) in Element::ALL.into_iter().enumerate() {
                rows.push(row(g, model, persona, e, SM_Y[4 * g + c], SM_K[g], 50.0));
            }
        }
        RunCountsTable {
            grain: Grain::Element,
            rows,
        }
    }

    // statsmodels column order: cells, cell x m1, cell x quality
    fn sm_name(j: usize) -> String {
        let c = Cell::Element(Element::ALL[j % 4]);
        match j / 4 {
            0 => cell_term(c),
            1 => model_term(c, "m1"),
            _ => persona_term(c, Persona::Quality),
        }
    }

    #[test]
    fn matches_statsmodels_exchangeable() {
        let fit = fit_poisson_gee(&fixture(), &GeeOptions::default()).unwrap();
        assert!(fit.converged);
        let cov = fit.cov_matrix();
        for j in 0..12 {
            let i = fit.index(&sm_name(j)).unwrap();
            assert!((fit.beta[i] - SM_EXCH[j]).abs() < 1e-6, "{} {}", sm_name(j), fit.beta[i]);
            assert!((cov[(i, i)].sqrt() - SM_EXCH_BSE[j]).abs() < 1e-6);
        }
        assert!((fit.alpha.unwrap() - SM_ALPHA).abs() < 1e-6);
    }

    #[test]
    fn matches_statsmodels_independence() {
        let opts = GeeOptions {
            corr: CorrKind::Independence,
            ..GeeOptions::default()
        };
        let fit = fit_poisson_gee(&fixture(), &opts).unwrap();
        for j in 0..12 {
            let i = fit.index(&sm_name(j)).unwrap();
            assert!((fit.beta[i] - SM_INDEP[j]).abs() < 1e-6);
        }
        assert_eq!(fit.alpha, None);
    }

    #[test]
    fn invariant_to_row_order_and_labels() {
        let base = fit_poisson_gee(&fixture(), &GeeOptions::default()).unwrap();
        let mut t = fixture();
        t.rows.reverse();
        for r in &mut t.rows {
            r.run_id = format!("x{}", 999 - r.run_id[1..].parse::<usize>().unwrap());
        }
        let other = fit_poisson_gee(&t, &GeeOptions::default()).unwrap();
        for (i, name) in base.names.iter().enumerate() {
            let j = other.index(name).unwrap();
            assert!((base.beta[i] - other.beta[j]).abs() < 1e-10);
            for (k, name2) in base.names.iter().enumerate() {
                let l = other.index(name2).unwrap();
                let a = base.cov_robust[i * base.p() + k];
                let b = other.cov_robust[j * other.p() + l];
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    /// Poisson maximum likelihood by Newton-Raphson with Gaussian elimination.
    fn poisson_mle(x: &[Vec<f64>], y: &[f64], off: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut b = vec![0.0; p];
        for _ in 0..200 {
            let mut g = vec![0.0; p];
            let mut h = vec![vec![0.0; p]; p];
            for i in 0..y.len() {
                let eta: f64 = off[i] + (0..p).map(|j| x[i][j] * b[j]).sum::<f64>();
                let mu = eta.exp();
                for a in 0..p {
                    g[a] += x[i][a] * (y[i] - mu);
                    for c in 0..p {
                        h[a][c] += x[i][a] * x[i][c] * mu;
                    }
                }
            }
            // solve h d = g
            let mut aug: Vec<Vec<f64>> = h.iter().zip(&g).map(|(r, &v)| {
                let mut r = r.clone();
                r.push(v);
                r
            }).collect();
            for col in 0..p {
                let piv = (col..p).max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs())).unwrap();
                aug.swap(col, piv);
                for r in 0..p {
                    if r != col {
                        let f = aug[r][col] / aug[col][col];
                        for c in col..=p {
                            aug[r][c] -= f * aug[col][c];
                        }
                    }
                }
            }
            let d: Vec<f64> = (0..p).map(|j| aug[j][p] / aug[j][j]).collect();
            let step = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..p {
                b[j] += d[j];
            }
            if step < 1e-13 {
                break;
            }
        }
        b
    }

    fn singleton_table() -> RunCountsTable {
        // one row per run, each run its own cluster
        let mut rows = Vec::new();
        let mut state = 12345u64;
        for i in 0..120 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let e = Element::ALL[i % 4];
            let model = ["a", "b", "c"][(i / 4) % 3];
            let persona = Persona::ALL[(i / 12) % 3];
            let k = 5.0 + (state >> 60) as f64;
            let y = ((state >> 33) % 7) as f64;
            rows.push(row(i, model, persona, e, y, k, 50.0));
        }
        RunCountsTable {
            grain: Grain::Element,
            rows,
        }
    }

    #[test]
    fn singletons_with_independence_equal_glm() {
        let t = singleton_table();
        let opts = GeeOptions {
            corr: CorrKind::Independence,
            ..GeeOptions::default()
        };
        let (design, ..) = gee_design(&t, &opts).unwrap();
        let fit = fit_gee(&design, &opts).unwrap();
        let x: Vec<Vec<f64>> = (0..design.x.nrows()).map(|i| design.x.row(i).iter().copied().collect()).collect();
        let mle = poisson_mle(&x, design.y.as_slice(), design.offset.as_slice());
        for (a, b) in fit.beta.iter().zip(&mle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn singletons_exchangeable_is_independence() {
        let t = singleton_table();
        let ex = fit_poisson_gee(&t, &GeeOptions::default()).unwrap();
        let ind = fit_poisson_gee(
            &t,
            &GeeOptions {
                corr: CorrKind::Independence,
                ..GeeOptions::default()
            },
        )
        .unwrap();
        assert_eq!(ex.alpha, Some(0.0));
        assert_eq!(ex.beta, ind.beta);
        assert_eq!(ex.cov_robust, ind.cov_robust);
    }

    #[test]
    fn equal_supply_offsets_agree() {
        let a = fit_poisson_gee(&fixture(), &GeeOptions::default()).unwrap();
        let b = fit_poisson_gee(
            &fixture(),
            &GeeOptions {
                offset: OffsetKind::LogKPlusLogN,
                ..GeeOptions::default()
            },
        )
        .unwrap();
        let shift = 50f64.ln();
        for name in &a.names {
            let (x, y) = (a.coef(name).unwrap(), b.coef(name).unwrap());
            let expect = if name.contains(':') { x } else { x - shift };
            assert!((y - expect).abs() < 1e-9, "{name}");
        }
    }

    #[test]
    fn drops_never_selected_cell_in_stratum() {
        let mut t = fixture();
        for r in &mut t.rows {
            if r.model == "m1" && r.persona == Persona::Quality && r.cell == Cell::Element(Element::Setting) {
                r.y = 0.0;
            }
        }
        let fit = fit_poisson_gee(&t, &GeeOptions::default()).unwrap();
        assert_eq!(fit.dropped.len(), 1);
        assert_eq!(fit.dropped[0].rows, 4);
        assert_eq!(fit.n_obs, 60);
        assert!(fit.converged);
    }

    #[test]
    fn needs_two_clusters() {
        let mut t = fixture();
        t.rows.truncate(4);
        let err = fit_poisson_gee(
            &t,
            &GeeOptions {
                model_terms: false,
                persona_terms: false,
                ..GeeOptions::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, StatsError::TooFewClusters(1));
    }
}
