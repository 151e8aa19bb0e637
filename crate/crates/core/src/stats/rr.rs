//! Risk-ratio contrasts and dispersion checks on a fitted GEE.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::counts::Cell;
use super::gee::{cell_term, model_term, persona_term, GeeFit};
use super::{bh_fdr, delta_pct, normal_p, ContrastResult, StatsError, Z975};
use crate::harness::Persona;

/// A linear combination of named coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub label: String,
    pub weights: BTreeMap<String, f64>,
}

impl Contrast {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            weights: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, term: impl Into<String>, w: f64) -> &mut Self {
        *self.weights.entry(term.into()).or_default() += w;
        self
    }

    fn add_all(&mut self, other: &BTreeMap<String, f64>, scale: f64) {
        for (k, v) in other {
            self.add(k.clone(), v * scale);
        }
    }

    /// Weight vector aligned with the fit. Terms the fit dropped for
    /// separation count as zero; anything else unknown is an error.
    pub fn vector(&self, fit: &GeeFit) -> Result<DVector<f64>, StatsError> {
        let mut v = DVector::zeros(fit.p());
        for (term, &w) in &self.weights {
            match fit.index(term) {
                Some(i) => v[i] += w,
                None if fit.dropped_columns.iter().any(|d| d == term) => {}
                None => return Err(StatsError::UnknownTerm(term.clone())),
            }
        }
        Ok(v)
    }
}

/// Log-rate of a cell averaged over the model and persona levels of the fit.
pub fn cell_average(fit: &GeeFit, cell: Cell) -> BTreeMap<String, f64> {
    let mut w = BTreeMap::new();
    w.insert(cell_term(cell), 1.0);
    let present = |t: &String| fit.index(t).is_some() || fit.dropped_columns.contains(t);
    if fit.models.len() > 1 {
        let share = 1.0 / fit.models.len() as f64;
        for m in &fit.models[1..] {
            let t = model_term(cell, m);
            if present(&t) {
                w.insert(t, share);
            }
        }
    }
    if fit.personas.len() > 1 {
        let share = 1.0 / fit.personas.len() as f64;
        for &p in &fit.personas[1..] {
            let t = persona_term(cell, p);
            if present(&t) {
                w.insert(t, share);
            }
        }
    }
    w
}

/// `a` versus `b`, each averaged over model and persona levels.
pub fn cell_difference(fit: &GeeFit, a: Cell, b: Cell) -> Contrast {
    let mut c = Contrast::new(format!("{a} vs {b}"));
    c.add_all(&cell_average(fit, a), 1.0);
    c.add_all(&cell_average(fit, b), -1.0);
    c
}

/// Every cell against one baseline cell.
pub fn baseline_family(fit: &GeeFit, cells: &[Cell], baseline: Cell) -> Vec<Contrast> {
    cells
        .iter()
        .filter(|&&c| c != baseline)
        .map(|&c| cell_difference(fit, c, baseline))
        .collect()
}

/// All unordered pairs, in the given cell order.
pub fn pairwise_family(fit: &GeeFit, cells: &[Cell]) -> Vec<Contrast> {
    let mut out = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            out.push(cell_difference(fit, cells[j], cells[i]));
        }
    }
    out
}

/// Persona `a` versus `b` within one cell, averaged over models.
pub fn persona_difference(fit: &GeeFit, cell: Cell, a: Persona, b: Persona) -> Contrast {
    let mut c = Contrast::new(format!("{cell}: {a} vs {b}"));
    let reference = fit.personas.first().copied();
    if Some(a) != reference {
        c.add(persona_term(cell, a), 1.0);
    }
    if Some(b) != reference {
        c.add(persona_term(cell, b), -1.0);
    }
    c
}

/// Model `a` versus `b` within one cell, averaged over personas.
pub fn model_difference(fit: &GeeFit, cell: Cell, a: &str, b: &str) -> Contrast {
    let mut c = Contrast::new(format!("{cell}: {a} vs {b}"));
    let reference = fit.models.first().map(String::as_str);
    if Some(a) != reference {
        c.add(model_term(cell, a), 1.0);
    }
    if Some(b) != reference {
        c.add(model_term(cell, b), -1.0);
    }
    c
}

/// Evaluates a family of contrasts as risk ratios with Wald intervals,
/// BH q-values within the family, and the report mask
/// `q < q_threshold && |delta%| >= delta_floor`.
pub fn rr_contrasts(
    fit: &GeeFit,
    family: &[Contrast],
    q_threshold: f64,
    delta_floor: f64,
) -> Result<Vec<ContrastResult>, StatsError> {
    if !fit.converged {
        return Err(StatsError::NonConvergence {
            iterations: fit.iterations,
            last_step: fit.last_step,
        });
    }
    let beta = DVector::from_column_slice(&fit.beta);
    let cov = fit.cov_matrix();
    let mut out = Vec::with_capacity(family.len());
    for c in family {
        let v = c.vector(fit)?;
        let est = v.dot(&beta);
        let var = (v.transpose() * &cov * &v)[(0, 0)].max(0.0);
        let se = var.sqrt();
        let p = if se > 0.0 {
            normal_p(est / se)
        } else if est == 0.0 {
            1.0
        } else {
            0.0
        };
        let rr = est.exp();
        out.push(ContrastResult {
            label: c.label.clone(),
            estimate: rr,
            se,
            ci_low: (est - Z975 * se).exp(),
            ci_high: (est + Z975 * se).exp(),
            p,
            q: p,
            delta_pct: Some(delta_pct(rr)),
            reported: false,
        });
    }
    let q = bh_fdr(&out.iter().map(|r| r.p).collect::<Vec<_>>())?;
    for (r, q) in out.iter_mut().zip(q) {
        r.q = q;
        r.reported = q < q_threshold && r.delta_pct.is_some_and(|d| d.abs() >= delta_floor);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub pearson_chi2: f64,
    pub deviance: f64,
    pub df: usize,
    pub pearson_chi2_per_df: f64,
    pub deviance_per_df: f64,
}

/// Pearson and deviance statistics from the fitted means over residual df.
pub fn dispersion_diagnostics(fit: &GeeFit) -> Result<Dispersion, StatsError> {
    if fit.n_obs <= fit.p() {
        return Err(StatsError::ZeroDf);
    }
    let df = fit.n_obs - fit.p();
    let mut pearson = 0.0;
    let mut deviance = 0.0;
    for (&y, &mu) in fit.y.iter().zip(&fit.mu) {
        pearson += (y - mu) * (y - mu) / mu;
        let term = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
        deviance += 2.0 * (term - (y - mu));
    }
    Ok(Dispersion {
        pearson_chi2: pearson,
        deviance,
        df,
        pearson_chi2_per_df: pearson / df as f64,
        deviance_per_df: deviance / df as f64,
    })
}
