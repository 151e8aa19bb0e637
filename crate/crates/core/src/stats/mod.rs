//! Count tables, regression contrasts, Poisson GEE, FDR and power.

pub mod counts;
pub mod fdr;
pub mod gee;
pub mod linalg;
pub mod ols;
pub mod power;
pub mod rr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::TaskCondition;

pub use counts::{build_counts_table, select_runs, Cell, CountRow, Grain, RunCountsTable, RunFilter};
pub use fdr::bh_fdr;
pub use gee::{fit_poisson_gee, CorrKind, DroppedCell, GeeFit, GeeOptions, OffsetKind};
pub use ols::{condition_contrast, model_heterogeneity, wald_heterogeneity, ConditionContrast, ConditionPair, ContrastOptions, Weighting, WaldTest};
pub use power::{power_required_runs, PowerInput, PowerResult};
pub use rr::{baseline_family, cell_average, cell_difference, model_difference, pairwise_family, persona_difference, dispersion_diagnostics, rr_contrasts, Contrast, Dispersion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("no runs left after filtering")]
    EmptyTable,
    #[error("unknown constraint id `{0}`")]
    UnknownConstraint(String),
    #[error("singular design: {0}")]
    Singular(String),
    #[error("empty coefficient block")]
    EmptyBlock,
    #[error("term `{0}` is not in the fitted model")]
    UnknownTerm(String),
    #[error("condition {0} has no runs in the table")]
    ConditionAbsent(TaskCondition),
    #[error("no convergence after {iterations} iterations (last step {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },
    #[error("need at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("zero residual degrees of freedom")]
    ZeroDf,
}

/// Cluster-robust variance flavour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    /// Plain sandwich.
    #[default]
    Cr0,
    /// Sandwich with the G/(G-1) small-sample factor (and (N-1)/(N-p) for
    /// linear fits).
    Cr1,
}

/// One estimated contrast. `estimate`, `ci_low` and `ci_high` are risk
/// ratios for GEE contrasts and percentage points for risk differences;
/// `se` is on the log scale for the former.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    pub q: f64,
    pub delta_pct: Option<f64>,
    pub reported: bool,
}

/// Percent change implied by a risk ratio.
pub fn delta_pct(rr: f64) -> f64 {
    (rr - 1.0) * 100.0
}

/// Two-sided normal p-value for z.
pub(crate) fn normal_p(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if z.is_nan() {
        return 1.0;
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.sf(z.abs())).min(1.0)
}

pub(crate) const Z975: f64 = 1.959_963_984_540_054;
