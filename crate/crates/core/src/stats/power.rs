//! Runs-per-group for detecting a Poisson rate ratio.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerInput {
    pub rr: f64,
    /// Dispersion factor.
    pub phi: f64,
    /// Exposure per run; the baseline mean of a stratum is `exposure * mu0`.
    pub exposure: f64,
    /// Baseline mean per stratum.
    pub strata_mu0: Vec<f64>,
    pub alpha: f64,
    pub power: f64,
    /// Percentile (0-100) of the per-stratum requirement to report.
    pub percentile: f64,
}

impl Default for PowerInput {
    fn default() -> Self {
        Self {
            rr: 1.5,
            phi: 1.0,
            exposure: 1.0,
            strata_mu0: vec![0.5],
            alpha: 0.05,
            power: 0.80,
            percentile: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub per_stratum: Vec<f64>,
    pub percentile_value: f64,
    pub required_runs: u64,
}

/// n = phi (z_{1-alpha/2} + z_{power})^2 (1/mu0 + 1/(rr mu0)) / (ln rr)^2 per
/// stratum; the result is the ceiling of the requested percentile across
/// strata (linear interpolation between order statistics).
pub fn power_required_runs(input: &PowerInput) -> Result<PowerResult, StatsError> {
    let PowerInput {
        rr,
        phi,
        exposure,
        ref strata_mu0,
        alpha,
        power,
        percentile,
    } = *input;
    if !(rr > 0.0) || !rr.is_finite() {
        return Err(StatsError::Domain(format!("rate ratio must be positive, got {rr}")));
    }
    if rr == 1.0 {
        return Err(StatsError::Unsatisfiable(
            "rate ratio 1 needs infinitely many runs".into(),
        ));
    }
    if !(phi >= 0.0) {
        return Err(StatsError::Domain(format!("dispersion must be >= 0, got {phi}")));
    }
    if !(0.0 < alpha && alpha < 1.0 && 0.0 < power && power < 1.0) {
        return Err(StatsError::Domain("alpha and power must lie in (0, 1)".into()));
    }
    if strata_mu0.is_empty() || strata_mu0.iter().any(|&m| !(m * exposure > 0.0)) {
        return Err(StatsError::Domain("baseline means must be positive".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(StatsError::Domain(format!("percentile {percentile} outside [0, 100]")));
    }
    let z = Normal::standard();
    let zsum = z.inverse_cdf(1.0 - alpha / 2.0) + z.inverse_cdf(power);
    let per_stratum: Vec<f64> = strata_mu0
        .iter()
        .map(|&m| {
            let mu0 = m * exposure;
            phi * zsum * zsum * (1.0 / mu0 + 1.0 / (rr * mu0)) / rr.ln().powi(2)
        })
        .collect();
    let value = percentile_linear(&per_stratum, percentile);
    Ok(PowerResult {
        per_stratum,
        percentile_value: value,
        required_runs: value.ceil() as u64,
    })
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile_linear(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.len() == 1 {
        return v[0];
    }
    let pos = pct / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_value() {
        let r = power_required_runs(&PowerInput::default()).unwrap();
        assert!((r.per_stratum[0] - 159.14).abs() < 0.01, "{}", r.per_stratum[0]);
        assert_eq!(r.required_runs, 160);
    }

    #[test]
    fn monotone_towards_one_and_linear_in_phi() {
        let n = |rr: f64, phi: f64| {
            power_required_runs(&PowerInput {
                rr,
                phi,
                ..Default::default()
            })
            .unwrap()
            .percentile_value
        };
        assert!(n(1.5, 1.0) < n(1.2, 1.0));
        assert!(n(1.2, 1.0) < n(1.1, 1.0));
        assert!((n(1.5, 2.0) - 2.0 * n(1.5, 1.0)).abs() < 1e-9);
        assert!(matches!(
            power_required_runs(&PowerInput {
                rr: 1.0,
                ..Default::default()
            }),
            Err(StatsError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn percentile_across_strata() {
        assert!((percentile_linear(&[3.0, 1.0, 2.0, 4.0, 5.0], 80.0) - 4.2).abs() < 1e-12);
        assert_eq!(percentile_linear(&[7.0], 80.0), 7.0);
    }
}
