//! Benjamini-Hochberg step-up adjustment.

use super::StatsError;

/// BH q-values in input order: q_(i) = min over j >= i of m p_(j) / j, capped at 1.
pub fn bh_fdr(pvalues: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidPValue(p));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        let v = pvalues[i] * m as f64 / (rank + 1) as f64;
        running = running.min(v);
        q[i] = running.min(1.0);
    }
    Ok(q)
}
