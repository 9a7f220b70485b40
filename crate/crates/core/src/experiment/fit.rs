use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::convergence::ConvergenceRow;
use crate::error::{Error, Result};
use crate::message_passing::AggregationFamily;

/// Least-squares line through (ln n, ln median MAE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// -1/2 for averaging families, -1/d for max.
    pub theory_slope: Option<f64>,
    pub sizes: Vec<usize>,
    pub median_mae: Vec<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Decay rate predicted for a family in latent dimension d.
pub fn theory_slope(agg: AggregationFamily, d: usize) -> f64 {
    match agg {
        AggregationFamily::Max => -1.0 / d as f64,
        _ => -0.5,
    }
}

/// Median MAE per size, in increasing order of n.
pub fn median_by_size(rows: &[ConvergenceRow]) -> Vec<(usize, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r.mae);
    }
    by_n.into_iter().map(|(n, mut v)| (n, median(&mut v))).collect()
}

/// Number of adjacent sizes whose median MAE increases.
pub fn median_inversions(medians: &[(usize, f64)]) -> usize {
    medians.windows(2).filter(|w| w[1].1 > w[0].1).count()
}

/// Ordinary least squares of y on x, returning (slope, intercept, R^2).
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let k = x.len();
    if k != y.len() || k < 2 {
        return Err(Error::DegenerateFit(format!("{k} points")));
    }
    let mx = x.iter().sum::<f64>() / k as f64;
    let my = y.iter().sum::<f64>() / k as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok((slope, intercept, r2))
}

/// Fits the decay of the median MAE over the size grid.
pub fn fit_rate(rows: &[ConvergenceRow]) -> Result<RateFit> {
    let medians = median_by_size(rows);
    if medians.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} distinct sizes, need 3", medians.len())));
    }
    if let Some((n, _)) = medians.iter().find(|(_, m)| !(*m > 0.0)) {
        return Err(Error::DegenerateFit(format!("median MAE at n = {n} is not positive")));
    }
    let x: Vec<f64> = medians.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let y: Vec<f64> = medians.iter().map(|(_, m)| m.ln()).collect();
    let (slope, intercept, r2) = least_squares(&x, &y)?;
    let first = &rows[0];
    let homogeneous = rows.iter().all(|r| r.agg == first.agg && r.d == first.d);
    Ok(RateFit {
        slope,
        intercept,
        r2,
        theory_slope: homogeneous.then(|| theory_slope(first.agg, first.d)),
        sizes: medians.iter().map(|(n, _)| *n).collect(),
        median_mae: medians.iter().map(|(_, m)| *m).collect(),
    })
}
