//! Bounds for aggregations with the bounded-differences property.

use serde::{Deserialize, Serialize};

use super::report::{BoundReport, Validity};
use crate::error::{Error, Result};

/// Deviation level t such that a function of independent variables with
/// bounded differences c_i, valued in R^d, strays more than t from its mean
/// (in sup norm) with probability at most rho:
/// t = sqrt(1/2 sum c_i^2 ln(2d / rho)).
///
/// Returns 0 when rho >= 2d, where the statement is vacuous.
pub fn mcdiarmid_bound(c: &[f64], d: usize, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfidence(rho));
    }
    if c.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition("bounded differences must be nonnegative".into()));
    }
    let log = (2.0 * d as f64 / rho).ln().max(0.0);
    let sum_sq: f64 = c.iter().map(|v| v * v).sum();
    Ok((0.5 * sum_sq * log).sqrt())
}

/// Same as [`mcdiarmid_bound`] with all n differences equal to `c`.
pub fn mcdiarmid_bound_uniform(c: f64, n: usize, d: usize, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfidence(rho));
    }
    if !(c >= 0.0) {
        return Err(Error::Precondition("bounded differences must be nonnegative".into()));
    }
    let log = (2.0 * d as f64 / rho).ln().max(0.0);
    Ok(c * (0.5 * n as f64 * log).sqrt())
}

/// Regularity of one aggregation: |F(x, m) - F(x', m')| <= mu |x - x'| + lambda delta(m, m').
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRegularity {
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub layers: Vec<LayerRegularity>,
    /// Lipschitz constant of the readout with respect to the multiset distance.
    pub readout_lipschitz: f64,
}

/// Readout-side constants of the invariant bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutGaps {
    /// Bounded difference of the sampled readout.
    pub bounded_difference: f64,
    /// Gap between the finite-sample readout expectation and its limit.
    pub expectation_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDiarmidInputs {
    pub n: usize,
    /// d_1, .., d_L.
    pub widths: Vec<usize>,
    /// D_n per layer.
    pub bounded_differences: Vec<f64>,
    /// a_{n-1} per layer.
    pub expectation_gaps: Vec<f64>,
    pub readout: Option<ReadoutGaps>,
    pub rho: f64,
}

impl McDiarmidInputs {
    fn validate(&self, reg: &RegularityConstants) -> Result<()> {
        let l = self.widths.len();
        if self.bounded_differences.len() != l || self.expectation_gaps.len() != l || reg.layers.len() != l {
            return Err(Error::Shape(format!(
                "{} widths, {} bounded differences, {} gaps, {} layer constants",
                l,
                self.bounded_differences.len(),
                self.expectation_gaps.len(),
                reg.layers.len()
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfidence(self.rho));
        }
        if self.n < 2 {
            return Err(Error::Precondition("at least two nodes are required".into()));
        }
        let nonneg = self
            .bounded_differences
            .iter()
            .chain(&self.expectation_gaps)
            .chain(reg.layers.iter().flat_map(|r| [&r.mu, &r.lambda]))
            .all(|v| *v >= 0.0);
        if !nonneg {
            return Err(Error::Precondition("constants must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-layer terms of the equivariant bound at confidence rho:
/// A^(l,L) [D^(l) sqrt(n/2 ln(2^(L+2-l) n d_l / rho)) + a^(l)],
/// with A^(l,L) the product of (mu + lambda) over the layers after l.
fn equivariant_terms(inputs: &McDiarmidInputs, reg: &RegularityConstants, rho: f64) -> Vec<f64> {
    let big_l = inputs.widths.len();
    let n = inputs.n as f64;
    (1..=big_l)
        .map(|l| {
            let amp: f64 = reg.layers[l..].iter().map(|r| r.mu + r.lambda).product();
            let scale = 2f64.powi((big_l + 2 - l) as i32) * n * inputs.widths[l - 1] as f64 / rho;
            let dev = inputs.bounded_differences[l - 1] * (0.5 * n * scale.ln()).sqrt();
            amp * (dev + inputs.expectation_gaps[l - 1])
        })
        .collect()
}

/// Equivariant and (when readout gaps are given) invariant bounds for
/// networks whose aggregations have bounded differences.
///
/// The invariant bound spends rho/2 on the node states and rho/2 on the
/// readout: lambda_R H(rho/2) + C_n sqrt(n/2 ln(4 d_L / rho)) + b_n.
pub fn theorem1_bounds(inputs: &McDiarmidInputs, reg: &RegularityConstants) -> Result<BoundReport> {
    inputs.validate(reg)?;
    let terms = equivariant_terms(inputs, reg, inputs.rho);
    let total_equivariant = terms.iter().sum();
    let total_invariant = match (inputs.readout, inputs.widths.last()) {
        (Some(gaps), Some(&d_last)) => {
            let half: f64 = equivariant_terms(inputs, reg, inputs.rho / 2.0).iter().sum();
            let n = inputs.n as f64;
            let readout_dev =
                gaps.bounded_difference * (0.5 * n * (4.0 * d_last as f64 / inputs.rho).ln()).sqrt();
            Some(reg.readout_lipschitz * half + readout_dev + gaps.expectation_gap)
        }
        _ => None,
    };
    Ok(BoundReport {
        inputs: serde_json::json!({ "theorem": "bounded-differences", "inputs": inputs, "regularity": reg }),
        per_layer_terms: terms,
        total_equivariant,
        total_invariant,
        validity: Validity { ok: true, min_rho: 0.0 },
    })
}

/// Leading-order form with the hidden constants set to one:
/// L D_n sqrt(n ln(n 2^(L+1) d_max / rho)) + L a_{n-1}.
pub fn theorem1_leading_order(inputs: &McDiarmidInputs) -> f64 {
    let l = inputs.widths.len() as f64;
    let n = inputs.n as f64;
    let d_max = inputs.widths.iter().copied().max().unwrap_or(1) as f64;
    let d_n = inputs.bounded_differences.iter().copied().fold(0.0, f64::max);
    let a_n = inputs.expectation_gaps.iter().copied().fold(0.0, f64::max);
    l * d_n * (n * (n * 2f64.powf(l + 1.0) * d_max / inputs.rho).ln()).sqrt() + l * a_n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer(n: usize, d_n: f64, rho: f64) -> (McDiarmidInputs, RegularityConstants) {
        (
            McDiarmidInputs {
                n,
                widths: vec![1],
                bounded_differences: vec![d_n],
                expectation_gaps: vec![0.0],
                readout: None,
                rho,
            },
            RegularityConstants {
                layers: vec![LayerRegularity { mu: 0.0, lambda: 1.0 }],
                readout_lipschitz: 1.0,
            },
        )
    }

    #[test]
    fn mcdiarmid_hand_values() {
        assert_eq!(mcdiarmid_bound(&[0.0; 10], 3, 0.1).unwrap(), 0.0);
        assert_eq!(mcdiarmid_bound(&[1.0], 1, 2.0).unwrap(), 0.0);
        let v = mcdiarmid_bound(&[0.01; 100], 1, 0.1).unwrap();
        assert!((v - (0.5f64 * 0.01 * 20f64.ln()).sqrt()).abs() < 1e-15);
        assert!((v - 0.12238).abs() < 1e-5);
        assert_eq!(
            mcdiarmid_bound_uniform(0.01, 100, 1, 0.1).unwrap(),
            (0.5f64 * 100.0 * 20f64.ln()).sqrt() * 0.01
        );
    }

    #[test]
    fn mcdiarmid_rejects_bad_confidence() {
        assert_eq!(mcdiarmid_bound(&[1.0], 1, 0.0), Err(Error::InvalidConfidence(0.0)));
        assert!(mcdiarmid_bound(&[1.0], 1, -0.5).is_err());
        assert!(mcdiarmid_bound(&[-1.0], 1, 0.5).is_err());
    }

    #[test]
    fn theorem1_hand_values() {
        let (inp, reg) = one_layer(100, 0.0, 0.5);
        assert_eq!(theorem1_bounds(&inp, &reg).unwrap().total_equivariant, 0.0);

        let (inp, reg) = one_layer(100, 0.01, 0.5);
        let b = theorem1_bounds(&inp, &reg).unwrap().total_equivariant;
        let expect = 0.01 * (50.0 * 800f64.ln()).sqrt();
        assert!((b - expect).abs() < 1e-15);
        assert!((b - 0.1829).abs() < 1e-4);
    }

    #[test]
    fn theorem1_rejects_bad_confidence() {
        let (inp, reg) = one_layer(100, 0.01, 1.5);
        assert_eq!(theorem1_bounds(&inp, &reg), Err(Error::InvalidConfidence(1.5)));
        let (inp, reg) = one_layer(100, 0.01, 0.0);
        assert!(theorem1_bounds(&inp, &reg).is_err());
    }

    #[test]
    fn amplification_products() {
        let inp = McDiarmidInputs {
            n: 50,
            widths: vec![2, 3, 1],
            bounded_differences: vec![0.1, 0.2, 0.3],
            expectation_gaps: vec![0.01, 0.0, 0.02],
            readout: Some(ReadoutGaps { bounded_difference: 0.04, expectation_gap: 0.005 }),
            rho: 0.2,
        };
        let reg = RegularityConstants {
            layers: vec![
                LayerRegularity { mu: 0.5, lambda: 1.0 },
                LayerRegularity { mu: 0.25, lambda: 2.0 },
                LayerRegularity { mu: 0.0, lambda: 1.5 },
            ],
            readout_lipschitz: 0.7,
        };
        let rep = theorem1_bounds(&inp, &reg).unwrap();
        let n = 50.0f64;
        let dev = |d: f64, k: i32, w: f64, rho: f64| d * (0.5 * n * (2f64.powi(k) * n * w / rho).ln()).sqrt();
        let h = |rho: f64| {
            2.25 * 1.5 * (dev(0.1, 4, 2.0, rho) + 0.01)
                + 1.5 * dev(0.2, 3, 3.0, rho)
                + (dev(0.3, 2, 1.0, rho) + 0.02)
        };
        assert!((rep.total_equivariant - h(0.2)).abs() < 1e-12);
        let inv = 0.7 * h(0.1) + 0.04 * (0.5 * n * (4.0f64 / 0.2).ln()).sqrt() + 0.005;
        assert!((rep.total_invariant.unwrap() - inv).abs() < 1e-12);
    }

    #[test]
    fn increasing_in_every_bounded_difference() {
        let base = McDiarmidInputs {
            n: 200,
            widths: vec![2, 2],
            bounded_differences: vec![0.01, 0.02],
            expectation_gaps: vec![0.0, 0.0],
            readout: None,
            rho: 0.1,
        };
        let reg = RegularityConstants {
            layers: vec![LayerRegularity { mu: 0.1, lambda: 1.0 }; 2],
            readout_lipschitz: 1.0,
        };
        let b0 = theorem1_bounds(&base, &reg).unwrap().total_equivariant;
        for l in 0..2 {
            let mut bumped = base.clone();
            bumped.bounded_differences[l] *= 1.01;
            assert!(theorem1_bounds(&bumped, &reg).unwrap().total_equivariant > b0);
        }
    }
}
