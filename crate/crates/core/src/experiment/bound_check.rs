use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Model};
use super::convergence::{run_convergence, ConvergenceTable, RunMetadata};
use super::fit::median;
use crate::bounds::{network_max_inputs, network_mcdiarmid_inputs, theorem1_bounds, theorem2_max_bounds, BoundReport};
use crate::error::{Error, Result};
use crate::message_passing::AggregationFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCheck {
    pub n: usize,
    pub bound: f64,
    pub trials: usize,
    pub violations: usize,
    pub frequency: f64,
    pub median_mae: f64,
    pub max_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub agg: AggregationFamily,
    pub d: usize,
    pub rho: f64,
    /// "bounded-differences" or "max".
    pub theorem: String,
    pub sizes: Vec<SizeCheck>,
    pub violations: usize,
    pub trials: usize,
    /// Largest per-size violation frequency.
    pub max_frequency: f64,
    /// Every per-size frequency is at most rho.
    pub passed: bool,
    pub meta: RunMetadata,
}

/// Equivariant bound at n nodes for the model's family.
pub fn equivariant_bound(cfg: &ExperimentConfig, model: &Model, n: usize, rho: f64) -> Result<BoundReport> {
    match cfg.agg {
        AggregationFamily::Max => {
            let inputs = network_max_inputs(&model.net, &model.f0, &model.kernel, &model.space, n)?;
            theorem2_max_bounds(&inputs, rho)
        }
        _ => {
            let (inputs, reg) = network_mcdiarmid_inputs(
                &model.net,
                &model.f0,
                &model.kernel,
                &model.space,
                n,
                rho,
                cfg.expectation_gap_scale,
            )?;
            theorem1_bounds(&inputs, &reg)
        }
    }
}

/// Compares the observed equivariant MAE of every trial with the bound at
/// confidence rho. Bounds are computed first, so a rho outside a validity
/// window fails before any simulation.
pub fn run_bound_check(cfg: &ExperimentConfig, rho: f64) -> Result<BoundCheckReport> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfidence(rho));
    }
    let model = cfg.build_model()?;
    let bounds = cfg
        .sizes
        .iter()
        .map(|&n| equivariant_bound(cfg, &model, n, rho).map(|r| r.total_equivariant))
        .collect::<Result<Vec<f64>>>()?;
    let table = run_convergence(cfg)?;
    Ok(summarize(cfg, rho, &bounds, table))
}

fn summarize(cfg: &ExperimentConfig, rho: f64, bounds: &[f64], table: ConvergenceTable) -> BoundCheckReport {
    let sizes: Vec<SizeCheck> = cfg
        .sizes
        .iter()
        .zip(bounds)
        .map(|(&n, &bound)| {
            let mut maes: Vec<f64> = table.rows.iter().filter(|r| r.n == n).map(|r| r.mae).collect();
            let violations = maes.iter().filter(|m| **m > bound).count();
            let max_mae = maes.iter().copied().fold(0.0, f64::max);
            SizeCheck {
                n,
                bound,
                trials: maes.len(),
                violations,
                frequency: violations as f64 / maes.len() as f64,
                median_mae: median(&mut maes),
                max_mae,
            }
        })
        .collect();
    let max_frequency = sizes.iter().map(|s| s.frequency).fold(0.0, f64::max);
    BoundCheckReport {
        agg: cfg.agg,
        d: cfg.dim,
        rho,
        theorem: match cfg.agg {
            AggregationFamily::Max => "max",
            _ => "bounded-differences",
        }
        .into(),
        violations: sizes.iter().map(|s| s.violations).sum(),
        trials: sizes.iter().map(|s| s.trials).sum(),
        max_frequency,
        passed: max_frequency <= rho,
        sizes,
        meta: table.meta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::QuadratureKind;
    use crate::experiment::config::QuadratureSpec;

    fn small(agg: AggregationFamily) -> ExperimentConfig {
        let mut c = ExperimentConfig::reference(agg, 2);
        c.sizes = vec![16, 32, 64];
        c.trials = 3;
        c.layers = 2;
        c.quadrature = QuadratureSpec {
            kind: QuadratureKind::Sobol,
            size: 256,
            replicates: 4,
            max_size: 1 << 14,
        };
        c
    }

    #[test]
    fn mean_bound_holds() {
        let r = run_bound_check(&small(AggregationFamily::Mean), 0.1).unwrap();
        assert_eq!(r.theorem, "bounded-differences");
        assert_eq!(r.trials, 9);
        assert_eq!(r.violations, 0);
        assert!(r.passed);
        assert!(r.sizes.windows(2).all(|w| w[1].bound < w[0].bound));
    }

    #[test]
    fn max_bound_holds() {
        let r = run_bound_check(&small(AggregationFamily::Max), 0.1).unwrap();
        assert_eq!(r.theorem, "max");
        assert!(r.passed);
        assert!(r.sizes.iter().all(|s| s.max_mae <= s.bound));
    }

    #[test]
    fn max_rho_below_window() {
        let mut c = small(AggregationFamily::Max);
        c.sizes = vec![2, 4];
        assert!(matches!(run_bound_check(&c, 0.01), Err(Error::ValidityWindow { .. })));
    }

    #[test]
    fn normalized_families_use_derived_gap() {
        let c = small(AggregationFamily::Degnorm);
        let m = c.build_model().unwrap();
        let b = equivariant_bound(&c, &m, 64, 0.1).unwrap();
        assert!(b.total_equivariant.is_finite() && b.total_equivariant > 0.0);
        let mut c2 = c.clone();
        c2.expectation_gap_scale = Some(0.0);
        assert!(equivariant_bound(&c2, &m, 64, 0.1).unwrap().total_equivariant < b.total_equivariant);
    }

    #[test]
    fn bad_confidence() {
        assert_eq!(
            run_bound_check(&small(AggregationFamily::Mean), 1.5),
            Err(Error::InvalidConfidence(1.5))
        );
    }
}
