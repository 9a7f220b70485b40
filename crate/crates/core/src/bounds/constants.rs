//! Closed-form constants of the built-in aggregation families and an
//! empirical bounded-difference estimator.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::concentration::{LayerRegularity, McDiarmidInputs, ReadoutGaps, RegularityConstants};
use super::max::{lipschitz_cascade, MaxBoundInputs, VolumeRetention};
use crate::error::{Error, Result};
use crate::graph::{InputMap, Kernel, LatentSpace};
use crate::message_passing::{aggregate, Aggregation, AggregationKind, Network, Readout};
use crate::rng::SeedTree;

/// Inputs to the per-family formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    /// Lipschitz constant of psi.
    pub lambda_psi: f64,
    /// sup |psi|_inf over the reachable states.
    pub sup_psi: f64,
    /// sup |f|_inf of the layer input.
    pub sup_input: f64,
    /// Lower bound of the kernel (degree-normalized) or of the coefficient (attention).
    pub alpha: f64,
    /// Upper bound of the coefficient (attention only).
    pub beta: f64,
    /// Lipschitz constant of the coefficient (attention only).
    pub lambda_c: f64,
}

/// Rate at which the expectation gap a_n vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapOrder {
    Zero,
    InverseSqrtN,
}

/// mu_F, lambda_F, the bounded difference D_n = numerator / (n - 1) and the
/// expectation gap a_{n-1} = gap_scale / sqrt(n - 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleConstants {
    pub mu: f64,
    pub lambda: f64,
    pub bounded_difference_numerator: f64,
    pub gap_order: GapOrder,
    pub gap_scale: f64,
}

impl ExampleConstants {
    pub fn bounded_difference(&self, n: usize) -> f64 {
        self.bounded_difference_numerator / (n as f64 - 1.0)
    }

    pub fn expectation_gap(&self, n: usize) -> f64 {
        match self.gap_order {
            GapOrder::Zero => 0.0,
            GapOrder::InverseSqrtN => self.gap_scale / (n as f64 - 1.0).sqrt(),
        }
    }
}

/// Scale of the gap between E[sum v psi / sum v] over m i.i.d. neighbors
/// and its limit, for weights v in [lo, hi] with lo > 0.
///
/// |A/B - a/b| <= (|A - a| + |psi|_inf |B - b|) / lo, and the mean absolute
/// deviations of A and B are at most hi |psi|_inf / sqrt(m) and
/// (hi - lo) / (2 sqrt(m)).
fn ratio_gap_scale(sup_psi: f64, lo: f64, hi: f64) -> f64 {
    sup_psi * (hi + 0.5 * (hi - lo)) / lo
}

/// Constants for the mean, degree-normalized and attention families.
pub fn example_constants(kind: &AggregationKind, p: &ExampleParams) -> Result<ExampleConstants> {
    match kind {
        AggregationKind::MeanConv => Ok(ExampleConstants {
            mu: 0.0,
            lambda: p.lambda_psi.max(p.sup_psi),
            bounded_difference_numerator: 2.0 * p.sup_psi,
            gap_order: GapOrder::Zero,
            gap_scale: 0.0,
        }),
        AggregationKind::DegreeNormalized => {
            if !(p.alpha > 0.0) {
                return Err(Error::Precondition("degree normalization needs a kernel lower bound alpha > 0".into()));
            }
            let a2 = p.alpha * p.alpha;
            Ok(ExampleConstants {
                mu: 0.0,
                lambda: p.lambda_psi.max(2.0 * p.sup_psi) / a2,
                bounded_difference_numerator: (2.0 * p.lambda_psi * p.sup_input + 4.0 * p.sup_psi) / a2,
                gap_order: GapOrder::InverseSqrtN,
                gap_scale: ratio_gap_scale(p.sup_psi, p.alpha, 1.0),
            })
        }
        AggregationKind::Attention(_) => {
            if !(p.alpha > 0.0) {
                return Err(Error::Precondition("attention needs a coefficient lower bound alpha > 0".into()));
            }
            let a2 = p.alpha * p.alpha;
            Ok(ExampleConstants {
                mu: 2.0 * p.beta * p.sup_psi * p.lambda_c / a2,
                lambda: p.beta * (p.beta * p.lambda_psi).max(2.0 * p.sup_psi * p.lambda_c) / a2,
                bounded_difference_numerator: (2.0 * p.lambda_psi * p.sup_input * p.beta + 4.0 * p.sup_psi * p.beta) / a2,
                gap_order: GapOrder::InverseSqrtN,
                gap_scale: ratio_gap_scale(p.sup_psi, p.alpha, p.beta),
            })
        }
        AggregationKind::MaxConv => Err(Error::NoSharpBoundedDifferences),
        AggregationKind::Custom(_) => Err(Error::Unsupported("custom aggregations carry no constants".into())),
    }
}

/// Parameters of each layer of a network, propagating sup bounds forward.
pub fn layer_params(net: &Network, f0: &InputMap, kernel: &Kernel, space: &LatentSpace) -> Result<Vec<ExampleParams>> {
    let mut sup_input = f0.sup_bound(space);
    let mut out = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let sup_psi = layer.psi.sup_bound(sup_input)?;
        let (alpha, beta, lambda_c) = match &layer.kind {
            AggregationKind::Attention(c) => {
                let (lo, hi) = c.bounds();
                (lo, hi, c.lipschitz())
            }
            _ => (kernel.lower_bound(), 1.0, 0.0),
        };
        out.push(ExampleParams {
            lambda_psi: layer.psi.lipschitz_bound()?,
            sup_psi,
            sup_input,
            alpha,
            beta,
            lambda_c,
        });
        // each built-in family outputs an average or maximum of w psi with w in [0, 1]
        sup_input = sup_psi;
    }
    Ok(out)
}

/// Bounded-differences inputs for a network of mean, degree-normalized or
/// attention layers on an n-node graph.
///
/// `gap_scale`, when given, replaces the derived scale of every layer whose
/// expectation gap is O(1/sqrt n). A mean readout contributes
/// lambda_R = 1, C_n = 2 |f^(L)|_inf / n and b_n = 0.
pub fn network_mcdiarmid_inputs(
    net: &Network,
    f0: &InputMap,
    kernel: &Kernel,
    space: &LatentSpace,
    n: usize,
    rho: f64,
    gap_scale: Option<f64>,
) -> Result<(McDiarmidInputs, RegularityConstants)> {
    if n < 2 {
        return Err(Error::Precondition("at least two nodes are required".into()));
    }
    let params = layer_params(net, f0, kernel, space)?;
    let mut layers = Vec::new();
    let mut diffs = Vec::new();
    let mut gaps = Vec::new();
    for (layer, p) in net.layers().iter().zip(&params) {
        let c = example_constants(&layer.kind, p)?;
        layers.push(LayerRegularity { mu: c.mu, lambda: c.lambda });
        diffs.push(c.bounded_difference(n));
        let c = match (c.gap_order, gap_scale) {
            (GapOrder::InverseSqrtN, Some(g)) => ExampleConstants { gap_scale: g, ..c },
            _ => c,
        };
        gaps.push(c.expectation_gap(n));
    }
    let sup_last = params.last().map_or(f0.sup_bound(space), |p| p.sup_psi);
    let (readout, readout_lipschitz) = match net.readout() {
        Some(Readout::Mean) => (
            Some(ReadoutGaps {
                bounded_difference: 2.0 * sup_last / n as f64,
                expectation_gap: 0.0,
            }),
            1.0,
        ),
        _ => (None, 1.0),
    };
    Ok((
        McDiarmidInputs {
            n,
            widths: net.widths()[1..].to_vec(),
            bounded_differences: diffs,
            expectation_gaps: gaps,
            readout,
            rho,
        },
        RegularityConstants {
            layers,
            readout_lipschitz,
        },
    ))
}

/// Inputs of the max-aggregation bound for a network of max layers.
pub fn network_max_inputs(
    net: &Network,
    f0: &InputMap,
    kernel: &Kernel,
    space: &LatentSpace,
    n: usize,
) -> Result<MaxBoundInputs> {
    if let Some(l) = net.layers().iter().position(|a| !matches!(a.kind, AggregationKind::MaxConv)) {
        return Err(Error::Precondition(format!("layer {} is not a max aggregation", l + 1)));
    }
    let params = layer_params(net, f0, kernel, space)?;
    let lambda_psi: Vec<f64> = params.iter().map(|p| p.lambda_psi).collect();
    let sups: Vec<f64> = params.iter().map(|p| p.sup_psi).collect();
    Ok(MaxBoundInputs {
        n,
        widths: net.widths()[1..].to_vec(),
        cascade: lipschitz_cascade(f0.lipschitz(), &lambda_psi, &sups, kernel.lipschitz())?,
        lambda_psi,
        volume: VolumeRetention::uniform_box(space),
    })
}

/// Setting of the one-layer statistic whose bounded differences are probed.
#[derive(Debug, Clone)]
pub struct BoundedDifferenceSetup {
    pub f0: InputMap,
    pub kernel: Kernel,
    pub space: LatentSpace,
}

/// Lower estimate of the bounded difference of
/// (X_2, .., X_n) -> F(f(X_1), {(f(X_j), W(X_1, X_j))}_{j >= 2}).
///
/// Each trial draws an anchor X_1, a sup-norm ball B(c, r) with r uniform in
/// (0, 1), an old coordinate inside the ball and a replacement uniform on the
/// box, then fills the other n - 2 coordinates from the ball. Concentrating
/// the fixed coordinates makes worst cases reachable by random search. The
/// result is the largest sup-norm output change over trials.
///
/// Trial t uses the same stream for every n and every trial count, so the
/// estimate is nondecreasing in `trials` and shares the anchor, ball, old and
/// new coordinates across graph sizes.
pub fn estimate_bounded_difference(
    agg: &Aggregation,
    setup: &BoundedDifferenceSetup,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::Precondition("bounded differences need n >= 2".into()));
    }
    if setup.f0.out_dim() != agg.in_dim() {
        return Err(Error::Shape(format!(
            "input map has width {}, aggregation expects {}",
            setup.f0.out_dim(),
            agg.in_dim()
        )));
    }
    let tree = SeedTree::new(seed);
    let deviations = (0..trials)
        .into_par_iter()
        .map(|t| one_trial(agg, setup, n, &tree.child(t as u64)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(deviations.into_iter().fold(0.0, f64::max))
}

fn one_trial(agg: &Aggregation, setup: &BoundedDifferenceSetup, n: usize, tree: &SeedTree) -> Result<f64> {
    let space = &setup.space;
    let d = space.dim();
    let mut rng = tree.rng(0);
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|k| space.lower()[k] + (space.upper()[k] - space.lower()[k]) * rng.random::<f64>())
            .collect()
    };
    let anchor = uniform(&mut rng);
    let center = uniform(&mut rng);
    let radius: f64 = rng.random();
    let in_ball = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|k| {
                let lo = (center[k] - radius).max(space.lower()[k]);
                let hi = (center[k] + radius).min(space.upper()[k]);
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect()
    };
    let old = in_ball(&mut rng);
    let new = uniform(&mut rng);
    // the remaining coordinates come from a separate stream so that the
    // shared draws above do not depend on n
    let mut rest_rng = tree.rng(1);
    let mut points = vec![old, new];
    points.extend((0..n - 2).map(|_| in_ball(&mut rest_rng)));

    let f_anchor = setup.f0.eval(&anchor);
    let states: Vec<Vec<f64>> = points.iter().map(|x| setup.f0.eval(x)).collect();
    let weights: Vec<f64> = points.iter().map(|x| setup.kernel.eval(&anchor, x)).collect();
    let neighbors = |first: usize| -> Vec<(&[f64], f64)> {
        std::iter::once(first)
            .chain(2..points.len())
            .map(|j| (&states[j][..], weights[j]))
            .collect()
    };
    let before = aggregate(agg, &f_anchor, &neighbors(0))?;
    let after = aggregate(agg, &f_anchor, &neighbors(1))?;
    Ok(before.iter().zip(&after).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Values of the one-layer statistic on `trials` independent samples, used
/// to check concentration empirically. Row t is the aggregation output at
/// the anchor for sample t.
pub fn sample_one_layer_statistic(
    agg: &Aggregation,
    setup: &BoundedDifferenceSetup,
    anchor: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let tree = SeedTree::new(seed);
    let d = setup.space.dim();
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = crate::graph::sample_latents(
                crate::graph::LatentSampler::uniform(tree.child(t as u64).seed()),
                &setup.space,
                n - 1,
            )?;
            let states: Vec<Vec<f64>> = x.rows().into_iter().map(|r| setup.f0.eval(&r.to_vec())).collect();
            let nb: Vec<(&[f64], f64)> = x
                .rows()
                .into_iter()
                .zip(&states)
                .map(|(r, s)| (&s[..], setup.kernel.eval(anchor, &r.to_vec())))
                .collect();
            debug_assert_eq!(x.ncols(), d);
            aggregate(agg, &setup.f0.eval(anchor), &nb)
        })
        .collect::<Result<Vec<_>>>()?;
    let width = agg.out_dim();
    Ok(Array2::from_shape_vec((trials, width), rows.into_iter().flatten().collect()).expect("fixed width"))
}
