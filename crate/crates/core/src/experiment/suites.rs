use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bottleneck_brute_force, estimate_bounded_difference, lemma_checks, multiset_distance, sup_distance,
    BoundedDifferenceSetup,
};
use crate::error::{Error, Result};
use crate::graph::{build_graph, permute_graph, InputMap, Kernel, LatentSpace, Permutation};
use crate::message_passing::{forward_equivariant, readout, AggregationFamily, MessageMap, Network, Readout};
use crate::message_passing::{Aggregation, CoefficientMap};
use crate::rng::{tags, SeedTree};

/// Largest deviation tolerated between permuted and unpermuted outputs.
pub const EQUIVARIANCE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteSelector {
    Equivariance,
    Lemmas,
    Multiset,
    BoundedDiff,
    All,
}

impl FromStr for SuiteSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariance" => Ok(Self::Equivariance),
            "lemmas" => Ok(Self::Lemmas),
            "multiset" => Ok(Self::Multiset),
            "bounded-diff" => Ok(Self::BoundedDiff),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!(
                "unknown suite {s:?}; expected equivariance, lemmas, multiset, bounded-diff or all"
            ))),
        }
    }
}

/// Instance counts of each suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub equivariance: usize,
    pub lemmas: usize,
    pub multiset: usize,
    pub bounded_diff_trials: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            equivariance: 200,
            lemmas: 10_000,
            multiset: 500,
            bounded_diff_trials: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub suites: Vec<SuiteOutcome>,
}

impl SuiteReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceResult {
    pub instances: usize,
    pub max_equivariant_deviation: f64,
    pub max_invariant_deviation: f64,
}

impl EquivarianceResult {
    pub fn passed(&self) -> bool {
        self.max_equivariant_deviation <= EQUIVARIANCE_TOLERANCE && self.max_invariant_deviation <= EQUIVARIANCE_TOLERANCE
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Relabels random graphs and signals and compares the network outputs.
/// Instance k uses family k mod 4, so every family gets a quarter of them.
pub fn equivariance_check(instances: usize, seed: u64) -> Result<EquivarianceResult> {
    let tree = SeedTree::new(seed).child(tags::SUITES).child(0);
    let mut eq_dev = 0.0f64;
    let mut inv_dev = 0.0f64;
    for k in 0..instances {
        let mut rng = tree.rng(k as u64);
        let family = AggregationFamily::ALL[k % 4];
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let d0 = rng.random_range(1..=3);
        let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
        let net = Network::random(family, d0, &widths, None, &mut rng)?;
        let latents = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let g = build_graph(latents, &Kernel::floored_gaussian(0.1, 1.0, d))?;
        let z = Array2::from_shape_fn((n, d0), |_| 4.0 * rng.random::<f64>() - 2.0);
        let sigma = Permutation::random(n, &mut rng);

        let out = forward_equivariant(&net, &g, &z)?;
        let out_perm = forward_equivariant(&net, &permute_graph(&g, &sigma)?, &sigma.apply_rows(&z)?)?;
        eq_dev = eq_dev.max(max_abs_diff(&out_perm, &sigma.apply_rows(&out)?));
        for kind in [Readout::Mean, Readout::Max] {
            let a = readout(kind, out.view())?;
            let b = readout(kind, out_perm.view())?;
            inv_dev = inv_dev.max(sup_distance(&a, &b));
        }
    }
    Ok(EquivarianceResult {
        instances,
        max_equivariant_deviation: eq_dev,
        max_invariant_deviation: inv_dev,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisetResult {
    pub instances: usize,
    pub mismatches: usize,
    pub counterexample: Option<String>,
}

/// Compares the matching-based multiset distance with the permutation
/// minimum on random multisets of at most 8 elements.
pub fn multiset_oracle_check(instances: usize, seed: u64) -> Result<MultisetResult> {
    let mut rng = SeedTree::new(seed).child(tags::SUITES).child(1).rng(0);
    let mut mismatches = 0;
    let mut counterexample = None;
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=3);
        // a coarse grid makes ties common
        let coarse = rng.random::<bool>();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    (0..k)
                        .map(|_| if coarse { rng.random_range(0..4) as f64 } else { rng.random::<f64>() })
                        .collect()
                })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let dist: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| sup_distance(x, y)).collect()).collect();
        let fast = multiset_distance(&a, &b)?;
        let slow = bottleneck_brute_force(n, |i, j| dist[i][j]);
        if fast != slow {
            mismatches += 1;
            if counterexample.is_none() {
                counterexample = Some(format!("a = {a:?}, b = {b:?}: {fast} != {slow}"));
            }
        }
    }
    Ok(MultisetResult {
        instances,
        mismatches,
        counterexample,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub family: AggregationFamily,
    pub n: usize,
    pub d_n: f64,
    pub d_2n: f64,
    pub ratio: f64,
}

impl ScalingResult {
    /// Averaging families halve; max does not decay.
    pub fn passed(&self) -> bool {
        match self.family {
            AggregationFamily::Max => self.ratio >= 0.9,
            _ => (0.4..=0.6).contains(&self.ratio),
        }
    }
}

/// Estimated bounded differences of one layer at n and 2n nodes, in
/// dimension 2 with a non-constant input and a floored Gaussian kernel.
pub fn bounded_difference_scaling(family: AggregationFamily, n: usize, trials: usize, seed: u64) -> Result<ScalingResult> {
    let d = 2;
    let tree = SeedTree::new(seed).child(tags::BOUNDED_DIFFERENCE);
    let mut rng = tree.rng(0);
    let psi = MessageMap::random_affine_sigmoid(2, 1, &mut rng);
    let agg = match family {
        AggregationFamily::Mean => Aggregation::mean(psi),
        AggregationFamily::Degnorm => Aggregation::degree_normalized(psi),
        AggregationFamily::Attn => Aggregation::attention(CoefficientMap::random_sigmoid(1, &mut rng), psi),
        AggregationFamily::Max => Aggregation::max(psi),
    };
    let setup = BoundedDifferenceSetup {
        f0: InputMap::linear(vec![1.0, 0.5]),
        kernel: Kernel::floored_gaussian(0.1, 1.0, d),
        space: LatentSpace::unit_cube(d)?,
    };
    let stream = tree.child(1).seed();
    let d_n = estimate_bounded_difference(&agg, &setup, n, trials, stream)?;
    let d_2n = estimate_bounded_difference(&agg, &setup, 2 * n, trials, stream)?;
    Ok(ScalingResult {
        family,
        n,
        d_n,
        d_2n,
        ratio: d_2n / d_n,
    })
}

/// Runs the selected property suites; the report fails if any property does.
pub fn run_suites(selector: SuiteSelector, sizes: SuiteSizes, seed: u64) -> Result<SuiteReport> {
    let wants = |s: SuiteSelector| selector == SuiteSelector::All || selector == s;
    let mut suites = Vec::new();
    if wants(SuiteSelector::Equivariance) {
        let r = equivariance_check(sizes.equivariance, seed)?;
        suites.push(SuiteOutcome {
            name: "equivariance".into(),
            passed: r.passed(),
            details: serde_json::to_value(r)?,
        });
    }
    if wants(SuiteSelector::Lemmas) {
        let r = lemma_checks(sizes.lemmas, seed);
        suites.push(SuiteOutcome {
            name: "lemmas".into(),
            passed: r.passed(),
            details: serde_json::to_value(&r)?,
        });
    }
    if wants(SuiteSelector::Multiset) {
        let r = multiset_oracle_check(sizes.multiset, seed)?;
        suites.push(SuiteOutcome {
            name: "multiset".into(),
            passed: r.mismatches == 0,
            details: serde_json::to_value(&r)?,
        });
    }
    if wants(SuiteSelector::BoundedDiff) {
        let results = AggregationFamily::ALL
            .iter()
            .map(|&f| bounded_difference_scaling(f, 64, sizes.bounded_diff_trials, seed))
            .collect::<Result<Vec<_>>>()?;
        suites.push(SuiteOutcome {
            name: "bounded-diff".into(),
            passed: results.iter().all(ScalingResult::passed),
            details: serde_json::to_value(&results)?,
        });
    }
    Ok(SuiteReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
