//! Randomized checks of the elementary max and Lipschitz lemmas used by the
//! max-aggregation bounds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::multiset::sup_distance;
use crate::rng::SeedTree;

/// Relative slack allowed on Lipschitz quotients.
pub const LIPSCHITZ_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    /// First failing instance, if any.
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub properties: Vec<PropertyResult>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.violations == 0)
    }
}

/// Coordinatewise maximum of a family of vectors.
pub fn coordinatewise_max(family: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; family.first().map_or(0, Vec::len)];
    for v in family {
        for (o, x) in out.iter_mut().zip(v) {
            *o = o.max(*x);
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_family(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, usize) {
    let m = rng.random_range(1..=12);
    let k = rng.random_range(1..=6);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let fam = (0..m)
        .map(|_| (0..k).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect();
    (fam, k)
}

struct Tally {
    result: PropertyResult,
}

impl Tally {
    fn new(name: &str, instances: usize) -> Self {
        Self {
            result: PropertyResult {
                name: name.into(),
                instances,
                violations: 0,
                counterexample: None,
            },
        }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        if !ok {
            self.result.violations += 1;
            if self.result.counterexample.is_none() {
                self.result.counterexample = Some(describe());
            }
        }
    }
}

/// |max_i a_i|_inf <= max_i |a_i|_inf.
fn max_is_norm_bounded(tree: &SeedTree, instances: usize) -> PropertyResult {
    let mut tally = Tally::new("max-norm-bounded", instances);
    let mut rng = tree.rng(0);
    for _ in 0..instances {
        let (a, _) = random_family(&mut rng);
        let lhs = norm(&coordinatewise_max(&a));
        let rhs = a.iter().map(|v| norm(v)).fold(0.0, f64::max);
        tally.record(lhs <= rhs, || format!("a = {a:?}: {lhs} > {rhs}"));
    }
    tally.result
}

/// |max_i a_i - max_i b_i|_inf <= max_i |a_i - b_i|_inf.
fn max_is_nonexpansive(tree: &SeedTree, instances: usize) -> PropertyResult {
    let mut tally = Tally::new("max-nonexpansive", instances);
    let mut rng = tree.rng(1);
    for _ in 0..instances {
        let (a, _) = random_family(&mut rng);
        let eps = 10f64.powf(rng.random_range(-4.0..1.0));
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|v| v.iter().map(|x| x + eps * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect();
        let (ma, mb) = (coordinatewise_max(&a), coordinatewise_max(&b));
        let lhs = sup_distance(&ma, &mb);
        let rhs = a.iter().zip(&b).map(|(x, y)| sup_distance(x, y)).fold(0.0, f64::max);
        tally.record(lhs <= rhs, || format!("a = {a:?}, b = {b:?}: {lhs} > {rhs}"));
    }
    tally.result
}

/// x -> max over a sampled grid of g(x, y) is lambda_g-Lipschitz whenever each
/// g(., y) is. Uses g(x, y) = s sin(<u, x> + <v, y>) - t |x - y|_inf, which is
/// (|s| |u|_1 + |t|)-Lipschitz in x for the sup norm.
fn sup_is_lipschitz(tree: &SeedTree, instances: usize) -> PropertyResult {
    let mut tally = Tally::new("sup-lipschitz", instances);
    let mut rng = tree.rng(2);
    for _ in 0..instances {
        let d = rng.random_range(1..=4);
        let grid_size = rng.random_range(1..=32);
        let unit = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random::<f64>()).collect::<Vec<f64>>();
        let signed = |rng: &mut ChaCha8Rng, s: f64| (0..d).map(|_| s * (2.0 * rng.random::<f64>() - 1.0)).collect::<Vec<f64>>();
        let u = signed(&mut rng, 3.0);
        let v = signed(&mut rng, 3.0);
        let s = 2.0 * rng.random::<f64>() - 1.0;
        let t = 2.0 * rng.random::<f64>() - 1.0;
        let lambda = s.abs() * u.iter().map(|x| x.abs()).sum::<f64>() + t.abs();
        let grid: Vec<Vec<f64>> = (0..grid_size).map(|_| unit(&mut rng)).collect();
        let g = |x: &[f64], y: &[f64]| {
            let phase: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + v.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            s * phase.sin() - t * sup_distance(x, y)
        };
        let sup = |x: &[f64]| grid.iter().map(|y| g(x, y)).fold(f64::NEG_INFINITY, f64::max);
        let x = unit(&mut rng);
        let h = 10f64.powf(rng.random_range(-6.0..0.0));
        let x2: Vec<f64> = x.iter().map(|a| a + h * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let dx = sup_distance(&x, &x2);
        let dg = (sup(&x) - sup(&x2)).abs();
        // rounding in g is about 1e-15 in absolute terms
        let ok = dg <= lambda * dx * (1.0 + LIPSCHITZ_SLACK) + 1e-13;
        tally.record(ok, || format!("x = {x:?}, x' = {x2:?}: {dg} > {lambda} * {dx}"));
    }
    tally.result
}

/// Runs the three properties over `instances` random instances each.
pub fn lemma_checks(instances: usize, seed: u64) -> LemmaReport {
    let tree = SeedTree::new(seed);
    LemmaReport {
        properties: vec![
            max_is_norm_bounded(&tree, instances),
            max_is_nonexpansive(&tree, instances),
            sup_is_lipschitz(&tree, instances),
        ],
    }
}
