//! Bottleneck distance between equal-size multisets.
//!
//! delta(m, m') = min over bijections sigma of max_i dist(x_i, x'_sigma(i)).
//! The optimum equals one of the n^2 pairwise distances, so a binary search
//! over the sorted distinct distances with a perfect-matching test at each
//! threshold finds it exactly.

use std::collections::VecDeque;

use itertools::Itertools;

use crate::error::{Error, Result};

/// Distance used between multiset elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementMetric {
    /// |x - y|_inf.
    Sup,
    /// |x - y|_inf + |s - t| for (vector, scalar) pairs.
    SupPlusAbs,
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_sizes(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("multisets of sizes {a} and {b}")));
    }
    if a == 0 {
        return Err(Error::Shape("multisets must be nonempty".into()));
    }
    Ok(())
}

/// Bottleneck distance between multisets of vectors under the sup norm.
pub fn multiset_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    Ok(bottleneck(a.len(), |i, j| sup_distance(&a[i], &b[j])))
}

/// Bottleneck distance between multisets of (vector, weight) pairs under
/// |x - y|_inf + |s - t|.
pub fn weighted_multiset_distance(a: &[(Vec<f64>, f64)], b: &[(Vec<f64>, f64)]) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    Ok(bottleneck(a.len(), |i, j| {
        sup_distance(&a[i].0, &b[j].0) + (a[i].1 - b[j].1).abs()
    }))
}

/// Exact bottleneck assignment value for an n x n cost.
pub fn bottleneck(n: usize, dist: impl Fn(usize, usize) -> f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let cost: Vec<f64> = (0..n * n).map(|k| dist(k / n, k % n)).collect();
    let mut levels = cost.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    // smallest level admitting a perfect matching; the largest always does
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(n, |i, j| cost[i * n + j] <= levels[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    levels[lo]
}

/// Reference implementation enumerating all n! assignments.
pub fn bottleneck_brute_force(n: usize, dist: impl Fn(usize, usize) -> f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(i, j)).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

const FREE: usize = usize::MAX;

/// Hopcroft-Karp perfect-matching test on the bipartite graph with an edge
/// (i, j) whenever `edge(i, j)` holds.
pub fn has_perfect_matching(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| edge(i, j)).collect()).collect();
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    let mut left = vec![FREE; n];
    let mut right = vec![FREE; n];
    let mut dist = vec![0usize; n];
    let mut matched = 0;
    loop {
        // layer the free left vertices and everything reachable by alternating paths
        let mut queue = VecDeque::new();
        for i in 0..n {
            if left[i] == FREE {
                dist[i] = 0;
                queue.push_back(i);
            } else {
                dist[i] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                let k = right[j];
                if k == FREE {
                    found = true;
                } else if dist[k] == usize::MAX {
                    dist[k] = dist[i] + 1;
                    queue.push_back(k);
                }
            }
        }
        if !found {
            break;
        }
        for i in 0..n {
            if left[i] == FREE && augment(i, &adj, &mut left, &mut right, &mut dist) {
                matched += 1;
            }
        }
    }
    matched == n
}

fn augment(i: usize, adj: &[Vec<usize>], left: &mut [usize], right: &mut [usize], dist: &mut [usize]) -> bool {
    for &j in &adj[i] {
        let k = right[j];
        let ok = k == FREE || (dist[k] == dist[i] + 1 && augment(k, adj, left, right, dist));
        if ok {
            left[i] = j;
            right[j] = i;
            return true;
        }
    }
    dist[i] = usize::MAX;
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn hand_values() {
        let m = scalars(&[0.0, 1.0]);
        assert_eq!(multiset_distance(&m, &m).unwrap(), 0.0);
        assert_eq!(multiset_distance(&m, &scalars(&[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(multiset_distance(&scalars(&[0.0, 2.0]), &scalars(&[1.0, 5.0])).unwrap(), 3.0);
    }

    #[test]
    fn size_mismatch() {
        assert!(multiset_distance(&scalars(&[0.0]), &scalars(&[0.0, 1.0])).is_err());
        assert!(multiset_distance(&[], &[]).is_err());
    }

    #[test]
    fn weighted_metric() {
        let a = vec![(vec![0.0, 1.0], 0.5)];
        let b = vec![(vec![0.5, 0.0], 0.25)];
        assert_eq!(weighted_multiset_distance(&a, &b).unwrap(), 1.25);
    }

    #[test]
    fn matching_detects_hall_violation() {
        // rows 0 and 1 can only use column 0
        assert!(!has_perfect_matching(3, |i, j| if i < 2 { j == 0 } else { true }));
        assert!(has_perfect_matching(3, |i, j| (i + j) % 3 != 1 || i == j));
    }

    fn multiset(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n)
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // coarse values force many ties
            let a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0..4) as f64, rng.random::<f64>()]).collect();
            let b: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0..4) as f64, rng.random::<f64>()]).collect();
            let fast = multiset_distance(&a, &b).unwrap();
            let slow = bottleneck_brute_force(n, |i, j| sup_distance(&a[i], &b[j]));
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn is_a_metric(
            (a, b, c) in (1usize..6).prop_flat_map(|n| (multiset(n, 2), multiset(n, 2), multiset(n, 2)))
        ) {
            let ab = multiset_distance(&a, &b).unwrap();
            let ba = multiset_distance(&b, &a).unwrap();
            let bc = multiset_distance(&b, &c).unwrap();
            let ac = multiset_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(multiset_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
            let mut shuffled = a.clone();
            shuffled.reverse();
            prop_assert_eq!(multiset_distance(&a, &shuffled).unwrap(), 0.0);
        }
    }
}
