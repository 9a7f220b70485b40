use gnn_limit::bounds::weighted_multiset_distance;
use gnn_limit::graph::{build_graph, permute_graph, sample_latents, Kernel, LatentSampler, LatentSpace, Permutation};
use gnn_limit::message_passing::{aggregate, forward_invariant, Aggregation, AggregationFamily, MessageMap, Network, Readout};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn multiset(n: usize) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(-2.0..2.0f64, 2), 0.0..1.0f64), n)
}

fn pair() -> impl Strategy<Value = (Vec<(Vec<f64>, f64)>, Vec<(Vec<f64>, f64)>)> {
    (1usize..7).prop_flat_map(|n| (multiset(n), multiset(n)))
}

fn psi() -> MessageMap {
    MessageMap::affine_sigmoid(ndarray::array![[1.5, -0.5], [0.3, 2.0]], vec![0.1, -0.2]).unwrap()
}

fn eval(agg: &Aggregation, m: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let nb: Vec<(&[f64], f64)> = m.iter().map(|(z, w)| (z.as_slice(), *w)).collect();
    aggregate(agg, &[0.0, 0.0], &nb).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // With weights in [0, 1] and psi valued in [0, 1], mean and max
    // aggregations are max(Lip(psi), 1)-Lipschitz in the bottleneck distance.
    #[test]
    fn mean_and_max_are_lipschitz_in_multiset_distance((a, b) in pair()) {
        let p = psi();
        let lip = p.lipschitz_bound().unwrap().max(1.0);
        let delta = weighted_multiset_distance(&a, &b).unwrap();
        for agg in [Aggregation::mean(p.clone()), Aggregation::max(p.clone())] {
            let (fa, fb) = (eval(&agg, &a), eval(&agg, &b));
            let gap = fa.iter().zip(&fb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            prop_assert!(gap <= lip * delta + 1e-12, "gap {gap} delta {delta}");
        }
    }

    #[test]
    fn aggregation_ignores_neighbor_order(a in (1usize..7).prop_flat_map(multiset), seed in any::<u64>()) {
        let sigma = Permutation::random(a.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<_> = (0..a.len()).map(|i| a[sigma.image(i)].clone()).collect();
        for agg in [Aggregation::mean(psi()), Aggregation::degree_normalized(psi()), Aggregation::max(psi())] {
            let (x, y) = (eval(&agg, &a), eval(&agg, &shuffled));
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prefix_equals_graph_of_prefix_latents(n in 2usize..40, k in 1usize..40, seed in any::<u64>()) {
        let k = k.min(n);
        let space = LatentSpace::unit_cube(2).unwrap();
        let kernel = Kernel::floored_gaussian(0.1, 1.0, 2);
        let x = sample_latents(LatentSampler::uniform(seed), &space, n).unwrap();
        let g = build_graph(x.clone(), &kernel).unwrap();
        let direct = build_graph(x.slice(ndarray::s![..k, ..]).to_owned(), &kernel).unwrap();
        let p = g.prefix(k).unwrap();
        prop_assert_eq!(p.weights(), direct.weights());
        prop_assert_eq!(p.latents(), direct.latents());
    }
}

#[test]
fn invariant_output_survives_relabeling() {
    let space = LatentSpace::unit_cube(3).unwrap();
    let kernel = Kernel::floored_gaussian(0.1, 1.0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for family in AggregationFamily::ALL {
        for readout in [Readout::Mean, Readout::Max] {
            let net = Network::random(family, 1, &[3, 2], Some(readout), &mut rng).unwrap();
            let x = sample_latents(LatentSampler::uniform(7), &space, 30).unwrap();
            let z: Array2<f64> = x.sum_axis(Axis(1)).insert_axis(Axis(1));
            let g = build_graph(x, &kernel).unwrap();
            let sigma = Permutation::random(30, &mut rng);
            let a = forward_invariant(&net, &g, &z).unwrap();
            let b = forward_invariant(&net, &permute_graph(&g, &sigma).unwrap(), &sigma.apply_rows(&z).unwrap()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12, "{family} {readout:?}: {u} vs {v}");
            }
        }
    }
}
