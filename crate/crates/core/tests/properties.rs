use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use structkan::representability::{
    counting_report, deriv_dim_exact, smoothness_limit, vitushkin_violates, Smoothness, SmoothnessSpec,
};
use structkan::topology::generate::random_smooth;
use structkan::topology::{topological_order, NetworkDocument, NetworkTopology, NodeKind};

/// Arbitrary, usually invalid, graphs: any kinds, any edges, any output.
fn arbitrary_graph() -> impl Strategy<Value = NetworkTopology> {
    (1usize..4, 1usize..9).prop_flat_map(|(input_dim, extra)| {
        let count = input_dim + extra;
        let kind = prop_oneof![
            Just(NodeKind::Univariate),
            Just(NodeKind::Linear),
            (1usize..4).prop_map(|arity| NodeKind::BlackBox { arity }),
        ];
        (
            prop::collection::vec(kind, extra),
            prop::collection::vec((0..count, 0..count), 0..3 * count),
            0..count + 1,
        )
            .prop_map(move |(kinds, edges, output)| {
                let mut nodes: Vec<NodeKind> = (0..input_dim).map(|index| NodeKind::Input { index }).collect();
                nodes.extend(kinds);
                NetworkTopology {
                    input_dim,
                    nodes,
                    edges,
                    output,
                }
            })
    })
}

/// Generated valid networks with one random extra edge, which may or may
/// not break them (cycles, duplicates, arity).
fn perturbed_graph() -> impl Strategy<Value = NetworkTopology> {
    (any::<u64>(), 1usize..4, 1usize..10, any::<bool>(), 0usize..64, 0usize..64).prop_map(
        |(seed, dim, extra, perturb, a, b)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = random_smooth(dim, dim + extra, &mut rng);
            if perturb {
                let n = t.nodes.len();
                t.edges.push((a % n, b % n));
            }
            t
        },
    )
}

fn finite(k: u64, n: u64, kp: u64, np: u64) -> SmoothnessSpec {
    SmoothnessSpec {
        k: Smoothness::Finite(k),
        n,
        k_prime: Smoothness::Finite(kp),
        n_prime: np,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn valid_graphs_have_a_topological_order(t in prop_oneof![arbitrary_graph(), perturbed_graph()]) {
        if t.validate().is_ok() {
            let order = topological_order(&t).expect("valid graph must be acyclic");
            prop_assert_eq!(order.len(), t.nodes.len());
            let mut position = vec![0; t.nodes.len()];
            for (i, &id) in order.iter().enumerate() {
                position[id] = i;
            }
            for &(a, b) in &t.edges {
                prop_assert!(position[a] < position[b]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_topologies_round_trip_through_json(seed in any::<u64>(), dim in 1usize..5, extra in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_smooth(dim, dim + extra, &mut rng);
        prop_assert!(t.validate().is_ok());
        let doc = NetworkDocument::from_topology(t);
        let text = doc.to_json();
        let back = NetworkDocument::from_json(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn ratio_test_depends_only_on_the_ratios(
        k in 0u64..50, n in 1u64..50, kp in 0u64..50, np in 1u64..50, a in 1u64..20, b in 1u64..20,
    ) {
        let base = vitushkin_violates(&finite(k, n, kp, np)).unwrap();
        let scaled = vitushkin_violates(&finite(a * k, a * n, b * kp, b * np)).unwrap();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn verdict_stays_negative_past_the_limit(m in 1u64..60, n in 3u64..10) {
        let p_star = smoothness_limit(m, n).unwrap();
        for p in 1..=2 * p_star {
            let ok = counting_report(m, n, p).unwrap().representable_all;
            prop_assert_eq!(ok, p < p_star, "m={} n={} p={}", m, n, p);
        }
        prop_assert!(smoothness_limit(m + 1, n).unwrap() >= p_star);
    }
}

#[test]
fn exact_derivative_count_follows_pascal() {
    for n in 2..=12u64 {
        for p in 1..=12u64 {
            assert_eq!(
                deriv_dim_exact(n, p).unwrap(),
                deriv_dim_exact(n - 1, p).unwrap() + deriv_dim_exact(n, p - 1).unwrap(),
                "n={n} p={p}"
            );
        }
    }
    for p in 0..=12 {
        assert_eq!(deriv_dim_exact(1, p).unwrap(), 1);
    }
    for n in 1..=12 {
        assert_eq!(deriv_dim_exact(n, 0).unwrap(), 1);
    }
}
