use std::io::Cursor;

use deepim::baselines::{celf, greedy};
use deepim::diffusion::{exact_ic_spread, mc_estimate, DiffusionSpec};
use deepim::graph::{erdos_renyi, load_edge_list, write_edge_list, Graph};
use deepim::inference::{project_phi, BudgetConstraint};
use deepim::SeedVector;
use proptest::prelude::*;

fn arb_graph(max_nodes: usize) -> impl Strategy<Value = Graph> {
    (2..=max_nodes)
        .prop_flat_map(|n| (Just(n), 0..=(n * (n - 1)).min(3 * n), any::<u64>()))
        .prop_map(|(n, m, seed)| erdos_renyi(n, m, seed).unwrap())
}

fn arb_seeds(n: usize) -> impl Strategy<Value = SeedVector> {
    prop::collection::vec(any::<bool>(), n).prop_map(SeedVector::from_flags)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_always_feasible(
        (g, x, k, costs) in arb_graph(20).prop_flat_map(|g| {
            let n = g.node_count();
            (
                Just(g),
                prop::collection::vec(0.0f64..=1.0, n),
                1usize..=n,
                prop::collection::vec(0.0f64..5.0, n),
            )
        })
    ) {
        let total_degree: usize = g.out_degrees().iter().sum();
        let max_cost = costs.iter().cloned().fold(0.0, f64::max);
        let constraints = [
            BudgetConstraint::Count { k },
            BudgetConstraint::DegreeSum { k: (total_degree as f64 / 3.0).max(3.0 * g.node_count() as f64) },
            BudgetConstraint::GenericCost { cost: costs.clone(), k: max_cost.max(1.0) },
        ];
        for c in constraints {
            let s = project_phi(&x, &c, &g).unwrap();
            prop_assert!(c.total_cost(&g, &s) <= c.limit() + 1e-12);
            if let BudgetConstraint::Count { k } = c {
                prop_assert_eq!(s.count(), k);
            }
        }
    }

    #[test]
    fn count_projection_keeps_the_largest_entries((x, k) in prop::collection::vec(0.0f64..=1.0, 1..30)
        .prop_flat_map(|x| { let n = x.len(); (Just(x), 1..=n) }))
    {
        let (g, _) = Graph::from_edges(x.len(), &[], false).unwrap();
        let s = project_phi(&x, &BudgetConstraint::Count { k }, &g).unwrap();
        let lowest_in = s.indices().iter().map(|&i| x[i]).fold(f64::INFINITY, f64::min);
        let highest_out = (0..x.len()).filter(|&i| !s.contains(i)).map(|i| x[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lowest_in >= highest_out);
    }

    #[test]
    fn exact_spread_is_monotone_and_bounded(
        (g, a, b) in arb_graph(7)
            .prop_filter("enumerable", |g| g.edge_count() <= 14)
            .prop_flat_map(|g| { let n = g.node_count(); (Just(g), arb_seeds(n), arb_seeds(n)) })
    ) {
        let union = SeedVector::from_flags(a.flags().iter().zip(b.flags()).map(|(x, y)| *x || *y).collect());
        let sa = exact_ic_spread(&g, &a).unwrap();
        let su = exact_ic_spread(&g, &union).unwrap();
        prop_assert!(sa >= a.count() as f64 - 1e-12);
        prop_assert!(su <= g.node_count() as f64 + 1e-12);
        prop_assert!(su >= sa - 1e-12);
    }

    #[test]
    fn mc_spread_lies_between_seed_count_and_node_count(
        (g, s, seed) in arb_graph(25).prop_flat_map(|g| { let n = g.node_count(); (Just(g), arb_seeds(n), any::<u64>()) })
    ) {
        for spec in [DiffusionSpec::Ic, DiffusionSpec::lt()] {
            let e = mc_estimate(&g, &s, &spec, 16, seed).unwrap();
            prop_assert!(e.mean_spread >= s.count() as f64 - 1e-12);
            prop_assert!(e.mean_spread <= g.node_count() as f64 + 1e-12);
            prop_assert_eq!(&e, &mc_estimate(&g, &s, &spec, 16, seed).unwrap());
        }
    }

    #[test]
    fn celf_and_greedy_agree(g in arb_graph(14), k in 1usize..4, seed in any::<u64>()) {
        let k = k.min(g.node_count());
        let c = BudgetConstraint::Count { k };
        let a = greedy(&g, &c, &DiffusionSpec::Ic, 24, seed).unwrap();
        let b = celf(&g, &c, &DiffusionSpec::Ic, 24, seed).unwrap();
        prop_assert_eq!(a.seeds, b.seeds);
        prop_assert!(b.evaluations <= a.evaluations);
    }

    #[test]
    fn edge_list_round_trip(g in arb_graph(30).prop_filter("non-empty", |g| g.edge_count() > 0)) {
        let mut text = Vec::new();
        write_edge_list(&g, &mut text).unwrap();
        let back = load_edge_list(Cursor::new(text), true).unwrap();
        prop_assert_eq!(back.graph.edge_count(), g.edge_count());
        let mut original = g.edges();
        let mut relabeled: Vec<(usize, usize)> = back
            .graph
            .edges()
            .into_iter()
            .map(|(u, v)| (back.labels[u].parse().unwrap(), back.labels[v].parse().unwrap()))
            .collect();
        original.sort_unstable();
        relabeled.sort_unstable();
        prop_assert_eq!(original, relabeled);
    }
}
