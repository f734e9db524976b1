use proptest::prelude::*;
use torusmatch::allocation::{allocate, cell_stats, Scheme};
use torusmatch::baselines::{has_blocking_pair, stable_matching};
use torusmatch::fractional::build_intersection_graph;
use torusmatch::point_process::sample_conditioned_pair;
use torusmatch::torus::{set_diameter, TorusSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn allocations_partition_into_equal_cells(seed in any::<u64>(), k in 0usize..4, dyadic in any::<bool>()) {
        let spec = TorusSpec::new(2, 3.0, 16).unwrap();
        let n = [1, 4, 16, 64][k];
        let scheme = if dyadic { Scheme::Dyadic } else { Scheme::Stable };
        let p = sample_conditioned_pair(&spec, n, seed, 0).unwrap();
        let f = allocate(&p.first, scheme).unwrap();
        f.check_self_ownership(&p.first).unwrap();
        let cells = f.cells();
        prop_assert_eq!(cells.len(), n);
        prop_assert!(cells.iter().all(|c| c.len() == 256 / n));
        let stats = cell_stats(&f);
        for (c, &dm) in cells.iter().zip(&stats.diameters) {
            prop_assert!((set_diameter(c, &spec).unwrap() - dm).abs() < 1e-12);
        }
    }

    #[test]
    fn intersection_sums_equal_capacity(seed in any::<u64>(), k in 0usize..3) {
        let spec = TorusSpec::new(3, 2.0, 8).unwrap();
        let n = [2, 8, 32][k];
        let p = sample_conditioned_pair(&spec, n, seed, 1).unwrap();
        let g = build_intersection_graph(
            &allocate(&p.first, Scheme::Stable).unwrap(),
            &allocate(&p.second, Scheme::Dyadic).unwrap(),
        ).unwrap();
        prop_assert!(g.sum_violations().is_empty());
        prop_assert!(g.vertex_sums().iter().all(|&s| s == g.capacity()));
        prop_assert_eq!(g.edges().iter().map(|e| e.weight).sum::<u64>(), 512);
    }

    #[test]
    fn stable_baseline_has_no_blocking_pair(seed in any::<u64>(), n in 1usize..12) {
        let spec = TorusSpec::new(2, 5.0, 2 * 3 * 4 * 5 * 7 * 11).unwrap();
        let n = if n == 9 { 3 } else if n == 8 { 4 } else { n };
        let p = sample_conditioned_pair(&spec, n, seed, 0).unwrap();
        prop_assert!(!has_blocking_pair(&p, &stable_matching(&p).unwrap()));
    }
}
