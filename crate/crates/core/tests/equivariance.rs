use torusmatch::allocation::{allocate, Scheme};
use torusmatch::fractional::{as_fractional, build_intersection_graph, round_to_perfect, RotationPolicy};
use torusmatch::point_process::sample_conditioned_pair;
use torusmatch::torus::{SiteIndex, TorusSpec};

fn shifted_site(spec: &TorusSpec, s: usize, steps: &[i64]) -> usize {
    let g = spec.grid() as i64;
    let t: Vec<usize> = spec
        .site_tuple(SiteIndex(s))
        .unwrap()
        .iter()
        .zip(steps)
        .map(|(&c, &k)| (c as i64 + k).rem_euclid(g) as usize)
        .collect();
    spec.site_index(&t).unwrap().0
}

fn check(scheme: Scheme, spec: TorusSpec, n: usize, steps: &[i64], seed: u64) {
    let p = sample_conditioned_pair(&spec, n, seed, 0).unwrap();
    let q = p.first.translated_by_sites(steps).unwrap();
    let a = allocate(&p.first, scheme).unwrap();
    let b = allocate(&q, scheme).unwrap();
    for s in 0..spec.num_sites() {
        assert_eq!(
            a.owner(SiteIndex(s)),
            b.owner(SiteIndex(shifted_site(&spec, s, steps))),
            "{scheme:?} seed {seed} steps {steps:?} site {s}"
        );
    }
}

#[test]
fn stable_allocation_commutes_with_grid_shifts() {
    let spec = TorusSpec::new(2, 4.0, 24).unwrap();
    for seed in 0..10 {
        let steps = [seed as i64 * 5 - 7, 13 - seed as i64 * 3];
        check(Scheme::Stable, spec, 36, &steps, seed);
    }
    let spec = TorusSpec::new(3, 2.0, 8).unwrap();
    check(Scheme::Stable, spec, 16, &[3, -2, 5], 99);
}

#[test]
fn dyadic_allocation_commutes_with_half_period_shifts() {
    let spec = TorusSpec::new(2, 4.0, 32).unwrap();
    for seed in 0..6 {
        let steps = [16 * (seed as i64 % 2), -16 * (seed as i64 / 3)];
        check(Scheme::Dyadic, spec, 64, &steps, seed);
    }
}

#[test]
fn rounded_matching_is_unchanged_by_translation() {
    let spec = TorusSpec::new(2, 4.0, 16).unwrap();
    for seed in 0..10 {
        let p = sample_conditioned_pair(&spec, 16, seed, 0).unwrap();
        let steps = [seed as i64 + 1, 2 * seed as i64 - 3];
        let first = p.first.translated_by_sites(&steps).unwrap();
        let second = p.second.translated_by_sites(&steps).unwrap();
        let q = torusmatch::point_process::ConfigPair::new(first, second).unwrap();
        for policy in [RotationPolicy::MinLength, RotationPolicy::First] {
            let m = |pair: &torusmatch::point_process::ConfigPair| {
                let f1 = allocate(&pair.first, Scheme::Stable).unwrap();
                let f2 = allocate(&pair.second, Scheme::Stable).unwrap();
                let fm = as_fractional(build_intersection_graph(&f1, &f2).unwrap()).unwrap();
                round_to_perfect(&fm, pair, policy).unwrap().matching.partner
            };
            assert_eq!(m(&p), m(&q), "seed {seed} {policy:?}");
        }
    }
}
