//! Reference matchings: two-color stable matching, minimum-cost assignment
//! and greedy nearest matching.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fractional::PerfectMatching;
use crate::point_process::ConfigPair;

/// Default size cap for [`optimal_assignment`].
pub const DEFAULT_ASSIGNMENT_CAP: usize = 2048;

fn distance_matrix(pair: &ConfigPair) -> Vec<f64> {
    let n = pair.len();
    let spec = pair.spec();
    let mut cost = Vec::with_capacity(n * n);
    for x in pair.first.points() {
        for y in pair.second.points() {
            cost.push(spec.distance_unchecked(x, y));
        }
    }
    cost
}

/// Unique stable matching by repeatedly pairing the mutually nearest
/// unmatched points. Distance ties go to the smaller (left, right) pair.
pub fn stable_matching(pair: &ConfigPair) -> Result<PerfectMatching> {
    let n = pair.len();
    let cost = distance_matrix(pair);
    let mut order: Vec<u32> = (0..(n * n) as u32).collect();
    // index order is (left, right) lexicographic, so it breaks ties
    order.sort_unstable_by(|&a, &b| cost[a as usize].total_cmp(&cost[b as usize]).then(a.cmp(&b)));
    let mut partner = vec![usize::MAX; n];
    let mut right_taken = vec![false; n];
    let mut matched = 0;
    for k in order {
        let (x, y) = (k as usize / n, k as usize % n);
        if partner[x] == usize::MAX && !right_taken[y] {
            partner[x] = y;
            right_taken[y] = true;
            matched += 1;
            if matched == n {
                break;
            }
        }
    }
    PerfectMatching::new(pair, partner, "baseline/stable")
}

/// Left points in index order each take their nearest free right point.
pub fn greedy_nearest(pair: &ConfigPair) -> Result<PerfectMatching> {
    let n = pair.len();
    let cost = distance_matrix(pair);
    let mut taken = vec![false; n];
    let mut partner = Vec::with_capacity(n);
    for x in 0..n {
        let row = &cost[x * n..(x + 1) * n];
        let y = (0..n)
            .filter(|&y| !taken[y])
            .min_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)))
            .ok_or_else(|| Error::Invariant("no free right point left".into()))?;
        taken[y] = true;
        partner.push(y);
    }
    PerfectMatching::new(pair, partner, "baseline/greedy")
}

/// Minimum total torus distance matching.
///
/// Shortest augmenting paths with vertex potentials (Hungarian method), one
/// left vertex at a time, `O(n^3)`.
pub fn optimal_assignment(pair: &ConfigPair, cap: usize) -> Result<PerfectMatching> {
    let n = pair.len();
    if n > cap {
        return Err(Error::Refused(format!("optimal assignment capped at {cap} points, got {n}")));
    }
    let cost = distance_matrix(pair);
    let partner = hungarian(n, &cost);
    PerfectMatching::new(pair, partner, "baseline/optimal")
}

/// Returns `assignment[row] = column` minimizing the sum of `cost[row * n + column]`.
fn hungarian(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based rows and columns; column 0 is a virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Whether some left-right pair strictly prefers each other to their partners.
pub fn has_blocking_pair(pair: &ConfigPair, m: &PerfectMatching) -> bool {
    let spec = pair.spec();
    let n = pair.len();
    let mut left_of = vec![0; n];
    for (x, &y) in m.partner.iter().enumerate() {
        left_of[y] = x;
    }
    (0..n).any(|x| {
        (0..n).any(|y| {
            let dxy = spec.distance_unchecked(pair.first.point(x), pair.second.point(y));
            dxy.partial_cmp(&m.distances[x]) == Some(Ordering::Less)
                && dxy.partial_cmp(&m.distances[left_of[y]]) == Some(Ordering::Less)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{sample_conditioned_pair, PointConfig, ProcessLabel};
    use crate::torus::TorusSpec;

    fn line_pair(lefts: &[f64], rights: &[f64]) -> ConfigPair {
        let s = TorusSpec::new(2, 20.0, 20).unwrap();
        let mk = |xs: &[f64], label| {
            let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 10.0]).collect();
            PointConfig::from_points(s, label, &pts).unwrap()
        };
        ConfigPair::new(mk(lefts, ProcessLabel::First), mk(rights, ProcessLabel::Second)).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn single_pair() {
        let s = TorusSpec::new(3, 2.0, 4).unwrap();
        let p = sample_conditioned_pair(&s, 1, 1, 0).unwrap();
        assert_eq!(stable_matching(&p).unwrap().partner, vec![0]);
        assert_eq!(greedy_nearest(&p).unwrap().partner, vec![0]);
        assert_eq!(optimal_assignment(&p, 8).unwrap().partner, vec![0]);
    }

    #[test]
    fn alternating_line_matches_adjacent_pairs() {
        // r b r b at unit spacing; equal distances resolve by (left, right)
        let p = line_pair(&[4.0, 6.0], &[5.0, 7.0]);
        let m = stable_matching(&p).unwrap();
        assert_eq!(m.partner, vec![0, 1]);
        assert!(!has_blocking_pair(&p, &m));
    }

    #[test]
    fn stable_matching_has_no_blocking_pair() {
        // 60^2 sites are divisible by every n up to 6
        let s = TorusSpec::new(2, 3.0, 60).unwrap();
        for seed in 0..200 {
            let n = 1 + seed as usize % 6;
            let p = sample_conditioned_pair(&s, n, seed, 0).unwrap();
            let m = stable_matching(&p).unwrap();
            assert!(!has_blocking_pair(&p, &m), "seed {seed}");
        }
    }

    #[test]
    fn optimal_matches_factorial_brute_force() {
        for seed in 0..40 {
            let n = 1 + seed as usize % 7;
            let s = TorusSpec::new(2, 2.0, 8 * n).unwrap();
            let p = sample_conditioned_pair(&s, n, seed, 0).unwrap();
            let spec = p.spec();
            let best = permutations(n)
                .into_iter()
                .map(|perm| {
                    (0..n).map(|x| spec.distance_unchecked(p.first.point(x), p.second.point(perm[x]))).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let opt = optimal_assignment(&p, DEFAULT_ASSIGNMENT_CAP).unwrap();
            assert!((opt.total_cost() - best).abs() < 1e-9, "seed {seed}");
            let greedy = greedy_nearest(&p).unwrap();
            assert!(greedy.total_cost() >= opt.total_cost() - 1e-9);
            let stable = stable_matching(&p).unwrap();
            assert!(stable.total_cost() >= opt.total_cost() - 1e-9);
        }
    }

    #[test]
    fn jittered_copies_match_by_identity() {
        let s = TorusSpec::new(2, 8.0, 16).unwrap();
        let p = sample_conditioned_pair(&s, 16, 4, 0).unwrap();
        // move each point a tenth of the way to its site center: at most
        // 0.071 grid steps, and the point stays inside its site
        let shifted: Vec<Vec<f64>> = p
            .first
            .points()
            .enumerate()
            .map(|(i, x)| {
                let c = s.site_coordinates(p.first.home_site(i)).unwrap();
                x.iter().zip(&c).map(|(a, b)| a + 0.1 * (b - a)).collect()
            })
            .collect();
        let second = PointConfig::from_points(s, ProcessLabel::Second, &shifted).unwrap();
        let q = ConfigPair::new(p.first.clone(), second).unwrap();
        let identity: Vec<usize> = (0..16).collect();
        let opt = optimal_assignment(&q, 64).unwrap();
        assert_eq!(opt.partner, identity);
        let expected: f64 = (0..16).map(|i| q.spec().distance_unchecked(q.first.point(i), q.second.point(i))).sum();
        assert!((opt.total_cost() - expected).abs() < 1e-12);
        assert_eq!(greedy_nearest(&q).unwrap().partner, identity);
        assert_eq!(stable_matching(&q).unwrap().partner, identity);
    }

    #[test]
    fn assignment_cap_is_enforced() {
        let s = TorusSpec::new(2, 2.0, 4).unwrap();
        let p = sample_conditioned_pair(&s, 4, 1, 0).unwrap();
        assert!(matches!(optimal_assignment(&p, 3), Err(Error::Refused(_))));
    }
}
