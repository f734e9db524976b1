//! Cell-intersection graph, its fractional perfect matching, and exact
//! rounding to a perfect matching.
//!
//! Weights are integer site counts; the fractional value of an edge is its
//! weight over the shared denominator `M / n`, which is never divided out.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationField;
use crate::error::{Error, Result};
use crate::point_process::ConfigPair;

/// A vertex of the bipartite graph: a point of process 1 or of process 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vertex {
    Left(usize),
    Right(usize),
}

impl Vertex {
    /// Position in a combined `[left..., right...]` vertex array of size `2n`.
    pub fn flat(self, n: usize) -> usize {
        match self {
            Vertex::Left(i) => i,
            Vertex::Right(j) => n + j,
        }
    }

    pub fn from_flat(v: usize, n: usize) -> Self {
        if v < n {
            Vertex::Left(v)
        } else {
            Vertex::Right(v - n)
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Left(i) => write!(f, "left {i}"),
            Vertex::Right(j) => write!(f, "right {j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub left: usize,
    pub right: usize,
    /// Number of shared sites.
    pub weight: u64,
}

/// Bipartite graph joining points whose cells share at least one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionGraph {
    n: usize,
    capacity: u64,
    /// Sorted by `(left, right)`.
    edges: Vec<Edge>,
}

impl IntersectionGraph {
    /// Builds a graph from explicit edges; the edge list is sorted and must
    /// not contain duplicates or zero weights.
    pub fn from_edges(n: usize, capacity: u64, mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_unstable();
        for w in edges.windows(2) {
            if (w[0].left, w[0].right) == (w[1].left, w[1].right) {
                return Err(Error::Domain(format!("duplicate edge ({}, {})", w[0].left, w[0].right)));
            }
        }
        if let Some(e) = edges.iter().find(|e| e.weight == 0 || e.left >= n || e.right >= n) {
            return Err(Error::Domain(format!(
                "edge ({}, {}) of weight {} is not a positive edge of a {n}-by-{n} graph",
                e.left, e.right, e.weight
            )));
        }
        Ok(Self { n, capacity, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Common vertex sum `M / n`.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [Edge] {
        &mut self.edges
    }

    /// Incident weight sum of every vertex, indexed as [`Vertex::flat`].
    pub fn vertex_sums(&self) -> Vec<u64> {
        let mut sums = vec![0; 2 * self.n];
        for e in &self.edges {
            sums[e.left] += e.weight;
            sums[self.n + e.right] += e.weight;
        }
        sums
    }

    /// Vertices whose incident weights do not sum to the capacity.
    pub fn sum_violations(&self) -> Vec<Vertex> {
        self.vertex_sums()
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s != self.capacity)
            .map(|(v, _)| Vertex::from_flat(v, self.n))
            .collect()
    }

    /// Adjacency over flat vertex ids; entries are edge indices in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); 2 * self.n];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.left].push(k);
            adj[self.n + e.right].push(k);
        }
        adj
    }

    /// `left_index,right_index,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "left_index,right_index,weight")?;
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.left, e.right, e.weight)?;
        }
        Ok(())
    }
}

/// Joins `x` and `y` when cell `x` of `field1` and cell `y` of `field2` share
/// sites, weighted by the number of shared sites.
pub fn build_intersection_graph(field1: &AllocationField, field2: &AllocationField) -> Result<IntersectionGraph> {
    if field1.spec() != field2.spec() {
        return Err(Error::Domain("allocation fields live on different tori".into()));
    }
    if field1.num_points() != field2.num_points() {
        return Err(Error::Domain(format!(
            "allocation fields have {} and {} points",
            field1.num_points(),
            field2.num_points()
        )));
    }
    let n = field1.num_points() as u64;
    let mut keys: Vec<u64> =
        field1.owners().iter().zip(field2.owners()).map(|(&a, &b)| a as u64 * n + b as u64).collect();
    keys.sort_unstable();
    let edges = keys
        .chunk_by(|a, b| a == b)
        .map(|run| Edge { left: (run[0] / n) as usize, right: (run[0] % n) as usize, weight: run.len() as u64 })
        .collect();
    Ok(IntersectionGraph { n: n as usize, capacity: field1.capacity() as u64, edges })
}

/// Intersection weights read as fractions over the shared denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalMatching {
    graph: IntersectionGraph,
}

impl FractionalMatching {
    pub fn graph(&self) -> &IntersectionGraph {
        &self.graph
    }

    pub fn denominator(&self) -> u64 {
        self.graph.capacity
    }

    /// `(numerator, denominator)` of edge `k`.
    pub fn value(&self, k: usize) -> (u64, u64) {
        (self.graph.edges[k].weight, self.graph.capacity)
    }

    pub fn is_integral(&self) -> bool {
        self.graph.edges.iter().all(|e| e.weight == self.graph.capacity)
    }
}

/// Validates that every vertex sums to exactly one.
pub fn as_fractional(graph: IntersectionGraph) -> Result<FractionalMatching> {
    if graph.capacity == 0 {
        return Err(Error::Integrity("denominator M/n is zero".into()));
    }
    if let Some(e) = graph.edges.iter().find(|e| e.weight == 0) {
        return Err(Error::Integrity(format!("edge ({}, {}) has zero weight", e.left, e.right)));
    }
    let bad = graph.sum_violations();
    if !bad.is_empty() {
        let sums = graph.vertex_sums();
        let listed: Vec<String> = bad.iter().map(|v| format!("{v} (sum {})", sums[v.flat(graph.n)])).collect();
        return Err(Error::Integrity(format!("vertex sums differ from {}: {}", graph.capacity, listed.join(", "))));
    }
    Ok(FractionalMatching { graph })
}

/// How a rotation chooses which alternating class of the cycle to decrease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationPolicy {
    /// Decrease the class whose rotation lowers (or least raises) the total
    /// weighted edge length.
    #[default]
    MinLength,
    /// Decrease the class containing the smallest edge in `(left, right)` order.
    First,
}

impl RotationPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RotationPolicy::MinLength => "min-length",
            RotationPolicy::First => "first",
        }
    }
}

impl std::str::FromStr for RotationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-length" => Ok(RotationPolicy::MinLength),
            "first" => Ok(RotationPolicy::First),
            other => Err(Error::Config(format!("unknown rotation policy {other:?}"))),
        }
    }
}

/// A bijection from process-1 points to process-2 points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfectMatching {
    /// `partner[x]` is the process-2 point matched to process-1 point `x`.
    pub partner: Vec<usize>,
    /// Torus distance of every matched pair, indexed by the left point.
    pub distances: Vec<f64>,
    /// Name of the procedure that produced the matching.
    pub provenance: String,
}

impl PerfectMatching {
    /// Checks bijectivity and measures pair distances.
    pub fn new(pair: &ConfigPair, partner: Vec<usize>, provenance: impl Into<String>) -> Result<Self> {
        let n = pair.len();
        if partner.len() != n {
            return Err(Error::Integrity(format!("matching covers {} of {n} points", partner.len())));
        }
        let mut taken = vec![false; n];
        for (x, &y) in partner.iter().enumerate() {
            if y >= n || std::mem::replace(&mut taken[y], true) {
                return Err(Error::Integrity(format!("left {x} maps to right {y}, which is invalid or taken")));
            }
        }
        let spec = pair.spec();
        let distances = partner
            .iter()
            .enumerate()
            .map(|(x, &y)| spec.distance_unchecked(pair.first.point(x), pair.second.point(y)))
            .collect();
        Ok(Self { partner, distances, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.distances.iter().sum()
    }

    /// Whether every matched pair is an edge of `graph`.
    pub fn supported_by(&self, graph: &IntersectionGraph) -> bool {
        self.partner
            .iter()
            .enumerate()
            .all(|(x, &y)| graph.edges.binary_search_by(|e| (e.left, e.right).cmp(&(x, y))).is_ok())
    }

    /// `left_index,right_index,distance` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "left_index,right_index,distance")?;
        for (x, (&y, dist)) in self.partner.iter().zip(&self.distances).enumerate() {
            writeln!(out, "{x},{y},{dist}")?;
        }
        Ok(())
    }
}

/// Result of rounding, with the number of cycle rotations performed.
#[derive(Debug, Clone, PartialEq)]
pub struct Rounding {
    pub matching: PerfectMatching,
    pub rotations: usize,
    pub initial_edges: usize,
}

/// Rounds a fractional perfect matching to a perfect matching inside its support.
///
/// While fractional edges (`0 < w < M/n`) remain, a cycle of fractional edges
/// is found, its edges are split into the two alternating classes, and one
/// class is decreased by its minimum weight while the other is increased by
/// the same amount. Vertex sums are unchanged and at least one edge drops to
/// zero, so at most as many rotations occur as there are edges. An edge that
/// reaches `M/n` is matched and its endpoints retire.
pub fn round_to_perfect(fm: &FractionalMatching, pair: &ConfigPair, policy: RotationPolicy) -> Result<Rounding> {
    let graph = &fm.graph;
    let n = graph.n;
    if pair.len() != n {
        return Err(Error::Domain(format!("matching has {n} vertices per side, pair has {}", pair.len())));
    }
    let bad = graph.sum_violations();
    if !bad.is_empty() {
        return Err(Error::Integrity(format!("fractional matching invalid at {}", bad[0])));
    }
    let cap = graph.capacity;
    let spec = pair.spec();
    let lengths: Vec<f64> = graph
        .edges
        .iter()
        .map(|e| spec.distance_unchecked(pair.first.point(e.left), pair.second.point(e.right)))
        .collect();
    let mut weight: Vec<u64> = graph.edges.iter().map(|e| e.weight).collect();
    let total: u64 = weight.iter().sum();
    let is_fractional = |w: u64| w > 0 && w < cap;

    let mut adj = graph.adjacency();
    for list in adj.iter_mut() {
        list.retain(|&k| is_fractional(weight[k]));
    }
    let endpoints = |k: usize| (graph.edges[k].left, n + graph.edges[k].right);

    let mut rotations = 0;
    let mut cursor = 0;
    let mut pos = vec![usize::MAX; 2 * n];
    loop {
        while cursor < 2 * n && adj[cursor].is_empty() {
            cursor += 1;
        }
        if cursor == 2 * n {
            break;
        }
        // walk without immediately reusing the arriving edge until a vertex repeats
        let mut path_vertices = vec![cursor];
        let mut path_edges: Vec<usize> = Vec::new();
        pos[cursor] = 0;
        let mut v = cursor;
        let mut arrived: Option<usize> = None;
        let start = loop {
            let next_edge = adj[v].iter().copied().find(|&k| Some(k) != arrived).ok_or_else(|| {
                Error::Invariant(format!("vertex {} has a single fractional edge", Vertex::from_flat(v, n)))
            })?;
            let (a, b) = endpoints(next_edge);
            let u = if a == v { b } else { a };
            path_edges.push(next_edge);
            if pos[u] != usize::MAX {
                break pos[u];
            }
            pos[u] = path_vertices.len();
            path_vertices.push(u);
            arrived = Some(next_edge);
            v = u;
        };
        for &u in &path_vertices {
            pos[u] = usize::MAX;
        }
        let cycle = &path_edges[start..];
        if !cycle.len().is_multiple_of(2) || cycle.len() < 4 {
            return Err(Error::Invariant(format!("found a cycle of length {}", cycle.len())));
        }

        let class_min = |parity: usize| cycle.iter().skip(parity).step_by(2).map(|&k| weight[k]).min().unwrap();
        let class_len = |parity: usize| cycle.iter().skip(parity).step_by(2).map(|&k| lengths[k]).sum::<f64>();
        let smallest_edge = cycle.iter().enumerate().min_by_key(|&(_, &k)| k).map(|(i, _)| i % 2).unwrap();
        let decrease = match policy {
            RotationPolicy::First => smallest_edge,
            RotationPolicy::MinLength => {
                let change = |p: usize| class_min(p) as f64 * (class_len(1 - p) - class_len(p));
                let (c0, c1) = (change(0), change(1));
                if c0 < c1 {
                    0
                } else if c1 < c0 {
                    1
                } else {
                    smallest_edge
                }
            }
        };
        let delta = class_min(decrease);
        for (i, &k) in cycle.iter().enumerate() {
            if i % 2 == decrease {
                weight[k] -= delta;
            } else {
                weight[k] += delta;
            }
        }
        rotations += 1;
        if rotations > graph.edges.len() {
            return Err(Error::Invariant("rotation count exceeded the edge count".into()));
        }
        for &k in cycle {
            if !is_fractional(weight[k]) {
                let (a, b) = endpoints(k);
                adj[a].retain(|&j| j != k);
                adj[b].retain(|&j| j != k);
            }
        }
        debug_assert_eq!(weight.iter().sum::<u64>(), total);
    }

    let mut partner = vec![usize::MAX; n];
    for (k, e) in graph.edges.iter().enumerate() {
        if weight[k] == cap {
            partner[e.left] = e.right;
        } else if weight[k] != 0 {
            return Err(Error::Invariant(format!("edge ({}, {}) left fractional", e.left, e.right)));
        }
    }
    let matching = PerfectMatching::new(pair, partner, format!("rounding/{}", policy.name()))?;
    Ok(Rounding { matching, rotations, initial_edges: graph.edges.len() })
}

/// Connected components of the support graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub count: usize,
    /// Component sizes in vertices, largest first.
    pub sizes: Vec<usize>,
}

pub fn support_connectivity_report(graph: &IntersectionGraph) -> ComponentReport {
    let adj = graph.adjacency();
    let n = graph.n;
    let mut seen = vec![false; 2 * n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for s in 0..2 * n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        queue.push_back(s);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            for &k in &adj[v] {
                let e = graph.edges[k];
                for u in [e.left, n + e.right] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ComponentReport { count: sizes.len(), sizes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{stable_allocation, Scheme};
    use crate::point_process::{sample_conditioned_pair, PointConfig, ProcessLabel};
    use crate::torus::TorusSpec;

    fn diagonal(n: usize, cap: u64) -> IntersectionGraph {
        IntersectionGraph::from_edges(n, cap, (0..n).map(|i| Edge { left: i, right: i, weight: cap }).collect())
            .unwrap()
    }

    #[test]
    fn same_field_twice_gives_the_diagonal() {
        let s = TorusSpec::new(2, 4.0, 16).unwrap();
        let p = sample_conditioned_pair(&s, 16, 1, 0).unwrap();
        let f = stable_allocation(&p.first).unwrap();
        let g = build_intersection_graph(&f, &f).unwrap();
        assert_eq!(g, diagonal(16, 16));
        let report = support_connectivity_report(&g);
        assert_eq!(report.count, 16);
        assert!(report.sizes.iter().all(|&s| s == 2));
        let fm = as_fractional(g).unwrap();
        assert!(fm.is_integral());
        assert_eq!(fm.value(3), (16, 16));
    }

    #[test]
    fn single_pair_graph() {
        let s = TorusSpec::new(2, 1.0, 4).unwrap();
        let p = sample_conditioned_pair(&s, 1, 2, 0).unwrap();
        let g = build_intersection_graph(&stable_allocation(&p.first).unwrap(), &stable_allocation(&p.second).unwrap())
            .unwrap();
        assert_eq!(g.edges(), &[Edge { left: 0, right: 0, weight: 16 }]);
        assert_eq!(support_connectivity_report(&g).count, 1);
        let r = round_to_perfect(&as_fractional(g).unwrap(), &p, RotationPolicy::MinLength).unwrap();
        assert_eq!(r.matching.partner, vec![0]);
        assert_eq!(r.rotations, 0);
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let a = TorusSpec::new(2, 1.0, 4).unwrap();
        let b = TorusSpec::new(2, 2.0, 4).unwrap();
        let fa = AllocationField::from_owners(a, vec![0; 16], 1, Scheme::Stable).unwrap();
        let fb = AllocationField::from_owners(b, vec![0; 16], 1, Scheme::Stable).unwrap();
        assert!(build_intersection_graph(&fa, &fb).is_err());
    }

    #[test]
    fn corrupted_weight_fails_on_two_vertices() {
        let s = TorusSpec::new(2, 4.0, 32).unwrap();
        for seed in 0..10 {
            let p = sample_conditioned_pair(&s, 16, seed, 0).unwrap();
            let g =
                build_intersection_graph(&stable_allocation(&p.first).unwrap(), &stable_allocation(&p.second).unwrap())
                    .unwrap();
            assert!(as_fractional(g.clone()).is_ok());
            let mut bad = g.clone();
            let k = seed as usize % bad.edges().len();
            bad.edges_mut()[k].weight += 1;
            let e = bad.edges()[k];
            assert_eq!(bad.sum_violations(), vec![Vertex::Left(e.left), Vertex::Right(e.right)]);
            let msg = as_fractional(bad).unwrap_err().to_string();
            assert!(msg.contains(&format!("left {}", e.left)) && msg.contains(&format!("right {}", e.right)));
        }
    }

    fn two_by_two() -> (ConfigPair, FractionalMatching) {
        // lefts at x = 1, 3; rights at x = 1.5, 5 on an 8 x 8 torus
        let s = TorusSpec::new(2, 8.0, 8).unwrap();
        let l = PointConfig::from_points(s, ProcessLabel::First, &[vec![1.0, 1.0], vec![3.0, 1.0]]).unwrap();
        let r = PointConfig::from_points(s, ProcessLabel::Second, &[vec![1.5, 2.0], vec![5.0, 1.0]]).unwrap();
        let pair = ConfigPair::new(l, r).unwrap();
        let edges = (0..2).flat_map(|a| (0..2).map(move |b| Edge { left: a, right: b, weight: 16 })).collect();
        let fm = as_fractional(IntersectionGraph::from_edges(2, 32, edges).unwrap()).unwrap();
        (pair, fm)
    }

    #[test]
    fn two_by_two_rounding_matches_enumeration() {
        let (pair, fm) = two_by_two();
        // the two perfect matchings and their costs
        let spec = pair.spec();
        let cost = |perm: [usize; 2]| -> f64 {
            (0..2).map(|x| spec.distance_unchecked(pair.first.point(x), pair.second.point(perm[x]))).sum()
        };
        let (identity, swap) = (cost([0, 1]), cost([1, 0]));
        assert!(identity < swap);

        let r = round_to_perfect(&fm, &pair, RotationPolicy::MinLength).unwrap();
        assert_eq!(r.matching.partner, vec![0, 1]);
        assert_eq!(r.rotations, 1);

        // the walk visits edges (0,0), (1,0), (1,1), (0,1); edge (0,0) is
        // the smallest, so "first" decreases its class and keeps the swap
        let r = round_to_perfect(&fm, &pair, RotationPolicy::First).unwrap();
        assert_eq!(r.matching.partner, vec![1, 0]);
        assert!((r.matching.total_cost() - swap).abs() < 1e-12);
    }

    #[test]
    fn integral_input_is_returned_unchanged() {
        let s = TorusSpec::new(2, 4.0, 4).unwrap();
        let p = sample_conditioned_pair(&s, 4, 3, 0).unwrap();
        let g = IntersectionGraph::from_edges(
            4,
            4,
            vec![
                Edge { left: 0, right: 2, weight: 4 },
                Edge { left: 1, right: 0, weight: 4 },
                Edge { left: 2, right: 3, weight: 4 },
                Edge { left: 3, right: 1, weight: 4 },
            ],
        )
        .unwrap();
        for policy in [RotationPolicy::MinLength, RotationPolicy::First] {
            let r = round_to_perfect(&as_fractional(g.clone()).unwrap(), &p, policy).unwrap();
            assert_eq!(r.matching.partner, vec![2, 0, 3, 1]);
            assert_eq!(r.rotations, 0);
        }
    }

    #[test]
    fn invalid_fractional_matching_is_refused() {
        let (pair, fm) = two_by_two();
        let mut g = fm.graph().clone();
        g.edges_mut()[0].weight = 15;
        let forged = FractionalMatching { graph: g };
        assert!(matches!(round_to_perfect(&forged, &pair, RotationPolicy::First), Err(Error::Integrity(_))));
    }

    #[test]
    fn perfect_matching_rejects_non_bijections() {
        let (pair, _) = two_by_two();
        assert!(PerfectMatching::new(&pair, vec![0, 0], "x").is_err());
        assert!(PerfectMatching::new(&pair, vec![0], "x").is_err());
        assert!(PerfectMatching::new(&pair, vec![0, 2], "x").is_err());
        let m = PerfectMatching::new(&pair, vec![1, 0], "x").unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("left_index,right_index,distance\n0,1,"));
    }
}
