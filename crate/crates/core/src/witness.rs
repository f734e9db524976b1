//! Finite hyperfiniteness witness for the cell-intersection graph.
//!
//! A proximity graph on all configuration points is pruned of high-degree
//! vertices and greedily colored; the largest color class is a set `X` of
//! points more than `2N` apart, whose Voronoi cells partition the sites. The
//! removal set `U1` holds vertices with a long intersection edge and `U2`
//! the remaining vertices whose cell touches a partition boundary. Removing
//! both leaves components that each sit inside a single partition class.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationField, OffsetTable};
use crate::error::{Error, Result};
use crate::fractional::{IntersectionGraph, Vertex};
use crate::point_process::ConfigPair;
use crate::torus::TorusSpec;

/// Target density `epsilon`, edge reach `r`, separation scale `N` and degree cutoff `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessParams {
    pub epsilon: f64,
    pub reach: f64,
    pub separation: f64,
    /// `None` selects [`default_degree_cutoff`] per realization.
    pub degree_cutoff: Option<usize>,
}

impl WitnessParams {
    /// Validates the parameters, including `2^d r / N < epsilon / 2`.
    pub fn new(epsilon: f64, reach: f64, separation: f64, degree_cutoff: Option<usize>, dim: usize) -> Result<Self> {
        let params = Self { epsilon, reach, separation, degree_cutoff };
        params.validate(dim)?;
        Ok(params)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if !(self.reach.is_finite() && self.reach > 0.0) {
            return Err(Error::Config(format!("reach r = {} must be positive", self.reach)));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::Config(format!("separation N = {} must be positive", self.separation)));
        }
        if self.degree_cutoff == Some(0) {
            return Err(Error::Config("degree cutoff D must be at least 1".into()));
        }
        let bound = boundary_bound(self.reach, self.separation, dim);
        if bound >= self.epsilon / 2.0 {
            return Err(Error::Config(format!(
                "2^d r / N = {bound} must be below epsilon / 2 = {}",
                self.epsilon / 2.0
            )));
        }
        Ok(())
    }
}

/// `2^d r / N`.
pub fn boundary_bound(reach: f64, separation: f64, dim: usize) -> f64 {
    2f64.powi(dim as i32) * reach / separation
}

/// Empirical `1 - epsilon/2` quantile: at most a fraction `epsilon/2` of the
/// spans exceed it.
pub fn calibrate_reach(spans: &[f64], epsilon: f64) -> Result<f64> {
    if spans.is_empty() {
        return Err(Error::Witness("no spans to calibrate from".into()));
    }
    let mut sorted = spans.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q = 1.0 - epsilon / 2.0;
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let r = sorted[k - 1];
    // a zero reach would make every span "long"
    Ok(if r > 0.0 { r } else { f64::MIN_POSITIVE })
}

/// Smallest multiple of the grid spacing with `2^d r / N < epsilon / 2`.
pub fn derive_separation(reach: f64, epsilon: f64, spec: &TorusSpec) -> f64 {
    let h = spec.spacing();
    let d = spec.dim();
    let mut k = (2f64.powi(d as i32 + 1) * reach / (epsilon * h)).floor().max(1.0);
    while boundary_bound(reach, k * h, d) >= epsilon / 2.0 {
        k += 1.0;
    }
    k * h
}

/// Undirected graph on the merged point list, as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityGraph {
    pub adj: Vec<Vec<usize>>,
}

impl ProximityGraph {
    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Process-1 points followed by process-2 points.
pub fn merged_points(pair: &ConfigPair) -> Vec<&[f64]> {
    pair.first.points().chain(pair.second.points()).collect()
}

/// Joins two points when their torus distance is at most `2N`.
pub fn build_proximity_graph(points: &[&[f64]], spec: &TorusSpec, separation: f64) -> Result<ProximityGraph> {
    if separation.is_nan() || separation <= 0.0 {
        return Err(Error::Domain(format!("separation N = {separation} must be positive")));
    }
    let limit = 2.0 * separation;
    let mut adj = vec![Vec::new(); points.len()];
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if spec.distance_unchecked(points[i], points[j]) <= limit {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    Ok(ProximityGraph { adj })
}

/// Smallest `D` for which at least half of the vertices have degree below `D`.
pub fn default_degree_cutoff(graph: &ProximityGraph) -> usize {
    let mut degrees: Vec<usize> = graph.adj.iter().map(Vec::len).collect();
    if degrees.is_empty() {
        return 1;
    }
    degrees.sort_unstable();
    let half = degrees.len().div_ceil(2);
    degrees[half - 1] + 1
}

/// Vertices of degree below `D`.
pub fn prune_high_degree(graph: &ProximityGraph, cutoff: usize) -> Result<Vec<usize>> {
    if cutoff == 0 {
        return Err(Error::Domain("degree cutoff D must be at least 1".into()));
    }
    let survivors: Vec<usize> = (0..graph.num_vertices()).filter(|&v| graph.degree(v) < cutoff).collect();
    if survivors.is_empty() {
        return Err(Error::Witness(format!("degree cutoff D = {cutoff} deletes every vertex")));
    }
    Ok(survivors)
}

/// Proper coloring of the subgraph induced on the survivors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    /// Color of every vertex; `None` for pruned vertices.
    pub colors: Vec<Option<usize>>,
    pub num_colors: usize,
}

impl Coloring {
    /// Vertices of each color.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); self.num_colors];
        for (v, c) in self.colors.iter().enumerate() {
            if let Some(c) = c {
                classes[*c].push(v);
            }
        }
        classes
    }
}

/// Sequential greedy coloring in vertex order; uses at most `Δ + 1` colors.
pub fn greedy_proper_coloring(graph: &ProximityGraph, survivors: &[usize]) -> Coloring {
    let mut colors: Vec<Option<usize>> = vec![None; graph.num_vertices()];
    let alive: HashSet<usize> = survivors.iter().copied().collect();
    let mut num_colors = 0;
    let mut used = Vec::new();
    let mut order = survivors.to_vec();
    order.sort_unstable();
    for v in order {
        used.clear();
        used.resize(graph.degree(v) + 1, false);
        for &u in &graph.adj[v] {
            if let Some(c) = colors[u] {
                if alive.contains(&u) && c < used.len() {
                    used[c] = true;
                }
            }
        }
        let c = used.iter().position(|&taken| !taken).expect("degree + 1 slots");
        colors[v] = Some(c);
        num_colors = num_colors.max(c + 1);
    }
    Coloring { colors, num_colors }
}

/// The largest color class (ties to the smaller color), checked to be more
/// than `2N` apart pairwise.
pub fn select_separated_set(
    coloring: &Coloring,
    points: &[&[f64]],
    spec: &TorusSpec,
    separation: f64,
) -> Result<Vec<usize>> {
    let classes = coloring.classes();
    let best = classes
        .into_iter()
        .enumerate()
        .max_by(|(ca, a), (cb, b)| a.len().cmp(&b.len()).then(cb.cmp(ca)))
        .map(|(_, class)| class)
        .filter(|class| !class.is_empty())
        .ok_or_else(|| Error::Witness("no colored vertex to select".into()))?;
    for (i, &a) in best.iter().enumerate() {
        for &b in &best[i + 1..] {
            let dist = spec.distance_unchecked(points[a], points[b]);
            if dist <= 2.0 * separation {
                return Err(Error::Witness(format!(
                    "selected points {a} and {b} are only {dist} apart; coloring is not proper"
                )));
            }
        }
    }
    Ok(best)
}

/// Class of every site: index into `centers` of the nearest center, ties to
/// the smaller index.
pub fn voronoi_partition(centers: &[&[f64]], spec: &TorusSpec) -> Result<Vec<u32>> {
    if centers.is_empty() {
        return Err(Error::Witness("Voronoi partition of an empty set".into()));
    }
    let h = spec.spacing();
    let d = spec.dim();
    let mut tuple = vec![0; d];
    let mut site = vec![0.0; d];
    let mut out = Vec::with_capacity(spec.num_sites());
    for s in 0..spec.num_sites() {
        spec.fill_tuple(s, &mut tuple);
        for (x, &c) in site.iter_mut().zip(&tuple) {
            *x = (c as f64 + 0.5) * h;
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, c) in centers.iter().enumerate() {
            let dist = spec.distance_unchecked(&site, c);
            if dist < best_dist {
                best = k;
                best_dist = dist;
            }
        }
        out.push(best as u32);
    }
    Ok(out)
}

/// Whether every site center within distance `N` of a center lies in that
/// center's class.
pub fn balls_contained(centers: &[&[f64]], partition: &[u32], spec: &TorusSpec, separation: f64) -> bool {
    let table = OffsetTable::get(spec);
    let h = spec.spacing();
    let d = spec.dim();
    // site centers within N of the point are within N + h sqrt(d)/2 of its site
    let grid_reach = separation / h + 0.5 * (d as f64).sqrt() + 1.0;
    let max_dist2 = (grid_reach * grid_reach).floor() as u64;
    let mut tuple = vec![0; d];
    let mut site = vec![0.0; d];
    centers.iter().enumerate().all(|(k, c)| {
        let home = match spec.site_of(c) {
            Ok(s) => s,
            Err(_) => return false,
        };
        let mut home_tuple = vec![0; d];
        spec.fill_tuple(home.0, &mut home_tuple);
        table.ball(&home_tuple, max_dist2).all(|s| {
            spec.fill_tuple(s, &mut tuple);
            for (x, &t) in site.iter_mut().zip(&tuple) {
                *x = (t as f64 + 0.5) * h;
            }
            spec.distance_unchecked(&site, c) > separation || partition[s] == k as u32
        })
    })
}

/// Sites with a grid neighbor in a different class.
pub fn boundary_sites(partition: &[u32], spec: &TorusSpec) -> Vec<bool> {
    let g = spec.grid();
    let d = spec.dim();
    let mut tuple = vec![0; d];
    (0..spec.num_sites())
        .map(|s| {
            spec.fill_tuple(s, &mut tuple);
            let mut stride = 1;
            for &c in tuple.iter() {
                let up = if c + 1 == g { s + stride - c * stride } else { s + stride };
                let down = if c == 0 { s + (g - 1) * stride } else { s - stride };
                if partition[up] != partition[s] || partition[down] != partition[s] {
                    return true;
                }
                stride *= g;
            }
            false
        })
        .collect()
}

/// Fraction of sites within distance `r` of a boundary site.
pub fn boundary_neighborhood_fraction(partition: &[u32], spec: &TorusSpec, reach: f64) -> f64 {
    let boundary = boundary_sites(partition, spec);
    let table = OffsetTable::get(spec);
    let radius = reach / spec.spacing();
    let max_dist2 = (radius * radius).floor() as u64;
    let mut near = vec![false; spec.num_sites()];
    let mut tuple = vec![0; spec.dim()];
    for (s, _) in boundary.iter().enumerate().filter(|(_, &b)| b) {
        spec.fill_tuple(s, &mut tuple);
        for t in table.ball(&tuple, max_dist2) {
            near[t] = true;
        }
    }
    near.iter().filter(|&&x| x).count() as f64 / spec.num_sites() as f64
}

/// Longest intersection edge at every vertex, indexed as [`Vertex::flat`].
pub fn max_edge_spans(graph: &IntersectionGraph, pair: &ConfigPair) -> Vec<f64> {
    let n = graph.n();
    let spec = pair.spec();
    let mut spans = vec![0.0f64; 2 * n];
    for e in graph.edges() {
        let len = spec.distance_unchecked(pair.first.point(e.left), pair.second.point(e.right));
        spans[e.left] = spans[e.left].max(len);
        spans[n + e.right] = spans[n + e.right].max(len);
    }
    spans
}

/// Per-vertex summary of which partition classes a cell touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellClasses {
    class: Option<u32>,
    multiple: bool,
    touches_boundary: bool,
}

fn cell_classes(
    field1: &AllocationField,
    field2: &AllocationField,
    partition: &[u32],
    boundary: &[bool],
) -> Vec<CellClasses> {
    let n = field1.num_points();
    let mut out = vec![CellClasses { class: None, multiple: false, touches_boundary: false }; 2 * n];
    for (s, (&a, &b)) in field1.owners().iter().zip(field2.owners()).enumerate() {
        for v in [a as usize, n + b as usize] {
            let entry = &mut out[v];
            match entry.class {
                None => entry.class = Some(partition[s]),
                Some(c) if c != partition[s] => entry.multiple = true,
                _ => {}
            }
            entry.touches_boundary |= boundary[s];
        }
    }
    out
}

/// Membership flags over the `2n` intersection-graph vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalSets {
    pub u1: Vec<bool>,
    pub u2: Vec<bool>,
}

impl RemovalSets {
    pub fn removed(&self, v: usize) -> bool {
        self.u1[v] || self.u2[v]
    }

    pub fn u1_vertices(&self, n: usize) -> Vec<Vertex> {
        flagged(&self.u1, n)
    }

    pub fn u2_vertices(&self, n: usize) -> Vec<Vertex> {
        flagged(&self.u2, n)
    }
}

fn flagged(flags: &[bool], n: usize) -> Vec<Vertex> {
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(v, _)| Vertex::from_flat(v, n)).collect()
}

/// `U1`: vertices with an intersection edge longer than `r`. `U2`: the other
/// vertices whose cell has a site on a partition boundary or spans several
/// classes.
pub fn compute_removal_sets(
    graph: &IntersectionGraph,
    pair: &ConfigPair,
    fields: (&AllocationField, &AllocationField),
    partition: &[u32],
    params: &WitnessParams,
) -> RemovalSets {
    let spec = pair.spec();
    let spans = max_edge_spans(graph, pair);
    let u1: Vec<bool> = spans.iter().map(|&s| s > params.reach).collect();
    let boundary = boundary_sites(partition, spec);
    let classes = cell_classes(fields.0, fields.1, partition, &boundary);
    let u2 = classes.iter().zip(&u1).map(|(c, &in_u1)| !in_u1 && (c.touches_boundary || c.multiple)).collect();
    RemovalSets { u1, u2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCensus {
    pub count: usize,
    pub largest: usize,
    /// Sizes, largest first.
    pub sizes: Vec<usize>,
}

/// Outcome of checking the witness on one realization. Violations are
/// recorded here rather than raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub params: WitnessParams,
    pub degree_cutoff: usize,
    pub num_colors: usize,
    pub separated_set_size: usize,
    /// Smallest pairwise distance inside `X`, if it has two or more points.
    pub min_separation: Option<f64>,
    pub separated: bool,
    pub balls_contained: bool,
    pub u1_count: usize,
    pub u2_count: usize,
    /// `|U1 ∪ U2| / 2n`.
    pub density: f64,
    pub density_below_epsilon: bool,
    pub boundary_fraction: f64,
    /// `2^d r / N`.
    pub boundary_bound: f64,
    pub boundary_within_bound: bool,
    pub components: ComponentCensus,
    pub straddling_components: usize,
    pub components_within_classes: bool,
    /// Whether every edge between two kept vertices has length at most `r`.
    pub kept_spans_within_reach: bool,
}

impl WitnessReport {
    /// The checks a finite witness must always pass.
    pub fn structural_pass(&self) -> bool {
        self.separated && self.balls_contained && self.components_within_classes
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Inputs of [`verify_witness`] that come from one realization.
#[derive(Debug, Clone, Copy)]
pub struct WitnessInputs<'a> {
    pub graph: &'a IntersectionGraph,
    pub pair: &'a ConfigPair,
    pub fields: (&'a AllocationField, &'a AllocationField),
    pub partition: &'a [u32],
    pub centers: &'a [&'a [f64]],
}

/// Checks the witness conclusions on one realization.
pub fn verify_witness(
    inputs: WitnessInputs<'_>,
    sets: &RemovalSets,
    params: &WitnessParams,
    degree_cutoff: usize,
    num_colors: usize,
) -> WitnessReport {
    let WitnessInputs { graph, pair, fields, partition, centers } = inputs;
    let spec = pair.spec();
    let n = graph.n();
    let boundary = boundary_sites(partition, spec);
    let classes = cell_classes(fields.0, fields.1, partition, &boundary);

    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut kept_spans_within_reach = true;
    for e in graph.edges() {
        let (a, b) = (e.left, n + e.right);
        if sets.removed(a) || sets.removed(b) {
            continue;
        }
        let len = spec.distance_unchecked(pair.first.point(e.left), pair.second.point(e.right));
        kept_spans_within_reach &= len <= params.reach;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    // per component root: (size, class, straddles)
    let mut comp: Vec<(usize, Option<u32>, bool)> = vec![(0, None, false); 2 * n];
    for v in (0..2 * n).filter(|&v| !sets.removed(v)) {
        let root = find(&mut parent, v);
        let entry = &mut comp[root];
        entry.0 += 1;
        let cell = classes[v];
        if cell.multiple {
            entry.2 = true;
        }
        match (entry.1, cell.class) {
            (None, c) => entry.1 = c,
            (Some(a), Some(b)) if a != b => entry.2 = true,
            _ => {}
        }
    }
    let mut sizes: Vec<usize> = comp.iter().filter(|c| c.0 > 0).map(|c| c.0).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let straddling_components = comp.iter().filter(|c| c.0 > 0 && c.2).count();

    let mut min_separation: Option<f64> = None;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            let dist = spec.distance_unchecked(a, b);
            min_separation = Some(min_separation.map_or(dist, |m| m.min(dist)));
        }
    }
    let u1_count = sets.u1.iter().filter(|&&f| f).count();
    let u2_count = sets.u2.iter().filter(|&&f| f).count();
    let removed = (0..2 * n).filter(|&v| sets.removed(v)).count();
    let density = removed as f64 / (2 * n) as f64;
    let boundary_fraction = boundary_neighborhood_fraction(partition, spec, params.reach);
    let bound = boundary_bound(params.reach, params.separation, spec.dim());

    WitnessReport {
        params: *params,
        degree_cutoff,
        num_colors,
        separated_set_size: centers.len(),
        min_separation,
        separated: min_separation.is_none_or(|m| m > 2.0 * params.separation),
        balls_contained: balls_contained(centers, partition, spec, params.separation),
        u1_count,
        u2_count,
        density,
        density_below_epsilon: density < params.epsilon,
        boundary_fraction,
        boundary_bound: bound,
        boundary_within_bound: boundary_fraction <= bound,
        components: ComponentCensus { count: sizes.len(), largest: sizes.first().copied().unwrap_or(0), sizes },
        straddling_components,
        components_within_classes: straddling_components == 0,
        kept_spans_within_reach,
    }
}

/// Every intermediate object of the witness construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWitness {
    /// Indices into [`merged_points`] of the separated set `X`.
    pub separated_set: Vec<usize>,
    pub partition: Vec<u32>,
    pub sets: RemovalSets,
    pub report: WitnessReport,
}

/// Runs the whole construction on one realization.
pub fn build_witness(
    graph: &IntersectionGraph,
    pair: &ConfigPair,
    fields: (&AllocationField, &AllocationField),
    params: &WitnessParams,
) -> Result<PartitionWitness> {
    let spec = pair.spec();
    params.validate(spec.dim())?;
    let points = merged_points(pair);
    let proximity = build_proximity_graph(&points, spec, params.separation)?;
    let cutoff = params.degree_cutoff.unwrap_or_else(|| default_degree_cutoff(&proximity));
    let survivors = prune_high_degree(&proximity, cutoff)?;
    let coloring = greedy_proper_coloring(&proximity, &survivors);
    let separated_set = select_separated_set(&coloring, &points, spec, params.separation)?;
    let centers: Vec<&[f64]> = separated_set.iter().map(|&v| points[v]).collect();
    let partition = voronoi_partition(&centers, spec)?;
    let sets = compute_removal_sets(graph, pair, fields, &partition, params);
    let inputs = WitnessInputs { graph, pair, fields, partition: &partition, centers: &centers };
    let report = verify_witness(inputs, &sets, params, cutoff, coloring.num_colors);
    Ok(PartitionWitness { separated_set, partition, sets, report })
}
