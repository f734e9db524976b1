//! Equal-capacity allocations of grid sites to configuration points.
//!
//! Both schemes rank a (point, site) pair by the squared torus distance, in
//! grid steps, between the point's home site and the site. Ties are broken by
//! point index and then by the displacement from the point's home site in a
//! fixed lexicographic order. Working relative to the home site keeps the
//! schemes exactly equivariant under whole-step translations, and the home
//! site is always the unique distance-zero site of its point.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::{check_divides, PointConfig};
use crate::torus::{max_site_dist2, SiteIndex, TorusSpec};

const UNOWNED: u32 = u32::MAX;

type TableCache = HashMap<(usize, usize), Arc<OffsetTable>>;

/// Allocation scheme tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Stable,
    Dyadic,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Stable => "stable",
            Scheme::Dyadic => "dyadic",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Scheme::Stable),
            "dyadic" => Ok(Scheme::Dyadic),
            other => Err(Error::Config(format!("unknown allocation scheme {other:?}"))),
        }
    }
}

/// Every displacement of the torus grid, sorted by (squared length, lexicographic).
///
/// Displacements are stored reduced mod `G` so that adding one to a site
/// tuple needs a single conditional subtraction per axis.
#[derive(Debug)]
pub(crate) struct OffsetTable {
    dim: usize,
    grid: usize,
    shifts: Vec<u16>,
    dist2: Vec<u32>,
    /// Start of each equal-distance shell, plus a final sentinel.
    shells: Vec<usize>,
}

impl OffsetTable {
    fn build(dim: usize, grid: usize) -> Self {
        let m = grid.pow(dim as u32);
        let lo = -((grid / 2) as i32);
        let mut entries: Vec<(u32, Vec<i32>)> = Vec::with_capacity(m);
        let mut o = vec![lo; dim];
        for _ in 0..m {
            let dist2 = o.iter().map(|&x| (x * x) as u32).sum();
            entries.push((dist2, o.clone()));
            for x in o.iter_mut() {
                *x += 1;
                if *x < lo + grid as i32 {
                    break;
                }
                *x = lo;
            }
        }
        entries.sort_unstable();
        let mut shifts = Vec::with_capacity(m * dim);
        let mut dist2 = Vec::with_capacity(m);
        let mut shells = Vec::new();
        for (i, (d2, o)) in entries.iter().enumerate() {
            if i == 0 || entries[i - 1].0 != *d2 {
                shells.push(i);
            }
            dist2.push(*d2);
            shifts.extend(o.iter().map(|&x| x.rem_euclid(grid as i32) as u16));
        }
        shells.push(m);
        Self { dim, grid, shifts, dist2, shells }
    }

    pub(crate) fn get(spec: &TorusSpec) -> Arc<OffsetTable> {
        static CACHE: OnceLock<Mutex<TableCache>> = OnceLock::new();
        let key = (spec.dim(), spec.grid());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().expect("offset cache poisoned").get(&key) {
            return t.clone();
        }
        let table = Arc::new(Self::build(key.0, key.1));
        cache.lock().expect("offset cache poisoned").entry(key).or_insert(table).clone()
    }

    /// Sites within squared grid distance `max_dist2` of `center`, nearest first.
    pub(crate) fn ball(&self, center: &[usize], max_dist2: u64) -> impl Iterator<Item = usize> + '_ {
        let center = center.to_vec();
        let mut scratch = vec![0; self.dim];
        let end = self.dist2.partition_point(|&d| (d as u64) <= max_dist2);
        (0..end).map(move |i| self.target(&center, i, &mut scratch))
    }

    fn num_shells(&self) -> usize {
        self.shells.len() - 1
    }

    fn shell(&self, k: usize) -> std::ops::Range<usize> {
        self.shells[k]..self.shells[k + 1]
    }

    fn shell_dist2(&self, k: usize) -> u32 {
        self.dist2[self.shells[k]]
    }

    /// Site reached from `home` (as a tuple) by offset `i`; `tuple` is scratch.
    #[inline]
    fn target(&self, home: &[usize], i: usize, tuple: &mut [usize]) -> usize {
        let shift = &self.shifts[i * self.dim..(i + 1) * self.dim];
        let mut flat = 0;
        for k in (0..self.dim).rev() {
            let mut c = home[k] + shift[k] as usize;
            if c >= self.grid {
                c -= self.grid;
            }
            tuple[k] = c;
            flat = flat * self.grid + c;
        }
        flat
    }
}

/// Site-to-owner map with equal capacities: the allocation cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationField {
    spec: TorusSpec,
    owner: Vec<u32>,
    num_points: usize,
    scheme: Scheme,
}

impl AllocationField {
    /// Wraps an owner map, checking totality and exact capacities.
    pub fn from_owners(spec: TorusSpec, owner: Vec<u32>, num_points: usize, scheme: Scheme) -> Result<Self> {
        check_divides(num_points, &spec)?;
        if owner.len() != spec.num_sites() {
            return Err(Error::Integrity(format!(
                "owner map has {} entries for {} sites",
                owner.len(),
                spec.num_sites()
            )));
        }
        let field = Self { spec, owner, num_points, scheme };
        let cap = field.capacity();
        for (p, count) in field.counts()?.into_iter().enumerate() {
            if count != cap {
                return Err(Error::Integrity(format!("point {p} owns {count} sites, capacity is {cap}")));
            }
        }
        Ok(field)
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.spec
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Sites per cell, `M / n`.
    pub fn capacity(&self) -> usize {
        self.spec.num_sites() / self.num_points
    }

    pub fn owner(&self, site: SiteIndex) -> usize {
        self.owner[site.0] as usize
    }

    pub fn owners(&self) -> &[u32] {
        &self.owner
    }

    fn counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.num_points];
        for (s, &o) in self.owner.iter().enumerate() {
            let slot = counts
                .get_mut(o as usize)
                .ok_or_else(|| Error::Integrity(format!("site {s} has no valid owner ({o})")))?;
            *slot += 1;
        }
        Ok(counts)
    }

    /// Sites of every cell, each list in increasing site order.
    pub fn cells(&self) -> Vec<Vec<SiteIndex>> {
        let mut cells = vec![Vec::with_capacity(self.capacity()); self.num_points];
        for (s, &o) in self.owner.iter().enumerate() {
            cells[o as usize].push(SiteIndex(s));
        }
        cells
    }

    /// Checks that every point owns its own home site.
    pub fn check_self_ownership(&self, config: &PointConfig) -> Result<()> {
        for i in 0..config.len() {
            let home = config.home_site(i);
            if self.owner(home) != i {
                return Err(Error::Integrity(format!("point {i} does not own its home site {}", home.0)));
            }
        }
        Ok(())
    }

    /// `site,owner` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "site,owner")?;
        for (s, o) in self.owner.iter().enumerate() {
            writeln!(out, "{s},{o}")?;
        }
        Ok(())
    }

    /// Flat binary table: owner of each site as little-endian `u32`, in site order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for o in &self.owner {
            out.write_all(&o.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Squared preference distance, in grid steps, between point `p` and `site`.
pub fn preference_dist2(config: &PointConfig, p: usize, site: SiteIndex) -> u64 {
    config.spec().site_dist2(config.home_site(p), site)
}

fn home_tuples(config: &PointConfig) -> Vec<Vec<usize>> {
    let spec = config.spec();
    (0..config.len())
        .map(|i| {
            let mut t = vec![0; spec.dim()];
            spec.fill_tuple(config.home_site(i).0, &mut t);
            t
        })
        .collect()
}

/// Capacity-constrained stable assignment of sites to points.
///
/// Pairs are accepted in increasing preference order whenever the site is
/// free and the point has capacity left. With preferences shared by both
/// sides this yields the unique stable assignment: no site is owned by a
/// point strictly farther than some other point that holds a site strictly
/// farther than it.
pub fn stable_allocation(config: &PointConfig) -> Result<AllocationField> {
    let spec = *config.spec();
    let n = config.len();
    check_divides(n, &spec)?;
    let cap = spec.num_sites() / n;
    let table = OffsetTable::get(&spec);
    let homes = home_tuples(config);

    let mut owner = vec![UNOWNED; spec.num_sites()];
    let mut remaining = vec![cap; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut scratch = vec![0; spec.dim()];
    for k in 0..table.num_shells() {
        if active.is_empty() {
            break;
        }
        let shell = table.shell(k);
        for &p in &active {
            for i in shell.clone() {
                let site = table.target(&homes[p], i, &mut scratch);
                if owner[site] == UNOWNED {
                    owner[site] = p as u32;
                    remaining[p] -= 1;
                    if remaining[p] == 0 {
                        break;
                    }
                }
            }
        }
        active.retain(|&p| remaining[p] > 0);
    }
    if !active.is_empty() {
        return Err(Error::Invariant("stable allocation left capacity unfilled".into()));
    }
    AllocationField::from_owners(spec, owner, n, Scheme::Stable)
}

/// Multiscale allocation over the dyadic boxes of the grid.
///
/// Each point first claims its home site. Then, for box sides 2, 4, ..., G,
/// the free sites and the unfilled points inside each box are paired greedily
/// in increasing preference order, until the box runs out of free sites or of
/// unfilled points. The last level is the whole torus, where supply and
/// demand balance exactly.
pub fn dyadic_hierarchical_allocation(config: &PointConfig) -> Result<AllocationField> {
    let spec = *config.spec();
    let g = spec.grid();
    if !g.is_power_of_two() {
        return Err(Error::Config(format!("dyadic allocation needs G to be a power of 2, got G = {g}")));
    }
    let n = config.len();
    check_divides(n, &spec)?;
    let cap = spec.num_sites() / n;
    let d = spec.dim();
    let table = OffsetTable::get(&spec);
    let homes = home_tuples(config);

    let mut owner = vec![UNOWNED; spec.num_sites()];
    let mut remaining = vec![cap; n];
    for p in 0..n {
        owner[config.home_site(p).0] = p as u32;
        remaining[p] -= 1;
    }

    let mut scratch = vec![0; d];
    let mut side = 2;
    while side <= g {
        let boxes_per_axis = g / side;
        let box_of = |t: &[usize]| t.iter().rev().fold(0, |acc, &c| acc * boxes_per_axis + c / side);

        let mut free_in_box: HashMap<usize, usize> = HashMap::new();
        let mut tuple = vec![0; d];
        for (s, &o) in owner.iter().enumerate() {
            if o == UNOWNED {
                spec.fill_tuple(s, &mut tuple);
                *free_in_box.entry(box_of(&tuple)).or_default() += 1;
            }
        }
        let mut by_box: Vec<(usize, usize)> = (0..n)
            .filter(|&p| remaining[p] > 0)
            .map(|p| (box_of(&homes[p]), p))
            .filter(|(b, _)| free_in_box.contains_key(b))
            .collect();
        by_box.sort_unstable();

        // largest in-box distance; the top level is the full torus
        let reach = if side == g { d * (g / 2).pow(2) } else { d * (side - 1).pow(2) };
        for group in by_box.chunk_by(|a, b| a.0 == b.0) {
            let bx = group[0].0;
            let mut free = free_in_box[&bx];
            let mut active: Vec<usize> = group.iter().map(|&(_, p)| p).collect();
            for k in 0..table.num_shells() {
                if active.is_empty() || free == 0 || table.shell_dist2(k) as usize > reach {
                    break;
                }
                let shell = table.shell(k);
                for &p in &active {
                    for i in shell.clone() {
                        let site = table.target(&homes[p], i, &mut scratch);
                        if owner[site] == UNOWNED && box_of(&scratch) == bx {
                            owner[site] = p as u32;
                            remaining[p] -= 1;
                            free -= 1;
                            if remaining[p] == 0 || free == 0 {
                                break;
                            }
                        }
                    }
                    if free == 0 {
                        break;
                    }
                }
                active.retain(|&p| remaining[p] > 0);
            }
        }
        side *= 2;
    }
    if remaining.iter().any(|&r| r > 0) {
        return Err(Error::Invariant("dyadic allocation left capacity unfilled".into()));
    }
    AllocationField::from_owners(spec, owner, n, Scheme::Dyadic)
}

/// Allocates with the requested scheme.
pub fn allocate(config: &PointConfig, scheme: Scheme) -> Result<AllocationField> {
    match scheme {
        Scheme::Stable => stable_allocation(config),
        Scheme::Dyadic => dyadic_hierarchical_allocation(config),
    }
}

/// Per-cell diameters and site counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub diameters: Vec<f64>,
    pub counts: Vec<usize>,
    pub realization: Option<u64>,
}

impl CellStats {
    /// `point_index,diameter,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "point_index,diameter,count")?;
        for (i, (dm, c)) in self.diameters.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{i},{dm},{c}")?;
        }
        Ok(())
    }
}

/// Exact torus diameter and size of every cell.
pub fn cell_stats(field: &AllocationField) -> CellStats {
    let spec = *field.spec();
    let cells = field.cells();
    let diameters = cells.par_iter().map(|c| (max_site_dist2(c, &spec) as f64).sqrt() * spec.spacing()).collect();
    CellStats { diameters, counts: cells.iter().map(Vec::len).collect(), realization: None }
}
