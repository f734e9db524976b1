//! Periodic geometry on the discretized torus `[0, L)^d`.
//!
//! The torus is subdivided into `G` cells per axis. Sites are addressed by a
//! flat index whose axis-0 coordinate varies fastest, and each site is
//! represented by its center `(i + 0.5) * L / G`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat index of a grid site, in `[0, G^d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteIndex(pub usize);

/// Dimension, side length and grid resolution of the periodic box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct TorusSpec {
    dim: usize,
    side: f64,
    grid: usize,
    num_sites: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    d: usize,
    side: f64,
    grid: usize,
}

impl TryFrom<RawSpec> for TorusSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        TorusSpec::new(raw.d, raw.side, raw.grid)
    }
}

impl From<TorusSpec> for RawSpec {
    fn from(spec: TorusSpec) -> Self {
        RawSpec { d: spec.dim, side: spec.side, grid: spec.grid }
    }
}

impl TorusSpec {
    pub fn new(d: usize, side: f64, grid: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("dimension d = {d} must be at least 2")));
        }
        if grid < 2 {
            return Err(Error::Config(format!("grid resolution G = {grid} must be at least 2")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::Config(format!("side length L = {side} must be positive and finite")));
        }
        let num_sites = u32::try_from(d)
            .ok()
            .and_then(|d| grid.checked_pow(d))
            .filter(|&m| m <= u32::MAX as usize)
            .ok_or_else(|| Error::Config(format!("grid of {grid}^{d} sites is too large")))?;
        Ok(Self { dim: d, side, grid, num_sites })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Total number of sites, `M = G^d`.
    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// Edge length of one grid cell, `L / G`.
    pub fn spacing(&self) -> f64 {
        self.side / self.grid as f64
    }

    pub fn site_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Largest possible torus distance, `(L / 2) * sqrt(d)`.
    pub fn max_distance(&self) -> f64 {
        0.5 * self.side * (self.dim as f64).sqrt()
    }

    pub fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::Domain(format!("point has {} coordinates, torus dimension is {}", p.len(), self.dim)));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= 0.0 && **x < self.side)) {
            return Err(Error::Domain(format!("coordinate {x} outside [0, {})", self.side)));
        }
        Ok(())
    }

    /// Reduces a coordinate modulo `L` into `[0, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let y = x.rem_euclid(self.side);
        // rem_euclid may round up to exactly L for tiny negative inputs
        if y >= self.side {
            0.0
        } else {
            y
        }
    }

    pub fn check_site(&self, idx: SiteIndex) -> Result<()> {
        if idx.0 >= self.num_sites {
            return Err(Error::Domain(format!("site index {} out of range [0, {})", idx.0, self.num_sites)));
        }
        Ok(())
    }

    /// Per-axis indices of a site.
    pub fn site_tuple(&self, idx: SiteIndex) -> Result<Vec<usize>> {
        self.check_site(idx)?;
        let mut out = vec![0; self.dim];
        self.fill_tuple(idx.0, &mut out);
        Ok(out)
    }

    pub(crate) fn fill_tuple(&self, mut flat: usize, out: &mut [usize]) {
        for c in out.iter_mut() {
            *c = flat % self.grid;
            flat /= self.grid;
        }
    }

    pub fn site_index(&self, tuple: &[usize]) -> Result<SiteIndex> {
        if tuple.len() != self.dim {
            return Err(Error::Domain(format!(
                "site tuple has {} entries, torus dimension is {}",
                tuple.len(),
                self.dim
            )));
        }
        if let Some(c) = tuple.iter().find(|&&c| c >= self.grid) {
            return Err(Error::Domain(format!("axis index {c} out of range [0, {})", self.grid)));
        }
        Ok(SiteIndex(self.flat_unchecked(tuple)))
    }

    pub(crate) fn flat_unchecked(&self, tuple: &[usize]) -> usize {
        tuple.iter().rev().fold(0, |acc, &c| acc * self.grid + c)
    }

    /// Center of a grid site.
    pub fn site_coordinates(&self, idx: SiteIndex) -> Result<Vec<f64>> {
        let h = self.spacing();
        Ok(self.site_tuple(idx)?.into_iter().map(|c| (c as f64 + 0.5) * h).collect())
    }

    /// The site whose cell contains `p`.
    pub fn site_of(&self, p: &[f64]) -> Result<SiteIndex> {
        self.check_point(p)?;
        let h = self.spacing();
        let tuple: Vec<usize> = p.iter().map(|&x| ((x / h).floor() as usize).min(self.grid - 1)).collect();
        Ok(SiteIndex(self.flat_unchecked(&tuple)))
    }

    /// Periodic gap between two axis indices, in grid steps.
    #[inline]
    pub(crate) fn axis_gap(&self, a: usize, b: usize) -> usize {
        let diff = a.abs_diff(b);
        diff.min(self.grid - diff)
    }

    /// Squared torus distance between two site centers, in grid-step units.
    pub fn site_dist2(&self, a: SiteIndex, b: SiteIndex) -> u64 {
        let (mut a, mut b) = (a.0, b.0);
        let mut acc = 0u64;
        for _ in 0..self.dim {
            let gap = self.axis_gap(a % self.grid, b % self.grid) as u64;
            acc += gap * gap;
            a /= self.grid;
            b /= self.grid;
        }
        acc
    }

    /// Torus distance between two site centers.
    pub fn site_distance(&self, a: SiteIndex, b: SiteIndex) -> f64 {
        (self.site_dist2(a, b) as f64).sqrt() * self.spacing()
    }

    /// Minimal periodic displacement `b - a`, each component in `[-L/2, L/2]`.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let mut t = y - x;
                let half = 0.5 * self.side;
                if t > half {
                    t -= self.side;
                } else if t < -half {
                    t += self.side;
                }
                t
            })
            .collect()
    }

    /// `torus_distance` without the domain checks.
    #[inline]
    pub(crate) fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let t = (x - y).abs();
            let t = t.min(self.side - t);
            acc += t * t;
        }
        acc.sqrt()
    }
}

/// Euclidean length of the componentwise minimal periodic displacement.
pub fn torus_distance(a: &[f64], b: &[f64], spec: &TorusSpec) -> Result<f64> {
    spec.check_point(a)?;
    spec.check_point(b)?;
    Ok(spec.distance_unchecked(a, b))
}

/// Center of a grid site; see [`TorusSpec::site_coordinates`].
pub fn site_coordinates(idx: SiteIndex, spec: &TorusSpec) -> Result<Vec<f64>> {
    spec.site_coordinates(idx)
}

/// Maximum pairwise torus distance between site centers.
pub fn set_diameter(sites: &[SiteIndex], spec: &TorusSpec) -> Result<f64> {
    if sites.is_empty() {
        return Err(Error::Domain("diameter of an empty site set".into()));
    }
    for &s in sites {
        spec.check_site(s)?;
    }
    Ok((max_site_dist2(sites, spec) as f64).sqrt() * spec.spacing())
}

/// Squared diameter in grid-step units.
///
/// When every site lies within `G/4` grid steps of the first one along each
/// axis, no pairwise displacement wraps around the torus, so the diameter is
/// a plain Euclidean diameter and only the two extreme sites of every axis-0
/// line can realize it. Otherwise all pairs are compared.
pub(crate) fn max_site_dist2(sites: &[SiteIndex], spec: &TorusSpec) -> u64 {
    let d = spec.dim();
    let g = spec.grid() as i64;
    let quarter = g / 4;
    let mut anchor = vec![0usize; d];
    spec.fill_tuple(sites[0].0, &mut anchor);
    let mut tuple = vec![0usize; d];
    let mut offsets: Vec<i64> = Vec::with_capacity(sites.len() * d);
    let mut unwrapped = true;
    for s in sites {
        spec.fill_tuple(s.0, &mut tuple);
        for (&c, &a) in tuple.iter().zip(&anchor) {
            let o = (c as i64 - a as i64).rem_euclid(g);
            let o = if o >= g / 2 { o - g } else { o };
            if o.abs() > quarter {
                unwrapped = false;
            }
            offsets.push(o);
        }
        if !unwrapped {
            break;
        }
    }
    if !unwrapped {
        return brute_force_dist2(sites, spec);
    }

    // axis-0 extremes per line
    let mut lines: HashMap<&[i64], (i64, i64)> = HashMap::new();
    for o in offsets.chunks_exact(d) {
        let e = lines.entry(&o[1..]).or_insert((o[0], o[0]));
        e.0 = e.0.min(o[0]);
        e.1 = e.1.max(o[0]);
    }
    let mut candidates: Vec<Vec<i64>> = Vec::with_capacity(2 * lines.len());
    for (rest, (lo, hi)) in lines {
        let mut v = Vec::with_capacity(d);
        v.push(lo);
        v.extend_from_slice(rest);
        if hi != lo {
            let mut w = v.clone();
            w[0] = hi;
            candidates.push(w);
        }
        candidates.push(v);
    }
    let mut best = 0i64;
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            let dist2: i64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.max(dist2);
        }
    }
    best as u64
}

pub(crate) fn brute_force_dist2(sites: &[SiteIndex], spec: &TorusSpec) -> u64 {
    let mut best = 0;
    for (i, &a) in sites.iter().enumerate() {
        for &b in &sites[i + 1..] {
            best = best.max(spec.site_dist2(a, b));
        }
    }
    best
}

/// Lower estimate of the diameter from `pairs` random site pairs.
///
/// Used only for profiling sweeps; results must be labeled approximate.
pub fn sampled_diameter<R: Rng + ?Sized>(
    sites: &[SiteIndex],
    spec: &TorusSpec,
    pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if sites.is_empty() {
        return Err(Error::Domain("diameter of an empty site set".into()));
    }
    let mut best = 0;
    for _ in 0..pairs {
        let a = sites[rng.random_range(0..sites.len())];
        let b = sites[rng.random_range(0..sites.len())];
        best = best.max(spec.site_dist2(a, b));
    }
    Ok((best as f64).sqrt() * spec.spacing())
}
