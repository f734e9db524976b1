//! Seeded sampling of the two point configurations and Palm-style rooting.
//!
//! Every configuration draws from its own ChaCha12 stream. The stream key is
//! derived from `(seed, realization, label)` by [`derive_stream`], so any
//! realization can be regenerated in isolation and the result does not depend
//! on which worker produced it.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{SiteIndex, TorusSpec};

/// Name of the stream derivation rule, recorded with every run.
pub const STREAM_RULE: &str = "chacha12(splitmix64(splitmix64(seed) ^ (realization << 8 | label)))";

/// Which of the two processes a configuration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessLabel {
    First = 1,
    Second = 2,
}

impl ProcessLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// Where a configuration's randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub realization: u64,
    pub label: ProcessLabel,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream key for one process of one realization; see [`STREAM_RULE`].
pub fn derive_stream(seed: u64, realization: u64, label: ProcessLabel) -> u64 {
    splitmix64(splitmix64(seed) ^ ((realization << 8) | label.as_u8() as u64))
}

fn stream_rng(provenance: &Provenance) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(provenance.stream)
}

/// One process's configuration points on the torus.
///
/// Points occupy pairwise distinct grid sites, which in particular makes them
/// pairwise distinct. A draw that lands in an occupied site is redrawn.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfig {
    spec: TorusSpec,
    label: ProcessLabel,
    coords: Vec<f64>,
    home: Vec<u32>,
    provenance: Option<Provenance>,
}

impl PointConfig {
    /// Builds a configuration from explicit points.
    pub fn from_points(spec: TorusSpec, label: ProcessLabel, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * spec.dim());
        let mut home = Vec::with_capacity(points.len());
        let mut occupied = HashSet::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let site = spec.site_of(p)?;
            if !occupied.insert(site) {
                return Err(Error::Domain(format!("point {i} shares grid site {} with an earlier point", site.0)));
            }
            coords.extend_from_slice(p);
            home.push(site.0 as u32);
        }
        Ok(Self { spec, label, coords, home, provenance: None })
    }

    fn sample<R: Rng>(spec: TorusSpec, label: ProcessLabel, n: usize, rng: &mut R) -> Result<Self> {
        if n > spec.num_sites() {
            return Err(Error::Config(format!(
                "{n} points cannot occupy distinct sites of a {}-site grid",
                spec.num_sites()
            )));
        }
        let d = spec.dim();
        let side = spec.side();
        let mut coords = Vec::with_capacity(n * d);
        let mut home = Vec::with_capacity(n);
        let mut occupied = HashSet::with_capacity(n);
        let mut p = vec![0.0; d];
        while home.len() < n {
            for x in p.iter_mut() {
                *x = spec.wrap(rng.random::<f64>() * side);
            }
            let site = spec.site_of(&p)?;
            if occupied.insert(site) {
                coords.extend_from_slice(&p);
                home.push(site.0 as u32);
            }
        }
        Ok(Self { spec, label, coords, home, provenance: None })
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.spec
    }

    pub fn label(&self) -> ProcessLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.home.len()
    }

    pub fn is_empty(&self) -> bool {
        self.home.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.spec.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.spec.dim())
    }

    /// Grid site containing point `i`.
    pub fn home_site(&self, i: usize) -> SiteIndex {
        SiteIndex(self.home[i] as usize)
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Shifts every point by `shift` (coordinates reduced mod `L`).
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        let pts: Vec<Vec<f64>> =
            self.points().map(|p| p.iter().zip(shift).map(|(x, t)| self.spec.wrap(x + t)).collect()).collect();
        let mut out = Self::from_points(self.spec, self.label, &pts)?;
        out.provenance = self.provenance;
        Ok(out)
    }

    /// Shifts every point by a whole number of grid steps per axis.
    pub fn translated_by_sites(&self, steps: &[i64]) -> Result<Self> {
        let h = self.spec.spacing();
        let shift: Vec<f64> = steps.iter().map(|&k| k as f64 * h).collect();
        self.translated(&shift)
    }
}

/// The two configurations of one realization, conditioned on equal counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigPair {
    pub first: PointConfig,
    pub second: PointConfig,
}

impl ConfigPair {
    pub fn new(first: PointConfig, second: PointConfig) -> Result<Self> {
        if first.spec != second.spec {
            return Err(Error::Domain("configurations live on different tori".into()));
        }
        if first.label != ProcessLabel::First || second.label != ProcessLabel::Second {
            return Err(Error::Domain("pair must hold process 1 then process 2".into()));
        }
        check_divides(first.len(), &first.spec)?;
        if first.len() != second.len() {
            return Err(Error::Config(format!("point counts differ: {} versus {}", first.len(), second.len())));
        }
        Ok(Self { first, second })
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.first.spec
    }

    /// Common point count `n`.
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn config(&self, label: ProcessLabel) -> &PointConfig {
        match label {
            ProcessLabel::First => &self.first,
            ProcessLabel::Second => &self.second,
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        Self::new(self.first.translated(shift)?, self.second.translated(shift)?)
    }

    /// Writes `process_label,point_index,x_0..x_{d-1}` rows for both processes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = self.spec().dim();
        write!(out, "process_label,point_index")?;
        for k in 0..d {
            write!(out, ",x_{k}")?;
        }
        writeln!(out)?;
        for cfg in [&self.first, &self.second] {
            for (i, p) in cfg.points().enumerate() {
                write!(out, "{},{}", cfg.label.as_u8(), i)?;
                for x in p {
                    write!(out, ",{x}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Requires `n >= 1` and `n | M`.
pub fn check_divides(n: usize, spec: &TorusSpec) -> Result<()> {
    let m = spec.num_sites();
    if n == 0 {
        return Err(Error::Config("point count n must be at least 1".into()));
    }
    if !m.is_multiple_of(n) {
        return Err(Error::Config(format!("point count n = {n} does not divide the site count M = {m}")));
    }
    Ok(())
}

/// Poisson configuration of the given intensity.
///
/// The count is conditioned on `n >= 1`: a zero draw is rejected and redrawn.
pub fn sample_poisson_config(
    spec: &TorusSpec,
    intensity: f64,
    label: ProcessLabel,
    seed: u64,
    realization: u64,
) -> Result<PointConfig> {
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(Error::Domain(format!("intensity {intensity} must be positive")));
    }
    let provenance = Provenance { seed, realization, label, stream: derive_stream(seed, realization, label) };
    let mut rng = stream_rng(&provenance);
    let mean = intensity * spec.volume();
    let poisson = Poisson::new(mean).map_err(|e| Error::Domain(format!("invalid Poisson mean {mean}: {e}")))?;
    let n = loop {
        let n = poisson.sample(&mut rng) as usize;
        if n > 0 {
            break n;
        }
    };
    let mut cfg = PointConfig::sample(*spec, label, n, &mut rng)?;
    cfg.provenance = Some(provenance);
    Ok(cfg)
}

/// Two independent configurations of exactly `n` uniform points each.
pub fn sample_conditioned_pair(spec: &TorusSpec, n: usize, seed: u64, realization: u64) -> Result<ConfigPair> {
    check_divides(n, spec)?;
    let draw = |label| {
        let provenance = Provenance { seed, realization, label, stream: derive_stream(seed, realization, label) };
        let mut rng = stream_rng(&provenance);
        PointConfig::sample(*spec, label, n, &mut rng).map(|mut c| {
            c.provenance = Some(provenance);
            c
        })
    };
    let first = draw(ProcessLabel::First)?;
    let second = draw(ProcessLabel::Second)?;
    ConfigPair::new(first, second)
}

/// One point of a process seen as the origin.
#[derive(Debug, Clone)]
pub struct RootedView<'a> {
    pair: &'a ConfigPair,
    root_label: ProcessLabel,
    root: usize,
}

impl RootedView<'_> {
    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn root_label(&self) -> ProcessLabel {
        self.root_label
    }

    pub fn root_point(&self) -> &[f64] {
        self.pair.config(self.root_label).point(self.root)
    }

    /// Points of `label` recentered so the root sits at the origin; each
    /// component of the result lies in `[-L/2, L/2]`.
    pub fn recentered(&self, label: ProcessLabel) -> Vec<Vec<f64>> {
        let spec = self.pair.spec();
        let root = self.root_point();
        self.pair.config(label).points().map(|p| spec.displacement(root, p)).collect()
    }
}

/// Every point of `label` as a root, once each, in index order.
///
/// By exchangeability on the torus, averaging a root-centered functional over
/// these views estimates its Palm expectation.
pub fn palm_average_frame(pair: &ConfigPair, label: ProcessLabel) -> impl Iterator<Item = RootedView<'_>> {
    (0..pair.config(label).len()).map(move |root| RootedView { pair, root_label: label, root })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> TorusSpec {
        TorusSpec::new(3, 8.0, 64).unwrap()
    }

    #[test]
    fn divisibility_is_enforced() {
        let s = TorusSpec::new(2, 4.0, 4).unwrap();
        let err = sample_conditioned_pair(&s, 3, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("n = 3") && msg.contains("M = 16"), "{msg}");
        assert!(sample_conditioned_pair(&s, 0, 1, 0).is_err());
    }

    #[test]
    fn single_point_pair() {
        let p = sample_conditioned_pair(&spec3(), 1, 9, 0).unwrap();
        assert_eq!(p.first.len(), 1);
        assert_eq!(p.second.len(), 1);
        assert_eq!(palm_average_frame(&p, ProcessLabel::First).count(), 1);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = spec3();
        let a = sample_conditioned_pair(&s, 64, 77, 3).unwrap();
        let b = sample_conditioned_pair(&s, 64, 77, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_conditioned_pair(&s, 64, 78, 3).unwrap();
        assert_ne!(a.first, c.first);
        let e = sample_conditioned_pair(&s, 64, 77, 4).unwrap();
        assert_ne!(a.first, e.first);
        assert_ne!(a.first.coords, a.second.coords);
        let p1 = sample_poisson_config(&s, 1.0, ProcessLabel::First, 5, 0).unwrap();
        let p2 = sample_poisson_config(&s, 1.0, ProcessLabel::First, 5, 0).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn points_are_valid_and_on_distinct_sites() {
        let s = TorusSpec::new(2, 4.0, 8).unwrap();
        // 64 points fill every site of the grid
        let p = sample_conditioned_pair(&s, 64, 2, 0).unwrap();
        for cfg in [&p.first, &p.second] {
            let homes: HashSet<_> = (0..cfg.len()).map(|i| cfg.home_site(i)).collect();
            assert_eq!(homes.len(), 64);
            for (i, pt) in cfg.points().enumerate() {
                s.check_point(pt).unwrap();
                assert_eq!(s.site_of(pt).unwrap(), cfg.home_site(i));
            }
        }
    }

    #[test]
    fn degenerate_intensity_is_rejected() {
        let s = TorusSpec::new(2, 1.0, 4).unwrap();
        assert!(sample_poisson_config(&s, 0.0, ProcessLabel::First, 1, 0).is_err());
        // a tiny mean still yields at least one point
        let c = sample_poisson_config(&s, 1e-6, ProcessLabel::First, 1, 0).unwrap();
        assert!(!c.is_empty());
    }

    #[test]
    fn poisson_counts_have_poisson_moments() {
        // mean 100 on a 10 x 10 torus
        let s = TorusSpec::new(2, 10.0, 64).unwrap();
        let draws = 10_000;
        let counts: Vec<f64> = (0..draws)
            .map(|r| sample_poisson_config(&s, 1.0, ProcessLabel::First, 42, r).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / draws as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (100.0f64 / draws as f64).sqrt();
        assert!((mean - 100.0).abs() < 3.0 * se, "mean {mean}");
        let ratio = var / mean;
        assert!((0.9..=1.1).contains(&ratio), "variance/mean {ratio}");
    }

    #[test]
    fn coordinates_pass_chi_square_uniformity() {
        let s = TorusSpec::new(2, 5.0, 256).unwrap();
        let bins = 32;
        let mut hist = vec![vec![0u64; bins]; 2];
        let mut total = 0u64;
        let mut r = 0;
        while total < 100_000 {
            let p = sample_conditioned_pair(&s, 1024, 11, r).unwrap();
            for pt in p.first.points() {
                for (k, x) in pt.iter().enumerate() {
                    hist[k][((x / s.side()) * bins as f64) as usize] += 1;
                }
                total += 1;
            }
            r += 1;
        }
        let expected = total as f64 / bins as f64;
        for axis in hist {
            let chi2: f64 = axis.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
            // upper 1e-3 quantile of chi-square with 31 degrees of freedom
            assert!(chi2 < 61.098, "chi-square {chi2}");
        }
    }

    #[test]
    fn nearest_point_void_probability() {
        // distance from a uniform probe to the nearest of n = 512 points
        let s = spec3();
        let n = 512;
        let samples = 10_000u64;
        let mut dists = Vec::with_capacity(samples as usize);
        let mut probe_rng = ChaCha12Rng::seed_from_u64(99);
        let mut r = 0;
        while (dists.len() as u64) < samples {
            let p = sample_conditioned_pair(&s, n, 2024, r).unwrap();
            for _ in 0..50 {
                let q: Vec<f64> = (0..3).map(|_| probe_rng.random::<f64>() * s.side()).collect();
                let nearest = p.first.points().map(|x| s.distance_unchecked(x, &q)).fold(f64::INFINITY, f64::min);
                dists.push(nearest);
            }
            r += 1;
        }
        let v3 = 4.0 / 3.0 * std::f64::consts::PI;
        let mut checked = 0;
        for k in 1..200 {
            let rad = k as f64 * 0.01;
            let analytic = (-(n as f64) * v3 * rad.powi(3) / s.volume()).exp();
            if !(0.05..=0.9).contains(&analytic) {
                continue;
            }
            let empirical = dists.iter().filter(|&&t| t > rad).count() as f64 / dists.len() as f64;
            assert!(
                (empirical - analytic).abs() <= 0.05 * analytic,
                "r = {rad}: empirical {empirical}, analytic {analytic}"
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn palm_frame_visits_every_root() {
        let s = TorusSpec::new(2, 6.0, 12).unwrap();
        let p = sample_conditioned_pair(&s, 8, 5, 0).unwrap();
        let roots: Vec<Vec<f64>> = palm_average_frame(&p, ProcessLabel::Second)
            .map(|v| {
                let rec = v.recentered(ProcessLabel::Second);
                assert!(rec[v.root_index()].iter().all(|&x| x == 0.0));
                v.root_point().to_vec()
            })
            .collect();
        let expected: Vec<Vec<f64>> = p.second.points().map(|x| x.to_vec()).collect();
        assert_eq!(roots, expected);
    }

    #[test]
    fn palm_average_is_translation_invariant() {
        let s = TorusSpec::new(3, 8.0, 64).unwrap();
        let p = sample_conditioned_pair(&s, 64, 13, 0).unwrap();
        let functional = |pair: &ConfigPair| -> f64 {
            let counts: usize = palm_average_frame(pair, ProcessLabel::First)
                .map(|v| {
                    v.recentered(ProcessLabel::Second)
                        .iter()
                        .filter(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt() <= 2.5)
                        .count()
                })
                .sum();
            counts as f64 / pair.len() as f64
        };
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let base = functional(&p);
        for _ in 0..5 {
            let shift: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * s.side()).collect();
            assert_eq!(functional(&p.translated(&shift).unwrap()), base);
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let s = TorusSpec::new(2, 1.0, 4).unwrap();
        let p = sample_conditioned_pair(&s, 2, 1, 0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "process_label,point_index,x_0,x_1");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("2,0,"));
    }
}
