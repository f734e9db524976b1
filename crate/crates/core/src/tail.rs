//! Ensemble tail statistics: empirical survival curves, stretched-exponential
//! exponent fits, the mass-transport identity and the two-sided bound check.
//!
//! Palm quantities are estimated by averaging over every configuration point
//! of every realization, which is unbiased on the torus by exchangeability.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::allocation::CellStats;
use crate::error::{Error, Result};
use crate::fractional::PerfectMatching;
use crate::point_process::ConfigPair;

/// Survival values inside this range form the fit window.
pub const FIT_WINDOW: (f64, f64) = (0.01, 0.9);
/// Fewest window points accepted by [`fit_stretched_exponent`].
pub const MIN_FIT_POINTS: usize = 5;

/// Least-squares fit of `log(-log S)` against `log r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchedFit {
    /// Fitted exponent (slope).
    pub gamma: f64,
    /// Standard error of the slope.
    pub gamma_stderr: f64,
    /// Fitted scale `c` in `S(r) ~ exp(-c r^gamma)`.
    pub scale: f64,
    /// Smallest and largest radius used.
    pub window: (f64, f64),
    pub points: usize,
    pub method: String,
}

/// Empirical survival function `S(r) = P(X > r)` on a radius grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub radii: Vec<f64>,
    pub survival: Vec<f64>,
    /// Number of samples strictly above each radius.
    pub exceed: Vec<u64>,
    /// Binomial standard error of each survival value.
    pub stderr: Vec<f64>,
    pub samples: u64,
    pub fit: Option<StretchedFit>,
}

impl TailEstimate {
    /// `r,survival,count,stderr` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,survival,count,stderr")?;
        for i in 0..self.radii.len() {
            writeln!(out, "{},{},{},{}", self.radii[i], self.survival[i], self.exceed[i], self.stderr[i])?;
        }
        Ok(())
    }

    /// Grid indices inside the fit window.
    pub fn window_indices(&self) -> Vec<usize> {
        (0..self.radii.len())
            .filter(|&i| self.radii[i] > 0.0 && self.survival[i] >= FIT_WINDOW.0 && self.survival[i] <= FIT_WINDOW.1)
            .collect()
    }
}

/// Checks that the radius grid is finite and strictly increasing.
pub fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Domain("radius grid is empty".into()));
    }
    if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Domain("radii must be finite and nonnegative".into()));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("radii must be strictly increasing".into()));
    }
    Ok(())
}

fn binomial_stderr(p: f64, samples: u64) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

/// Survival curve of arbitrary nonnegative samples.
pub fn survival_curve(samples: &[f64], radii: &[f64]) -> Result<TailEstimate> {
    check_radii(radii)?;
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let total = sorted.len() as u64;
    let exceed: Vec<u64> = radii.iter().map(|&r| (sorted.len() - sorted.partition_point(|&x| x <= r)) as u64).collect();
    let survival: Vec<f64> = exceed.iter().map(|&k| k as f64 / total as f64).collect();
    let stderr = survival.iter().map(|&p| binomial_stderr(p, total)).collect();
    Ok(TailEstimate { radii: radii.to_vec(), survival, exceed, stderr, samples: total, fit: None })
}

/// Fraction of matched pairs farther apart than each radius, over the ensemble.
pub fn matching_distance_tail(ensemble: &[PerfectMatching], radii: &[f64]) -> Result<TailEstimate> {
    let distances: Vec<f64> = ensemble.iter().flat_map(|m| m.distances.iter().copied()).collect();
    survival_curve(&distances, radii)
}

/// Distance from every process-1 point to its nearest process-2 point.
pub fn nearest_point_distances(pair: &ConfigPair) -> Vec<f64> {
    let spec = pair.spec();
    pair.first
        .points()
        .map(|x| pair.second.points().map(|y| spec.distance_unchecked(x, y)).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Survival of the nearest-point distance, pooled over realizations.
pub fn nearest_point_tail(pairs: &[ConfigPair], radii: &[f64]) -> Result<TailEstimate> {
    if let Some(p) = pairs.first() {
        let half = 0.5 * p.spec().side();
        if radii.iter().any(|&r| r >= half) {
            return Err(Error::Domain(format!("radii must stay below L/2 = {half}")));
        }
    }
    let distances: Vec<f64> = pairs.iter().flat_map(nearest_point_distances).collect();
    survival_curve(&distances, radii)
}

/// Volume of the unit ball in dimension `d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    // v_d = 2 pi / d * v_{d-2}, v_0 = 1, v_1 = 2
    let mut v = if d.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

/// Fits `log(-log S(r)) = log c + gamma log r` by ordinary least squares over
/// the grid points with `S` in [`FIT_WINDOW`].
pub fn fit_stretched_exponent(tail: &TailEstimate) -> Result<StretchedFit> {
    let idx = tail.window_indices();
    if idx.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} grid points have survival in [{}, {}], need {MIN_FIT_POINTS} (samples {}, radii {}..{})",
            idx.len(),
            FIT_WINDOW.0,
            FIT_WINDOW.1,
            tail.samples,
            tail.radii.first().copied().unwrap_or(f64::NAN),
            tail.radii.last().copied().unwrap_or(f64::NAN),
        )));
    }
    let xs: Vec<f64> = idx.iter().map(|&i| tail.radii[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| (-tail.survival[i].ln()).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("window radii are degenerate".into()));
    }
    let gamma = sxy / sxx;
    let intercept = my - gamma * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - gamma * x).powi(2)).sum();
    let gamma_stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(StretchedFit {
        gamma,
        gamma_stderr,
        scale: intercept.exp(),
        window: (tail.radii[idx[0]], tail.radii[*idx.last().unwrap()]),
        points: idx.len(),
        method: "ols log(-log S) vs log r".into(),
    })
}

/// Mass sent and received when every process-2 point whose cell diameter
/// exceeds `r` sends unit mass to its matched process-1 point.
pub fn mass_transport_check(matching: &PerfectMatching, diam2: &CellStats, r: f64) -> Result<(u64, u64)> {
    if diam2.diameters.len() != matching.len() {
        return Err(Error::Domain(format!(
            "{} cell diameters for a matching of {} pairs",
            diam2.diameters.len(),
            matching.len()
        )));
    }
    let sent = diam2.diameters.iter().filter(|&&dm| dm > r).count() as u64;
    let received = matching.partner.iter().filter(|&&y| diam2.diameters[y] > r).count() as u64;
    Ok((sent, received))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub r: f64,
    /// Empirical `S_match(2r)`.
    pub match_at_double: f64,
    pub diam1: f64,
    pub diam2: f64,
    /// Combined binomial standard error of the three estimates.
    pub stderr: f64,
    /// `diam1 + diam2 + 3 stderr - match_at_double`; nonnegative on a pass.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub all_pass: bool,
}

impl BoundReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,match_at_2r,diam1,diam2,stderr,margin,pass")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.r, row.match_at_double, row.diam1, row.diam2, row.stderr, row.margin, row.pass
            )?;
        }
        Ok(())
    }
}

/// Checks `S_match(2r) <= S_diam1(r) + S_diam2(r) + 3 * stderr` at each radius,
/// all survival values computed from the pooled raw samples.
pub fn two_sided_bound_check(
    match_distances: &[f64],
    diam1: &[f64],
    diam2: &[f64],
    radii: &[f64],
) -> Result<BoundReport> {
    check_radii(radii)?;
    let doubled: Vec<f64> = radii.iter().map(|r| 2.0 * r).collect();
    let m = survival_curve(match_distances, &doubled)?;
    let a = survival_curve(diam1, radii)?;
    let b = survival_curve(diam2, radii)?;
    let rows: Vec<BoundRow> = (0..radii.len())
        .map(|i| {
            let stderr = (m.stderr[i].powi(2) + a.stderr[i].powi(2) + b.stderr[i].powi(2)).sqrt();
            let margin = a.survival[i] + b.survival[i] + 3.0 * stderr - m.survival[i];
            BoundRow {
                r: radii[i],
                match_at_double: m.survival[i],
                diam1: a.survival[i],
                diam2: b.survival[i],
                stderr,
                margin,
                pass: margin >= 0.0,
            }
        })
        .collect();
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(BoundReport { rows, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(step: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| i as f64 * step).collect()
    }

    fn synthetic(gamma: f64, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (-(1.0 - rng.random::<f64>()).ln()).powf(1.0 / gamma)).collect()
    }

    #[test]
    fn zero_distances_have_empty_tail() {
        let t = survival_curve(&[0.0; 10], &grid(0.1, 5)).unwrap();
        assert_eq!(t.survival, vec![0.0; 5]);
    }

    #[test]
    fn single_sample_step_function() {
        let t = survival_curve(&[0.35], &[0.1, 0.3, 0.35, 0.4]).unwrap();
        assert_eq!(t.survival, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.exceed, vec![1, 1, 0, 0]);
    }

    #[test]
    fn bad_radii_are_rejected() {
        assert!(survival_curve(&[1.0], &[]).is_err());
        assert!(survival_curve(&[1.0], &[0.2, 0.1]).is_err());
        assert!(survival_curve(&[1.0], &[0.1, 0.1]).is_err());
        assert!(survival_curve(&[], &[0.1]).is_err());
    }

    #[test]
    fn empirical_tail_tracks_the_sampled_law() {
        let samples = synthetic(3.0, 100_000, 7);
        let radii = grid(0.05, 40);
        let t = survival_curve(&samples, &radii).unwrap();
        for (i, &r) in radii.iter().enumerate() {
            let exact = (-r.powi(3)).exp();
            let se = binomial_stderr(exact, t.samples).max(1e-12);
            // counts near the ends are Poisson-like, hence the 1/n slack
            assert!((t.survival[i] - exact).abs() <= 4.0 * se + 5.0 / t.samples as f64, "r = {r}");
        }
        assert!(t.survival.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fit_recovers_known_exponents() {
        let radii = grid(0.01, 600);
        for (gamma, tol) in [(1.0, 0.1), (2.0, 0.1), (3.0, 0.15)] {
            let t = survival_curve(&synthetic(gamma, 100_000, gamma as u64), &radii).unwrap();
            let fit = fit_stretched_exponent(&t).unwrap();
            assert!((fit.gamma - gamma).abs() <= tol, "gamma {gamma}: fitted {}", fit.gamma);
            assert!((fit.scale - 1.0).abs() < 0.1);
            assert!(fit.points >= MIN_FIT_POINTS);
        }
    }

    #[test]
    fn fit_refuses_small_windows() {
        let t = survival_curve(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]).unwrap();
        assert!(matches!(fit_stretched_exponent(&t), Err(Error::Fit(_))));
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_check_trivial_cases() {
        let report = two_sided_bound_check(&[0.0; 4], &[1.0; 4], &[1.0; 4], &[0.5, 1.0, 2.0]).unwrap();
        assert!(report.all_pass);
        assert_eq!(report.rows[0].match_at_double, 0.0);
        let report = two_sided_bound_check(&[0.5; 4], &[1.0; 4], &[1.0; 4], &[3.0]).unwrap();
        assert_eq!(report.rows[0].margin, 0.0);
        assert!(report.all_pass);
        let report = two_sided_bound_check(&[5.0; 4], &[1.0; 4], &[1.0; 4], &[2.0]).unwrap();
        assert!(!report.all_pass);
    }

    #[test]
    fn mass_transport_counts() {
        let m = PerfectMatching { partner: vec![2, 0, 1], distances: vec![0.0; 3], provenance: "t".into() };
        let stats = CellStats { diameters: vec![1.0, 2.0, 3.0], counts: vec![1; 3], realization: None };
        assert_eq!(mass_transport_check(&m, &stats, 5.0).unwrap(), (0, 0));
        assert_eq!(mass_transport_check(&m, &stats, 0.0).unwrap(), (3, 3));
        assert_eq!(mass_transport_check(&m, &stats, 1.5).unwrap(), (2, 2));
    }
}
