//! Experiment configuration: a TOML file with one table per concern.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use torusmatch::allocation::Scheme;
use torusmatch::baselines::DEFAULT_ASSIGNMENT_CAP;
use torusmatch::fractional::RotationPolicy;
use torusmatch::torus::TorusSpec;
use torusmatch::witness::{boundary_bound, WitnessParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Stable,
    Optimal,
    Greedy,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Stable => "stable",
            Baseline::Optimal => "optimal",
            Baseline::Greedy => "greedy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSection {
    pub d: usize,
    pub side: f64,
    pub grid: usize,
}

fn default_mass_transport_radii() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Points per process in every realization.
    pub n: usize,
    pub realizations: u64,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(default)]
    pub policy: RotationPolicy,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write the full site-to-owner maps (large).
    #[serde(default)]
    pub export_allocations: bool,
    /// Number of evenly spaced radii for the mass-transport check.
    #[serde(default = "default_mass_transport_radii")]
    pub mass_transport_radii: usize,
}

/// Radius grid `start + i * step` for `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiSection {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl RadiiSection {
    /// Grid values rounded to 12 decimals, so `0.05 + 6 * 0.05` prints as `0.35`.
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12).collect()
    }
}

fn default_pilot_realizations() -> u64 {
    8
}

/// Witness parameters. `reach` and `separation` are derived from a pilot
/// run when absent; `degree_cutoff` falls back to the per-realization default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessSection {
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree_cutoff: Option<usize>,
    #[serde(default = "default_pilot_realizations")]
    pub pilot_realizations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub torus: TorusSection,
    pub run: RunSection,
    pub radii: RadiiSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessSection>,
}

/// One violated rule, named by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub rule: String,
}

impl ConfigIssue {
    fn new(field: &str, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        toml::from_str(text).map_err(|e| vec![ConfigIssue::new("<file>", e.to_string().trim_end().to_string())])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn spec(&self) -> Result<TorusSpec, ConfigIssue> {
        TorusSpec::new(self.torus.d, self.torus.side, self.torus.grid)
            .map_err(|e| ConfigIssue::new("torus", e.to_string()))
    }

    /// Every rule violation, or an empty list.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let spec = match self.spec() {
            Ok(s) => Some(s),
            Err(e) => {
                out.push(e);
                None
            }
        };
        let run = &self.run;
        if run.n == 0 {
            out.push(ConfigIssue::new("run.n", "must be at least 1"));
        } else if let Some(s) = spec {
            if s.num_sites() % run.n != 0 {
                out.push(ConfigIssue::new(
                    "run.n",
                    format!("n = {} must divide the site count G^d = {}", run.n, s.num_sites()),
                ));
            }
        }
        if run.realizations == 0 {
            out.push(ConfigIssue::new("run.realizations", "must be at least 1"));
        }
        if run.scheme == Scheme::Dyadic && !self.torus.grid.is_power_of_two() {
            out.push(ConfigIssue::new(
                "run.scheme",
                format!("the dyadic scheme needs G to be a power of two, got G = {}", self.torus.grid),
            ));
        }
        if run.baselines.contains(&Baseline::Optimal) && run.n > DEFAULT_ASSIGNMENT_CAP {
            out.push(ConfigIssue::new(
                "run.baselines",
                format!("the optimal baseline is capped at {DEFAULT_ASSIGNMENT_CAP} points, n = {}", run.n),
            ));
        }
        let mut seen = run.baselines.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != run.baselines.len() {
            out.push(ConfigIssue::new("run.baselines", "lists a baseline twice"));
        }

        let r = &self.radii;
        if !(r.start.is_finite() && r.start >= 0.0) {
            out.push(ConfigIssue::new("radii.start", "must be finite and nonnegative"));
        }
        if !(r.step.is_finite() && r.step > 0.0) {
            out.push(ConfigIssue::new("radii.step", "must be positive so the grid increases"));
        }
        if r.count == 0 {
            out.push(ConfigIssue::new("radii.count", "must be at least 1"));
        } else if !r.values().iter().all(|v| v.is_finite()) || !r.values().windows(2).all(|w| w[0] < w[1]) {
            out.push(ConfigIssue::new("radii", "grid must be finite and strictly increasing"));
        }

        if let Some(w) = &self.witness {
            if !(w.epsilon > 0.0 && w.epsilon < 1.0) {
                out.push(ConfigIssue::new("witness.epsilon", "must lie in (0, 1)"));
            }
            if let Some(reach) = w.reach {
                if !(reach.is_finite() && reach > 0.0) {
                    out.push(ConfigIssue::new("witness.reach", "must be positive"));
                }
            }
            match (w.reach, w.separation) {
                (None, Some(_)) => {
                    out.push(ConfigIssue::new("witness.separation", "an explicit separation needs an explicit reach"))
                }
                (Some(reach), Some(sep)) => {
                    if !(sep.is_finite() && sep > 0.0) {
                        out.push(ConfigIssue::new("witness.separation", "must be positive"));
                    } else if reach > 0.0 && boundary_bound(reach, sep, self.torus.d) >= w.epsilon / 2.0 {
                        out.push(ConfigIssue::new(
                            "witness.separation",
                            format!(
                                "2^d r / N = {} must be below epsilon / 2 = {}",
                                boundary_bound(reach, sep, self.torus.d),
                                w.epsilon / 2.0
                            ),
                        ));
                    }
                }
                _ => {}
            }
            if w.degree_cutoff == Some(0) {
                out.push(ConfigIssue::new("witness.degree_cutoff", "must be at least 1"));
            }
            if w.reach.is_none() && w.pilot_realizations == 0 {
                out.push(ConfigIssue::new("witness.pilot_realizations", "must be at least 1 when reach is derived"));
            }
        }
        out
    }

    /// Witness parameters when both `reach` and `separation` are explicit.
    pub fn explicit_witness_params(&self) -> Option<Result<WitnessParams, torusmatch::Error>> {
        let w = self.witness?;
        let (reach, sep) = (w.reach?, w.separation?);
        Some(WitnessParams::new(w.epsilon, reach, sep, w.degree_cutoff, self.torus.d))
    }
}

/// Reads and fully validates a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![ConfigIssue::new("<file>", format!("cannot read {}: {e}", path.display()))])?;
    let config = ExperimentConfig::from_toml(&text)?;
    let issues = config.issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(issues)
    }
}
