//! Ensemble orchestration and the on-disk result bundle.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! manifest.json                 config hash, version, checksums, failures, timestamp
//! summary.json                  fits and ensemble checks
//! realizations.csv              one row per realization
//! tail_<name>.csv               survival curves
//! bound_check.csv               two-sided tail bound, every radius
//! mass_transport.csv            sent/received per realization and radius
//! witness.csv                   witness report per realization (if enabled)
//! witness_calibration.json      pilot-derived witness parameters (if derived)
//! realizations/rNNNN/*.csv      points, cells, graph, matchings
//! ```
//!
//! Everything except `manifest.json` depends only on the config, so reruns
//! with any worker count are byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use torusmatch::allocation::{allocate, cell_stats};
use torusmatch::baselines::{greedy_nearest, optimal_assignment, stable_matching, DEFAULT_ASSIGNMENT_CAP};
use torusmatch::fractional::{
    as_fractional, build_intersection_graph, round_to_perfect, support_connectivity_report, PerfectMatching,
};
use torusmatch::point_process::{sample_conditioned_pair, STREAM_RULE};
use torusmatch::tail::{
    fit_stretched_exponent, mass_transport_check, nearest_point_distances, survival_curve, two_sided_bound_check,
    BoundRow, StretchedFit, TailEstimate,
};
use torusmatch::torus::TorusSpec;
use torusmatch::witness::{
    build_proximity_graph, build_witness, calibrate_reach, default_degree_cutoff, derive_separation, max_edge_spans,
    merged_points, WitnessParams, WitnessReport,
};

use crate::config::{Baseline, ConfigIssue, ExperimentConfig};

pub const MANIFEST_SCHEMA: u32 = 1;
/// Pilot realizations use indices from here on, disjoint from the ensemble.
pub const PILOT_OFFSET: u64 = 1 << 40;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] torusmatch::Error),
    #[error("{0}")]
    Bundle(String),
}

impl PipelineError {
    /// 1 for configuration errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub fn format_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Checks every rule the pipeline relies on. `validate_config` reports the
/// same rules, so a validated config never fails here.
pub fn preconditions(config: &ExperimentConfig) -> Result<TorusSpec, PipelineError> {
    let issues = config.issues();
    if !issues.is_empty() {
        return Err(PipelineError::Config(issues));
    }
    let spec = TorusSpec::new(config.torus.d, config.torus.side, config.torus.grid)?;
    torusmatch::point_process::check_divides(config.run.n, &spec)?;
    if let Some(params) = config.explicit_witness_params() {
        params?;
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    pub realization: u64,
    pub edges: usize,
    pub components: usize,
    pub largest_component: usize,
    pub rotations: usize,
    pub vertex_sum_violations: usize,
    pub supported: bool,
    pub cost_construction: f64,
    pub cost_baselines: Vec<f64>,
}

/// What one realization contributes to the ensemble fold.
#[derive(Debug, Clone)]
struct RealizationData {
    row: RealizationRow,
    construction: Vec<f64>,
    baselines: Vec<Vec<f64>>,
    diam1: Vec<f64>,
    diam2: Vec<f64>,
    nearest: Vec<f64>,
    mass_transport: Vec<(u64, u64)>,
    witness: Option<WitnessReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub realization: u64,
    pub error: String,
}

fn realization_dir(out: &Path, index: u64) -> PathBuf {
    out.join("realizations").join(format!("r{index:04}"))
}

fn baseline_matching(pair: &torusmatch::point_process::ConfigPair, b: Baseline) -> torusmatch::Result<PerfectMatching> {
    match b {
        Baseline::Stable => stable_matching(pair),
        Baseline::Optimal => optimal_assignment(pair, DEFAULT_ASSIGNMENT_CAP),
        Baseline::Greedy => greedy_nearest(pair),
    }
}

fn mass_transport_radii(config: &ExperimentConfig, spec: &TorusSpec) -> Vec<f64> {
    let k = config.run.mass_transport_radii;
    let top = spec.max_distance();
    (0..k).map(|i| if k == 1 { 0.0 } else { top * i as f64 / (k - 1) as f64 }).collect()
}

fn run_realization(
    config: &ExperimentConfig,
    spec: &TorusSpec,
    index: u64,
    witness: Option<&WitnessParams>,
    out: &Path,
) -> Result<RealizationData, String> {
    let fail = |e: torusmatch::Error| e.to_string();
    let run = &config.run;
    let pair = sample_conditioned_pair(spec, run.n, run.seed, index).map_err(fail)?;
    let f1 = allocate(&pair.first, run.scheme).map_err(fail)?;
    let f2 = allocate(&pair.second, run.scheme).map_err(fail)?;
    f1.check_self_ownership(&pair.first).map_err(fail)?;
    f2.check_self_ownership(&pair.second).map_err(fail)?;
    let mut stats1 = cell_stats(&f1);
    let mut stats2 = cell_stats(&f2);
    stats1.realization = Some(index);
    stats2.realization = Some(index);

    let graph = build_intersection_graph(&f1, &f2).map_err(fail)?;
    let vertex_sum_violations = graph.sum_violations().len();
    let components = support_connectivity_report(&graph);
    let fm = as_fractional(graph.clone()).map_err(fail)?;
    let rounding = round_to_perfect(&fm, &pair, run.policy).map_err(fail)?;
    let supported = rounding.matching.supported_by(&graph);
    if !supported {
        return Err("rounded matching leaves the fractional support".into());
    }
    if rounding.rotations > rounding.initial_edges {
        return Err(format!("{} rotations for {} edges", rounding.rotations, rounding.initial_edges));
    }
    let baselines: Vec<PerfectMatching> =
        run.baselines.iter().map(|&b| baseline_matching(&pair, b)).collect::<Result<_, _>>().map_err(fail)?;
    let mass_transport = mass_transport_radii(config, spec)
        .into_iter()
        .map(|r| mass_transport_check(&rounding.matching, &stats2, r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let witness = witness
        .map(|params| build_witness(&graph, &pair, (&f1, &f2), params).map(|w| w.report))
        .transpose()
        .map_err(fail)?;

    let dir = realization_dir(out, index);
    let write = || -> io::Result<()> {
        fs::create_dir_all(&dir)?;
        write_with(&dir.join("points.csv"), |w| pair.write_csv(w))?;
        write_with(&dir.join("cells_first.csv"), |w| stats1.write_csv(w))?;
        write_with(&dir.join("cells_second.csv"), |w| stats2.write_csv(w))?;
        write_with(&dir.join("graph.csv"), |w| graph.write_csv(w))?;
        write_with(&dir.join("matching.csv"), |w| rounding.matching.write_csv(w))?;
        for (b, m) in run.baselines.iter().zip(&baselines) {
            write_with(&dir.join(format!("baseline_{}.csv", b.name())), |w| m.write_csv(w))?;
        }
        if run.export_allocations {
            write_with(&dir.join("allocation_first.csv"), |w| f1.write_csv(w))?;
            write_with(&dir.join("allocation_second.csv"), |w| f2.write_csv(w))?;
        }
        if let Some(report) = &witness {
            write_json(&dir.join("witness.json"), report)?;
        }
        Ok(())
    };
    write().map_err(|e| format!("writing {}: {e}", dir.display()))?;

    Ok(RealizationData {
        row: RealizationRow {
            realization: index,
            edges: graph.edges().len(),
            components: components.count,
            largest_component: components.sizes.first().copied().unwrap_or(0),
            rotations: rounding.rotations,
            vertex_sum_violations,
            supported,
            cost_construction: rounding.matching.total_cost(),
            cost_baselines: baselines.iter().map(PerfectMatching::total_cost).collect(),
        },
        construction: rounding.matching.distances,
        baselines: baselines.into_iter().map(|m| m.distances).collect(),
        diam1: stats1.diameters,
        diam2: stats2.diameters,
        nearest: nearest_point_distances(&pair),
        mass_transport,
        witness,
    })
}

/// Witness parameters derived from pilot realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessCalibration {
    pub epsilon: f64,
    pub reach: f64,
    pub separation: f64,
    pub degree_cutoff: Option<usize>,
    pub pilot_realizations: u64,
    pub pilot_first_index: u64,
    pub span_samples: usize,
}

fn calibrate_witness(config: &ExperimentConfig, spec: &TorusSpec) -> torusmatch::Result<WitnessCalibration> {
    let w = config.witness.expect("witness section present");
    let run = &config.run;
    let pilot = |i: u64| -> torusmatch::Result<(Vec<f64>, torusmatch::point_process::ConfigPair)> {
        let pair = sample_conditioned_pair(spec, run.n, run.seed, PILOT_OFFSET + i)?;
        let f1 = allocate(&pair.first, run.scheme)?;
        let f2 = allocate(&pair.second, run.scheme)?;
        let graph = build_intersection_graph(&f1, &f2)?;
        Ok((max_edge_spans(&graph, &pair), pair))
    };
    let pilots: Vec<_> = (0..w.pilot_realizations).into_par_iter().map(pilot).collect::<Result<_, _>>()?;
    let spans: Vec<f64> = pilots.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let reach = match w.reach {
        Some(r) => r,
        None => calibrate_reach(&spans, w.epsilon)?,
    };
    let separation = w.separation.unwrap_or_else(|| derive_separation(reach, w.epsilon, spec));
    let degree_cutoff = match w.degree_cutoff {
        Some(d) => Some(d),
        None => pilots
            .iter()
            .map(|(_, pair)| {
                build_proximity_graph(&merged_points(pair), spec, separation).map(|g| default_degree_cutoff(&g))
            })
            .collect::<torusmatch::Result<Vec<_>>>()?
            .into_iter()
            .max(),
    };
    Ok(WitnessCalibration {
        epsilon: w.epsilon,
        reach,
        separation,
        degree_cutoff,
        pilot_realizations: w.pilot_realizations,
        pilot_first_index: PILOT_OFFSET,
        span_samples: spans.len(),
    })
}

/// Fit result or the reason it was refused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitOutcome {
    Fit(StretchedFit),
    Refused(String),
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&StretchedFit> {
        match self {
            FitOutcome::Fit(f) => Some(f),
            FitOutcome::Refused(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    /// Radii of the construction tail's fit window.
    pub window_radii: Vec<f64>,
    pub failing_radii: Vec<f64>,
    pub min_margin: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationSummary {
    pub baseline: Baseline,
    /// Grid radii in the upper half of the construction's fit window.
    pub radii: Vec<f64>,
    pub violating_radii: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSummary {
    pub params: WitnessParams,
    pub realizations: usize,
    pub max_density: f64,
    pub max_boundary_fraction: f64,
    pub all_density_below_epsilon: bool,
    pub all_separated: bool,
    pub all_balls_contained: bool,
    pub all_components_within_classes: bool,
    pub all_boundary_within_bound: bool,
    pub all_kept_spans_within_reach: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub realizations_requested: u64,
    pub realizations_succeeded: usize,
    /// Keyed by tail name; scales are fitted surrogates, not known constants.
    pub fits: BTreeMap<String, FitOutcome>,
    pub vertex_sum_violations: usize,
    pub all_supported: bool,
    pub mass_transport_checks: usize,
    pub mass_transport_exact: bool,
    pub bound_check: Option<BoundSummary>,
    pub domination: Option<DominationSummary>,
    pub witness: Option<WitnessSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stream_rule: String,
    pub workers: usize,
    pub created_unix: u64,
    pub elapsed_seconds: f64,
    pub realizations_requested: u64,
    pub realizations_succeeded: usize,
    pub failures: Vec<Failure>,
    /// Relative path to SHA-256 of every other file in the bundle.
    pub files: BTreeMap<String, String>,
}

/// Outcome of a run; `failures` is nonempty when some realization aborted.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub summary: EnsembleSummary,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

fn prepare_output(out: &Path) -> Result<(), PipelineError> {
    if out.exists() {
        let empty = fs::read_dir(out).map_err(io_err(out))?.next().is_none();
        if !empty {
            if !out.join("manifest.json").is_file() {
                return Err(PipelineError::Bundle(format!(
                    "{} exists, is not empty and holds no bundle manifest",
                    out.display()
                )));
            }
            fs::remove_dir_all(out).map_err(io_err(out))?;
        }
    }
    fs::create_dir_all(out.join("realizations")).map_err(io_err(out))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 of every file under `root` except the manifest, keyed by `/`-separated relative path.
pub fn checksum_tree(root: &Path) -> io::Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    let mut map = BTreeMap::new();
    for rel in files {
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if key == "manifest.json" {
            continue;
        }
        let bytes = fs::read(root.join(&rel))?;
        map.insert(key, hex::encode(Sha256::digest(&bytes)));
    }
    Ok(map)
}

fn tail_with_fit(samples: &[f64], radii: &[f64]) -> torusmatch::Result<(TailEstimate, FitOutcome)> {
    let mut tail = survival_curve(samples, radii)?;
    let outcome = match fit_stretched_exponent(&tail) {
        Ok(fit) => {
            tail.fit = Some(fit.clone());
            FitOutcome::Fit(fit)
        }
        Err(e) => FitOutcome::Refused(e.to_string()),
    };
    Ok((tail, outcome))
}

/// Runs the whole ensemble and writes the bundle to `out`.
pub fn run_pipeline(config: &ExperimentConfig, workers: usize, out: &Path) -> Result<RunOutcome, PipelineError> {
    let started = Instant::now();
    let spec = preconditions(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Bundle(format!("cannot start {workers} workers: {e}")))?;
    prepare_output(out)?;

    let calibration = match config.witness {
        Some(_) if config.explicit_witness_params().is_none() => {
            Some(pool.install(|| calibrate_witness(config, &spec))?)
        }
        _ => None,
    };
    let witness_params = match (&config.witness, &calibration) {
        (None, _) => None,
        (Some(_), Some(c)) => Some(WitnessParams::new(c.epsilon, c.reach, c.separation, c.degree_cutoff, spec.dim())?),
        (Some(_), None) => config.explicit_witness_params().transpose()?,
    };
    if let Some(c) = &calibration {
        let path = out.join("witness_calibration.json");
        write_json(&path, c).map_err(io_err(&path))?;
    }

    let results: Vec<Result<RealizationData, String>> = pool.install(|| {
        (0..config.run.realizations)
            .into_par_iter()
            .map(|i| run_realization(config, &spec, i, witness_params.as_ref(), out))
            .collect()
    });
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(data) => done.push(data),
            Err(error) => {
                let dir = realization_dir(out, i as u64);
                if dir.exists() {
                    let _ = fs::remove_dir_all(&dir);
                }
                failures.push(Failure { realization: i as u64, error });
            }
        }
    }

    let summary = if done.is_empty() {
        EnsembleSummary {
            realizations_requested: config.run.realizations,
            realizations_succeeded: 0,
            fits: BTreeMap::new(),
            vertex_sum_violations: 0,
            all_supported: false,
            mass_transport_checks: 0,
            mass_transport_exact: false,
            bound_check: None,
            domination: None,
            witness: None,
        }
    } else {
        fold_ensemble(config, &spec, &done, witness_params, out)?
    };
    let path = out.join("summary.json");
    write_json(&path, &summary).map_err(io_err(&path))?;

    let files = checksum_tree(out).map_err(io_err(out))?;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config),
        config: config.clone(),
        stream_rule: STREAM_RULE.to_string(),
        workers: workers.max(1),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        realizations_requested: config.run.realizations,
        realizations_succeeded: done.len(),
        failures,
        files,
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest).map_err(io_err(&path))?;
    Ok(RunOutcome { out: out.to_path_buf(), manifest, summary })
}

fn fold_ensemble(
    config: &ExperimentConfig,
    spec: &TorusSpec,
    done: &[RealizationData],
    witness_params: Option<WitnessParams>,
    out: &Path,
) -> Result<EnsembleSummary, PipelineError> {
    let radii = config.radii.values();
    let flat = |f: &dyn Fn(&RealizationData) -> &[f64]| -> Vec<f64> {
        done.iter().flat_map(|d| f(d).iter().copied()).collect()
    };
    let construction = flat(&|d| &d.construction);
    let diam1 = flat(&|d| &d.diam1);
    let diam2 = flat(&|d| &d.diam2);
    let nearest = flat(&|d| &d.nearest);

    let mut fits = BTreeMap::new();
    let mut tails: Vec<(String, TailEstimate)> = Vec::new();
    let mut add = |name: String, samples: &[f64], radii: &[f64]| -> Result<TailEstimate, PipelineError> {
        let (tail, outcome) = tail_with_fit(samples, radii)?;
        fits.insert(name.clone(), outcome);
        tails.push((name, tail.clone()));
        Ok(tail)
    };
    let construction_tail = add("construction".into(), &construction, &radii)?;
    let mut stable_tail = None;
    for (k, b) in config.run.baselines.iter().enumerate() {
        let samples = flat(&|d| &d.baselines[k]);
        let tail = add(format!("baseline_{}", b.name()), &samples, &radii)?;
        if *b == Baseline::Stable {
            stable_tail = Some(tail);
        }
    }
    let half = 0.5 * spec.side();
    let nearest_radii: Vec<f64> = radii.iter().copied().filter(|&r| r < half).collect();
    if !nearest_radii.is_empty() {
        add("nearest".into(), &nearest, &nearest_radii)?;
    }
    add("diameter_first".into(), &diam1, &radii)?;
    add("diameter_second".into(), &diam2, &radii)?;
    for (name, tail) in &tails {
        let path = out.join(format!("tail_{name}.csv"));
        write_with(&path, |w| tail.write_csv(w)).map_err(io_err(&path))?;
    }

    let window = construction_tail.window_indices();
    let bound = two_sided_bound_check(&construction, &diam1, &diam2, &radii)?;
    let path = out.join("bound_check.csv");
    write_with(&path, |w| bound.write_csv(w)).map_err(io_err(&path))?;
    let bound_check = (!window.is_empty()).then(|| {
        let rows: Vec<&BoundRow> = window.iter().map(|&i| &bound.rows[i]).collect();
        BoundSummary {
            window_radii: rows.iter().map(|r| r.r).collect(),
            failing_radii: rows.iter().filter(|r| !r.pass).map(|r| r.r).collect(),
            min_margin: rows.iter().map(|r| r.margin).min_by(f64::total_cmp),
            pass: rows.iter().all(|r| r.pass),
        }
    });

    let domination = match (&stable_tail, window.first(), window.last()) {
        (Some(stable), Some(&lo), Some(&hi)) => {
            let mid = 0.5 * (radii[lo] + radii[hi]);
            let upper: Vec<usize> = window.iter().copied().filter(|&i| radii[i] >= mid).collect();
            let violating: Vec<f64> = upper
                .iter()
                .filter(|&&i| construction_tail.survival[i] > stable.survival[i])
                .map(|&i| radii[i])
                .collect();
            Some(DominationSummary {
                baseline: Baseline::Stable,
                radii: upper.iter().map(|&i| radii[i]).collect(),
                pass: violating.is_empty(),
                violating_radii: violating,
            })
        }
        _ => None,
    };

    let mt_radii = mass_transport_radii(config, spec);
    let path = out.join("mass_transport.csv");
    write_with(&path, |w| {
        writeln!(w, "realization,r,sent,received")?;
        for d in done {
            for (r, (sent, received)) in mt_radii.iter().zip(&d.mass_transport) {
                writeln!(w, "{},{r},{sent},{received}", d.row.realization)?;
            }
        }
        Ok(())
    })
    .map_err(io_err(&path))?;

    let path = out.join("realizations.csv");
    write_with(&path, |w| {
        write!(w, "realization,edges,components,largest_component,rotations,vertex_sum_violations,supported,cost_construction")?;
        for b in &config.run.baselines {
            write!(w, ",cost_{}", b.name())?;
        }
        writeln!(w)?;
        for d in done {
            let r = &d.row;
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.realization,
                r.edges,
                r.components,
                r.largest_component,
                r.rotations,
                r.vertex_sum_violations,
                r.supported,
                r.cost_construction
            )?;
            for c in &r.cost_baselines {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
    .map_err(io_err(&path))?;

    let witness = match witness_params {
        Some(params) => {
            let reports: Vec<(u64, &WitnessReport)> =
                done.iter().filter_map(|d| d.witness.as_ref().map(|w| (d.row.realization, w))).collect();
            let path = out.join("witness.csv");
            write_with(&path, |w| {
                writeln!(
                    w,
                    "realization,degree_cutoff,num_colors,separated_set_size,u1,u2,density,boundary_fraction,\
                     boundary_bound,components,largest_component,straddling_components,separated,balls_contained"
                )?;
                for (i, r) in &reports {
                    writeln!(
                        w,
                        "{i},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        r.degree_cutoff,
                        r.num_colors,
                        r.separated_set_size,
                        r.u1_count,
                        r.u2_count,
                        r.density,
                        r.boundary_fraction,
                        r.boundary_bound,
                        r.components.count,
                        r.components.largest,
                        r.straddling_components,
                        r.separated,
                        r.balls_contained
                    )?;
                }
                Ok(())
            })
            .map_err(io_err(&path))?;
            Some(WitnessSummary {
                params,
                realizations: reports.len(),
                max_density: reports.iter().map(|(_, r)| r.density).fold(0.0, f64::max),
                max_boundary_fraction: reports.iter().map(|(_, r)| r.boundary_fraction).fold(0.0, f64::max),
                all_density_below_epsilon: reports.iter().all(|(_, r)| r.density_below_epsilon),
                all_separated: reports.iter().all(|(_, r)| r.separated),
                all_balls_contained: reports.iter().all(|(_, r)| r.balls_contained),
                all_components_within_classes: reports.iter().all(|(_, r)| r.components_within_classes),
                all_boundary_within_bound: reports.iter().all(|(_, r)| r.boundary_within_bound),
                all_kept_spans_within_reach: reports.iter().all(|(_, r)| r.kept_spans_within_reach),
            })
        }
        None => None,
    };

    Ok(EnsembleSummary {
        realizations_requested: config.run.realizations,
        realizations_succeeded: done.len(),
        fits,
        vertex_sum_violations: done.iter().map(|d| d.row.vertex_sum_violations).sum(),
        all_supported: done.iter().all(|d| d.row.supported),
        mass_transport_checks: done.iter().map(|d| d.mass_transport.len()).sum(),
        mass_transport_exact: done.iter().all(|d| d.mass_transport.iter().all(|(s, r)| s == r)),
        bound_check,
        domination,
        witness,
    })
}

/// Reads a bundle manifest and re-verifies its checksums; returns the
/// manifest, the summary and the paths whose content no longer matches.
pub fn load_bundle(out: &Path) -> Result<(Manifest, EnsembleSummary, Vec<String>), PipelineError> {
    let read = |name: &str| -> Result<String, PipelineError> {
        let path = out.join(name);
        fs::read_to_string(&path).map_err(io_err(&path))
    };
    let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)
        .map_err(|e| PipelineError::Bundle(format!("manifest.json: {e}")))?;
    let summary: EnsembleSummary = serde_json::from_str(&read("summary.json")?)
        .map_err(|e| PipelineError::Bundle(format!("summary.json: {e}")))?;
    let actual = checksum_tree(out).map_err(io_err(out))?;
    let mut mismatched: Vec<String> =
        manifest.files.iter().filter(|(k, v)| actual.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect();
    mismatched.extend(actual.keys().filter(|k| !manifest.files.contains_key(*k)).cloned());
    Ok((manifest, summary, mismatched))
}
