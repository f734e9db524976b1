use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use torusmatch::allocation::Scheme;
use torusmatch_cli::config::{Baseline, ExperimentConfig, RadiiSection, RunSection, TorusSection, WitnessSection};
use torusmatch_cli::pipeline::{load_bundle, preconditions, run_pipeline};
use torusmatch_cli::validate_config;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn small(n: usize, realizations: u64) -> ExperimentConfig {
    ExperimentConfig {
        torus: TorusSection { d: 2, side: 4.0, grid: 8 },
        run: RunSection {
            n,
            realizations,
            seed: 11,
            scheme: Scheme::Stable,
            policy: Default::default(),
            baselines: vec![Baseline::Stable, Baseline::Optimal],
            output: None,
            export_allocations: false,
            mass_transport_radii: 5,
        },
        radii: RadiiSection { start: 0.0, step: 0.1, count: 40 },
        witness: None,
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_torusmatch"))
}

#[test]
fn fixtures_validate_and_round_trip() {
    for name in ["acceptance-d3.toml", "nearest-d2.toml", "witness-d3.toml", "smoke.toml"] {
        let c = validate_config(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e:?}"));
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c, "{name}");
    }
}

#[test]
fn single_point_run_gives_step_tail() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&small(1, 1), 1, dir.path()).unwrap();
    assert!(out.manifest.failures.is_empty());
    let matching = fs::read_to_string(dir.path().join("realizations/r0000/matching.csv")).unwrap();
    let row: Vec<&str> = matching.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["0", "0"]);
    let t: f64 = row[2].parse().unwrap();
    let tail = fs::read_to_string(dir.path().join("tail_construction.csv")).unwrap();
    for line in tail.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[1], if f[0] < t { 1.0 } else { 0.0 });
    }
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut c = small(8, 5);
    c.witness = Some(WitnessSection {
        epsilon: 0.5,
        reach: None,
        separation: None,
        degree_cutoff: None,
        pilot_realizations: 2,
    });
    let x = run_pipeline(&c, 1, a.path()).unwrap();
    let y = run_pipeline(&c, 3, b.path()).unwrap();
    assert!(x.manifest.files.len() > 10);
    assert_eq!(x.manifest.files, y.manifest.files);
    assert_eq!(x.manifest.config_hash, y.manifest.config_hash);
}

#[test]
fn failed_realizations_are_recorded_and_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(8, 3);
    // every pair of points is within 2N, so D = 1 deletes every vertex
    c.witness = Some(WitnessSection {
        epsilon: 0.5,
        reach: Some(0.5),
        separation: Some(100.0),
        degree_cutoff: Some(1),
        pilot_realizations: 1,
    });
    let out = run_pipeline(&c, 2, dir.path()).unwrap();
    assert_eq!(out.manifest.failures.len(), 3);
    assert!(out.manifest.failures[0].error.contains("deletes every vertex"));
    assert!(!dir.path().join("realizations/r0000").exists());
    let (_, summary, mismatched) = load_bundle(dir.path()).unwrap();
    assert_eq!(summary.realizations_succeeded, 0);
    assert!(mismatched.is_empty());
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&small(4, 2), 1, dir.path()).unwrap();
    let ok = bin().args(["report", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    fs::write(dir.path().join("realizations/r0001/points.csv"), "tampered\n").unwrap();
    let bad = bin().args(["report", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("r0001/points.csv"));
}

#[test]
fn foreign_output_directory_is_not_clobbered() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "keep").unwrap();
    assert!(run_pipeline(&small(4, 1), 1, dir.path()).is_err());
    assert_eq!(fs::read_to_string(dir.path().join("notes.txt")).unwrap(), "keep");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let mut c = small(3, 1);
    c.torus.grid = 4;
    fs::write(&cfg, c.to_toml()).unwrap();
    let v = bin().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(v.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&v.stderr).contains("run.n"));

    let good = dir.path().join("good.toml");
    fs::write(&good, small(4, 2).to_toml()).unwrap();
    let out = dir.path().join("bundle");
    let r = bin()
        .args(["run", "--workers", "2", "--seed", "5", "--scheme", "dyadic", "--policy", "first", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let (manifest, _, _) = load_bundle(&out).unwrap();
    assert_eq!(manifest.config.run.seed, 5);
    assert_eq!(manifest.config.run.scheme, Scheme::Dyadic);
    assert_eq!(manifest.workers, 2);
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        (1usize..5, 0.5f64..10.0, 1usize..40),
        (0usize..70, 0u64..3, any::<bool>(), any::<bool>()),
        (-0.5f64..1.0, -0.1f64..0.2, 0usize..5),
        proptest::option::of((
            0.0f64..1.2,
            proptest::option::of(0.01f64..2.0),
            proptest::option::of(0.5f64..80.0),
            proptest::option::of(0usize..4),
        )),
    )
        .prop_map(|((d, side, grid), (n, realizations, dyadic, optimal), (start, step, count), w)| {
            ExperimentConfig {
                torus: TorusSection { d, side, grid },
                run: RunSection {
                    n,
                    realizations,
                    seed: 0,
                    scheme: if dyadic { Scheme::Dyadic } else { Scheme::Stable },
                    policy: Default::default(),
                    baselines: if optimal { vec![Baseline::Optimal] } else { vec![] },
                    output: None,
                    export_allocations: false,
                    mass_transport_radii: 20,
                },
                radii: RadiiSection { start, step, count },
                witness: w.map(|(epsilon, reach, separation, degree_cutoff)| WitnessSection {
                    epsilon,
                    reach,
                    separation,
                    degree_cutoff,
                    pilot_realizations: 1,
                }),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    // The validator accepts only configs whose pipeline preconditions hold.
    #[test]
    fn validator_agrees_with_pipeline(c in arb_config()) {
        if c.issues().is_empty() {
            prop_assert!(preconditions(&c).is_ok(), "{:?}", preconditions(&c).err());
        }
    }
}
