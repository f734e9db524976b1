use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use torusmatch::allocation::Scheme;
use torusmatch::fractional::RotationPolicy;
use torusmatch_cli::pipeline::{format_issues, load_bundle, run_pipeline, FitOutcome};
use torusmatch_cli::{validate_config, ExperimentConfig};

#[derive(Parser)]
#[command(name = "torusmatch", version, about = "Factor matching experiments on a discretized torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write a result bundle.
    Run(RunArgs),
    /// Check a config file and print the normalized form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify a bundle's checksums and print its summary.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    policy: Option<RotationPolicy>,
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    validate_config(path).map_err(|issues| {
        eprintln!("{}: invalid configuration:\n{}", path.display(), format_issues(&issues));
        ExitCode::from(1)
    })
}

fn run(args: RunArgs) -> Result<(), ExitCode> {
    let mut config = load(&args.config)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(scheme) = args.scheme {
        config.run.scheme = scheme;
    }
    if let Some(policy) = args.policy {
        config.run.policy = policy;
    }
    let out = args.out.or_else(|| config.run.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run_pipeline(&config, workers, &out).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    })?;
    let m = &outcome.manifest;
    println!(
        "{}: {}/{} realizations in {:.1}s",
        out.display(),
        m.realizations_succeeded,
        m.realizations_requested,
        m.elapsed_seconds
    );
    for f in &m.failures {
        eprintln!("realization {} failed: {}", f.realization, f.error);
    }
    if m.failures.is_empty() {
        Ok(())
    } else {
        Err(ExitCode::from(2))
    }
}

fn report(out: PathBuf) -> Result<(), ExitCode> {
    let (manifest, summary, mismatched) = load_bundle(&out).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    println!("bundle      {}", out.display());
    println!("config hash {}", manifest.config_hash);
    println!("version     {}", manifest.tool_version);
    println!("realizations {}/{}", manifest.realizations_succeeded, manifest.realizations_requested);
    for (name, fit) in &summary.fits {
        match fit {
            FitOutcome::Fit(f) => println!(
                "fit {name:<18} gamma {:.3} +- {:.3}  scale {:.4}  ({} points, r in [{}, {}])",
                f.gamma, f.gamma_stderr, f.scale, f.points, f.window.0, f.window.1
            ),
            FitOutcome::Refused(why) => println!("fit {name:<18} refused: {why}"),
        }
    }
    println!("vertex sum violations {}", summary.vertex_sum_violations);
    println!("mass transport {} checks, exact: {}", summary.mass_transport_checks, summary.mass_transport_exact);
    if let Some(b) = &summary.bound_check {
        println!("two-sided bound over {} window radii: pass {}", b.window_radii.len(), b.pass);
    }
    if let Some(d) = &summary.domination {
        println!("tail below {} baseline over {} radii: pass {}", d.baseline.name(), d.radii.len(), d.pass);
    }
    if let Some(w) = &summary.witness {
        println!(
            "witness: {} realizations, max density {:.4}, components within classes {}",
            w.realizations, w.max_density, w.all_components_within_classes
        );
    }
    for f in &manifest.failures {
        println!("failed realization {}: {}", f.realization, f.error);
    }
    for path in &mismatched {
        eprintln!("checksum mismatch: {path}");
    }
    if mismatched.is_empty() && manifest.failures.is_empty() {
        Ok(())
    } else {
        Err(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => load(&config).map(|c| print!("{}", c.to_toml())),
        Command::Report { out } => report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
