use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gasket_forms::experiments::{run_and_write, ExperimentConfig, ExperimentError, Suite};
use gasket_forms::gasket::Gasket;

#[derive(Parser)]
#[command(
    version,
    about = "Besov semi-norms, traces and jumping kernels on the Sierpinski gasket"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annulus / Monte Carlo vs discrete semi-norm, cutoff robustness, Hölder ratio
    Equivalence(RunArgs),
    /// Exact energy monotonicity and weighted tail sums
    Monotone(RunArgs),
    /// Termwise trace inequality on the bottom edge
    Trace(RunArgs),
    /// Weighted kernel energies along the schedule
    Kernels(RunArgs),
    /// Every suite, in order
    All(RunArgs),
    /// Vertex table of V_level as CSV
    DumpGasket {
        #[arg(long, default_value_t = 3)]
        level: u32,
        /// Output file; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; built-in defaults when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Grid and quadrature level (overrides the config)
    #[arg(long)]
    level: Option<u32>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    workers: Option<usize>,
}

fn run(suites: &[Suite], args: RunArgs) -> Result<bool, ExperimentError> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    }
    .with_overrides(args.seed, args.level);
    config.validate()?;
    let out = args.out.unwrap_or_else(|| PathBuf::from(&config.output));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| std::io::Error::other(e.to_string()))?;
    let manifest = pool.install(|| run_and_write(suites, &config, &out))?;
    for s in &manifest.suites {
        for v in &s.verdicts {
            let status = match (v.passed, v.informational) {
                (true, _) => "PASS",
                (false, true) => "INFO",
                (false, false) => "FAIL",
            };
            println!("{status} {}/{}: {}", s.suite, v.name, v.detail);
        }
    }
    println!("results in {}", out.display());
    Ok(manifest.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Equivalence(a) => run(&[Suite::Equivalence], a),
        Command::Monotone(a) => run(&[Suite::Monotone], a),
        Command::Trace(a) => run(&[Suite::Trace], a),
        Command::Kernels(a) => run(&[Suite::Kernels], a),
        Command::All(a) => run(&Suite::ALL, a),
        Command::DumpGasket { level, out } => dump(level, out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dump(level: u32, out: Option<PathBuf>) -> Result<bool, ExperimentError> {
    let gasket = Gasket::new(level)?;
    let write = |w: Box<dyn std::io::Write>| gasket.write_vertex_csv(w).map_err(std::io::Error::other);
    match out {
        Some(path) => write(Box::new(std::fs::File::create(path)?))?,
        None => write(Box::new(std::io::stdout().lock()))?,
    }
    Ok(true)
}
