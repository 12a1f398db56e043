use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resonator::workflow::{self, Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "resonator", version, about = "Spatio-temporal resonator models: simulate, fit, smooth, predict")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample observations and the true field from a model config
    Simulate(Common),
    /// Fit model parameters by maximum marginal likelihood
    Fit(Common),
    /// Filter and smooth; write posterior grids
    Smooth(Common),
    /// Filter only; write causal (predictive) grids
    Predict(Common),
    /// Tabulate the model's space-time spectral density
    Spectrum(Common),
    /// Check orthonormality and eigen-residuals of the spatial basis
    BasisCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Model/run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Observation CSV with columns t, x1[, x2[, x3]], y
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Evaluation grid points per axis
    #[arg(long)]
    grid: Option<usize>,
    /// Comma-separated component names, or "all"
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<String>>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Smooth(a) => (Command::Smooth, a),
        Cmd::Predict(a) => (Command::Predict, a),
        Cmd::Spectrum(a) => (Command::Spectrum, a),
        Cmd::BasisCheck(a) => (Command::BasisCheck, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        restarts: args.restarts,
        grid: args.grid,
        components: args.components,
        data: args.data,
    };
    let mut log: Box<dyn Write> = if args.verbose {
        Box::new(std::io::stderr())
    } else {
        Box::new(std::io::sink())
    };
    let result = RunConfig::load(&args.config).and_then(|mut cfg| {
        cfg.apply(&overrides);
        workflow::execute(command, &cfg, &args.out, &mut log)
    });
    match result {
        Ok(report) => {
            if args.verbose {
                for f in &report.files {
                    eprintln!("wrote {}", f.display());
                }
            }
            if report.status != workflow::EXIT_OK {
                eprintln!("error: {}", report.message);
            }
            ExitCode::from(report.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(workflow::exit_code(&e) as u8)
        }
    }
}
