use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gkmc::commands;
use gkmc::config::{ConfigError, ExperimentConfig};
use gkmc::pipeline::{Experiment, PipelineError};

#[derive(Parser)]
#[command(name = "gkmc", version, about = "Glauber-Kawasaki lattice dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML), or a JSON5 rate file for the rate subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of KMC replicas.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check non-degeneracy, reversibility, gradient condition and Green-Kubo.
    VerifyRates,
    /// Coefficients of P and f.
    Polynomials,
    /// Zeros of f and lambda0.
    Lambda0,
    /// KMC replicas with snapshot files.
    Simulate,
    /// Discrete reaction-diffusion solve.
    Pde,
    /// Exact law on a tiny torus and the entropy production check.
    Master,
    /// Boltzmann-Gibbs functional.
    Bg,
    /// Particle system vs PDE vs sphere law.
    Compare,
    /// `compare` over a list of lattice sizes.
    Sweep,
}

fn experiment(cli: &Cli, path: &Path) -> Result<Experiment, PipelineError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(r) = cli.replicas {
        config.replicas = r;
    }
    Experiment::new(config)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, PipelineError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("--config is required".into()))?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    let rates_only = matches!(
        cli.command,
        Command::VerifyRates | Command::Polynomials | Command::Lambda0
    );
    if rates_only {
        let input = commands::load_rates_input(path, cli.seed)?;
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        return match cli.command {
            Command::VerifyRates => commands::verify_rates(&input, &out),
            Command::Polynomials => commands::polynomials(&input, &out),
            _ => commands::lambda0(&input, &out),
        };
    }
    let exp = experiment(cli, path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| exp.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Simulate => commands::simulate(&exp, &out),
        Command::Pde => commands::pde(&exp, &out),
        Command::Master => commands::master(&exp, &out),
        Command::Bg => commands::bg(&exp, &out),
        Command::Compare => commands::compare(&exp, &out),
        Command::Sweep => commands::sweep(&exp, &out),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")) {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
