use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uot_cli::experiment::apply_overrides;
use uot_cli::{run_experiment, CliError, ExperimentConfig};

/// Entropic (unbalanced) optimal transport experiments.
#[derive(Parser)]
#[command(name = "uot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-marginal transport with divergence penalties.
    Transport(RunArgs),
    /// Barycenter of several densities.
    Barycenter(RunArgs),
    /// Gradient flow by successive transport steps.
    Flow(RunArgs),
    /// Transport with a functional of the total mass.
    Mass(RunArgs),
    /// Coupling on an abstract space observed through maps.
    Generalized(RunArgs),
    /// Color transfer between two PPM images.
    Colortransfer(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the regularization of the configuration.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Overrides the iteration budget.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Overrides the seed of the synthetic generators.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::Transport(a) => ("transport", a),
            Command::Barycenter(a) => ("barycenter", a),
            Command::Flow(a) => ("flow", a),
            Command::Mass(a) => ("mass", a),
            Command::Generalized(a) => ("generalized", a),
            Command::Colortransfer(a) => ("colortransfer", a),
        }
    }
}

fn run(kind: &str, args: RunArgs) -> Result<serde_json::Value, CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.problem.kind() != kind {
        return Err(CliError::config(format!(
            "configuration describes a `{}` problem, not `{kind}`",
            config.problem.kind()
        )));
    }
    apply_overrides(&mut config, args.epsilon, args.max_iter, args.seed);
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    run_experiment(&config, &base, &args.out)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
