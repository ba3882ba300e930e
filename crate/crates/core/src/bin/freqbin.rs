use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use freqbin::output::emit_outputs;
use freqbin::scenario::{load_config, run_scenario, Kind, RunOptions};
use freqbin::Error;

/// Frequency-bin entanglement simulator and estimator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Joint spectral intensity and Schmidt bound.
    Jsi(RunArgs),
    /// Coincidence dip against modulator offset.
    Dip(RunArgs),
    /// Two-pair phase fringe and visibility.
    Fringe(RunArgs),
    /// Maximum-likelihood two-qubit tomography.
    Tomo(RunArgs),
    /// Qutrit CGLMP parameter from counts or simulation.
    Cglmp(RunArgs),
    /// Free-form element chain.
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` in the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Count table replacing the scenario's fixture (tomo, cglmp).
    #[arg(long)]
    fixture: Option<PathBuf>,
}

fn run(kind: Kind, args: &RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    if cfg.kind != kind {
        return Err(Error::Validation(vec![format!(
            "scenario {} is of kind {}, not {}",
            args.config.display(),
            cfg.kind.name(),
            kind.name()
        )]));
    }
    let mut opts = RunOptions::for_config(&args.config);
    opts.seed = args.seed;
    opts.fixture = args.fixture.clone();
    let bundle = run_scenario(&cfg, &opts)?;

    let out = match (&args.out, &cfg.output.dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => opts.base_dir.join(d),
        (None, None) => PathBuf::from("out").join(kind.name()),
    };
    let written = emit_outputs(&bundle, &out, cfg.output.plots)?;
    for (label, value) in &bundle.scalars {
        println!("{label} = {value}");
    }
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Jsi(a) => (Kind::Jsi, a),
        Command::Dip(a) => (Kind::Dip, a),
        Command::Fringe(a) => (Kind::Fringe, a),
        Command::Tomo(a) => (Kind::Tomo, a),
        Command::Cglmp(a) => (Kind::Cglmp, a),
        Command::Simulate(a) => (Kind::Simulate, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Validation(_) | Error::Parse { .. } => 2,
                Error::NonConvergence { .. } => 3,
                _ => 1,
            })
        }
    }
}
