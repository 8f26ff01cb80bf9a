use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pulsemech::runner::{self, ExperimentConfig, Preset};
use pulsemech::{Error, Result};

/// Pulsed optomechanical measurement simulator.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent
    /// (thermal, tomography, common-mode, decoherence, noise-floor).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trains per batch (pulse pairs for `thermal`).
    #[arg(long, global = true)]
    trains: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Half-period thermal histogram and calibration fit.
    Thermal,
    /// Conditional-state tomography over the configured angles.
    Tomo,
    /// Conditional width against delay.
    Decoherence,
    /// Off-resonance reference: conditional vs single-pulse noise.
    NoiseFloor,
    /// Two-pulse width against post-selection threshold.
    Sweep,
    /// Print the effective configuration as TOML and exit.
    Config,
}

impl Command {
    fn default_preset(self) -> Preset {
        match self {
            Command::Thermal => Preset::Thermal,
            Command::Tomo | Command::Sweep | Command::Config => Preset::Tomography,
            Command::Decoherence => Preset::Decoherence,
            Command::NoiseFloor => Preset::NoiseFloor,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::preset(p.parse()?),
        (None, None) => ExperimentConfig::preset(cli.command.default_preset()),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(t) = cli.trains {
        c.trains = t;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn print<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let c = load(cli)?;
    log::debug!("writing to {}", c.output_dir.display());
    match cli.command {
        Command::Thermal => print(&runner::thermal(&c)?),
        Command::Tomo => print(&runner::tomo(&c)?),
        Command::Decoherence => print(&runner::decoherence(&c)?),
        Command::NoiseFloor => print(&runner::noise_floor(&c)?),
        Command::Sweep => print(&runner::sweep(&c)?),
        Command::Config => {
            print!("{}", c.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
