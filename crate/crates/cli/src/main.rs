mod commands;
mod output;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "molfield", version, about = "Molecular signal and bit error rates over a Poisson field of transmitters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Single-transmitter channel response at distance --r0.
    Channel,
    /// Expected nearest, others and total observations versus time.
    Expected,
    /// Bit error rate versus threshold: analytic and Poisson-draw Monte Carlo.
    Ber,
    /// Expectation-sum Monte Carlo of the observations versus time.
    SimMc,
    /// Brownian particle simulation of one sampled transmitter field.
    SimParticle,
    /// Reproduce the dataset behind one published figure.
    Figure {
        #[arg(value_enum)]
        preset: Preset,
    },
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Channel => "channel",
            Command::Expected => "expected",
            Command::Ber => "ber",
            Command::SimMc => "sim-mc",
            Command::SimParticle => "sim-particle",
            Command::Figure { .. } => "figure",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
            Preset::Fig8 => "fig8",
            Preset::Fig9 => "fig9",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Flags {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for the CSV output.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo realizations (0 disables simulation columns).
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    /// Particle simulation time step, s.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Transmitter densities per µm³, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "MOLFIELD_THREADS")]
    pub threads: Option<usize>,
    /// Largest threshold in BER sweeps (chosen from the data when absent).
    #[arg(long, global = true)]
    pub max_threshold: Option<u32>,
    /// Transmitter distance for the channel subcommand, µm.
    #[arg(long, global = true)]
    pub r0: Option<f64>,
}

impl Flags {
    /// The flags that influence results, for the metadata line. Thread
    /// count and paths are left out since they do not change any number.
    pub fn metadata(&self) -> Value {
        json!({
            "realizations": self.realizations,
            "dt": self.dt,
            "lambda": self.lambda,
            "max_threshold": self.max_threshold,
            "r0": self.r0,
        })
    }
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<molfield::Error> for Failure {
    fn from(e: molfield::Error) -> Self {
        let code = match e {
            molfield::Error::NonConvergence { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<Box<dyn std::error::Error>> for Failure {
    fn from(e: Box<dyn std::error::Error>) -> Self {
        Self::usage(e.to_string())
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads(cli.flags.threads)?;
    let tables = match cli.command {
        Command::Figure { preset } => presets::figure(preset, &cli.flags)?,
        cmd => {
            let path = cli
                .flags
                .config
                .as_ref()
                .ok_or_else(|| Failure::usage(format!("{} needs --config PATH", cmd.name())))?;
            let mut cfg = molfield::config::ExperimentConfig::load(path)?;
            if let Some(seed) = cli.flags.seed {
                cfg.seed = seed;
            }
            let ctx = commands::Context { command: cmd.name(), cfg, flags: cli.flags.clone() };
            match cmd {
                Command::Channel => commands::channel(&ctx)?,
                Command::Expected => commands::expected(&ctx)?,
                Command::Ber => commands::ber(&ctx)?,
                Command::SimMc => commands::sim_mc(&ctx)?,
                Command::SimParticle => commands::sim_particle(&ctx)?,
                Command::Figure { .. } => unreachable!(),
            }
        }
    };
    for path in output::write_bundle(&cli.flags.out, &tables)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
