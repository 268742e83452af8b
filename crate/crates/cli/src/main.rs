//! `dmcanc` command-line runner.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 numerical abort (non-finite signal or weight, singular compensation fit).

mod commands;
mod scenario;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmcanc::PathSynthesisSpec;

use crate::scenario::Overrides;

/// Invalid user configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "dmcanc", version, about = "Distributed multichannel active noise control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every campaign entry of a scenario file and write CSV artifacts.
    Run {
        scenario: PathBuf,
        /// Seed for path synthesis and the noise source.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Node count.
        #[arg(long = "K", value_name = "K")]
        nodes: Option<usize>,
        #[arg(long, env = "DMCANC_OUT_DIR")]
        out_dir: Option<PathBuf>,
        /// `key.path=value`, e.g. `campaign.0.mu=2e-6` (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Synthesize a scene and store it as an archive.
    MakeScene(MakeScene),
    /// Fit compensation filters to a stored scene.
    TrainCompensation {
        scene: PathBuf,
        #[arg(long)]
        compensation_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MakeScene {
    #[arg(long = "K", value_name = "K")]
    nodes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16000.0)]
    fs: f64,
    /// Base synthesis parameters (TOML); the flags below override them.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    secondary_len: Option<usize>,
    #[arg(long)]
    delay_min: Option<usize>,
    #[arg(long)]
    delay_max: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    cross_attenuation: Option<f64>,
    #[arg(long)]
    secondary_gain: Option<f64>,
    #[arg(long)]
    primary_len: Option<usize>,
    /// Build cross paths as self path * c_mk with filters of this length.
    #[arg(long, value_name = "L_C")]
    factorable: Option<usize>,
    /// Where to store the generating filters of a factorable scene.
    #[arg(long, requires = "factorable")]
    generators_out: Option<PathBuf>,
    /// Secondary-path estimation error in dB.
    #[arg(long, allow_negative_numbers = true)]
    mismatch_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    mismatch_seed: u64,
}

impl MakeScene {
    fn spec(&self) -> anyhow::Result<PathSynthesisSpec> {
        let mut spec = match &self.spec {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {}", p.display(), e.message())))?
            }
            None => PathSynthesisSpec::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { spec.$f = v; })* };
        }
        take!(seed, secondary_len, delay_min, delay_max, decay, cross_attenuation, secondary_gain, primary_len);
        Ok(spec)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dmcanc::Error>() {
            return match e {
                dmcanc::Error::Config(_) | dmcanc::Error::Input(_) => 2,
                dmcanc::Error::NonFinite { .. } | dmcanc::Error::Singular { .. } => 3,
                _ => 1,
            };
        }
    }
    1
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario, seed, duration, nodes, out_dir, overrides } => commands::run(commands::RunArgs {
            scenario,
            out_dir,
            overrides: Overrides { seed, duration_s: duration, nodes, pairs: overrides },
        }),
        Command::MakeScene(args) => {
            let spec = args.spec()?;
            commands::make_scene(commands::SceneArgs {
                spec,
                nodes: args.nodes,
                fs: args.fs,
                factorable: args.factorable,
                mismatch_db: args.mismatch_db,
                mismatch_seed: args.mismatch_seed,
                out: args.out,
                generators_out: args.generators_out,
            })
        }
        Command::TrainCompensation { scene, compensation_len, out } => {
            commands::train_compensation(&scene, compensation_len, &out)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
