//! `dynlead`: generate synthetic heads, analyze dynamic lead field mappings
//! and verify the model identities by simulation.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, GeometryConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad config, missing or inconsistent input files, invalid models.
    Input(String),
    Output(String),
    Model(dynlead::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Output(m) => f.write_str(m),
            CliError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl From<dynlead::Error> for CliError {
    fn from(e: dynlead::Error) -> Self {
        CliError::Model(e)
    }
}

#[derive(Parser)]
#[command(name = "dynlead", version, about = "Dynamic lead field mapping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write source positions, orientations, graph and lead field.
    Generate(CommonArgs),
    /// Rank table, singular spectra and sensitivity maps.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Build stacks larger than analysis.memory_budget_mib.
        #[arg(long)]
        allow_large: bool,
    },
    /// Monte Carlo identity suite; exits 1 if any check fails.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Add the naive time-reversal block, which should fail.
        #[arg(long)]
        negative_control: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Geometry seed for generate/analyze, simulation seed for verify.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative rank tolerance for analyze, covariance tolerance for verify.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Generate,
    Analyze,
    Verify,
}

fn prepare(args: &CommonArgs, mode: Mode) -> Result<ExperimentConfig, CliError> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot configure threads: {e}")))?;
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        match (mode, &mut cfg.geometry) {
            (Mode::Verify, _) => cfg.oracle.seed = seed,
            (_, GeometryConfig::Synthetic(s)) => s.seed = seed,
            (_, GeometryConfig::Import(_)) => eprintln!("warning: --seed has no effect on imported geometry"),
        }
    }
    if let Some(t) = args.tolerance {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::Input(format!("--tolerance must be finite and nonnegative, got {t}")));
        }
        match mode {
            Mode::Analyze => cfg.analysis.rank_tolerance = dynlead::analysis::RankTolerance::Relative(t),
            Mode::Verify => cfg.oracle.cross_cov_tolerance = t,
            Mode::Generate => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Generate(args) => commands::generate(&prepare(&args, Mode::Generate)?).map(|_| true),
        Command::Analyze { common, allow_large } => {
            commands::analyze(&prepare(&common, Mode::Analyze)?, allow_large).map(|_| true)
        }
        Command::Verify { common, negative_control } => {
            let mut cfg = prepare(&common, Mode::Verify)?;
            cfg.oracle.negative_control |= negative_control;
            commands::verify(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
