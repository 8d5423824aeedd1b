//! Command-line driver for `mvf-core`: configuration, run directories,
//! CSV reports and run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Ctx, Outcome};
use config::Loaded;
use output::{config_hash, now, Artifacts, RunManifest, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mvf", version, about = "Magneto-viscoelastic flow simulation and optimal control")]
pub struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for random controls and directions, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Forward solve; writes the trajectory, energy.csv and norms.csv.
    Simulate,
    /// Taylor test of the adjoint gradient.
    GradientCheck {
        /// Halve the adjoint contribution (negative control for the check).
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Steepest descent for the field control.
    OptimizeField,
    /// Projected gradient for box-constrained coil intensities.
    OptimizeCoils,
    /// Stability estimates for pairs of controls.
    StabilityProbe,
    /// Energy and norm reports for a stored trajectory.
    EnergyReport,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::GradientCheck { .. } => "gradient-check",
            Command::OptimizeField => "optimize-field",
            Command::OptimizeCoils => "optimize-coils",
            Command::StabilityProbe => "stability-probe",
            Command::EnergyReport => "energy-report",
        }
    }
}

fn classify(e: &CliError) -> (i32, Status) {
    use mvf_core::Error as E;
    match e {
        CliError::Config(_) => (EXIT_CONFIG, Status::InputError),
        CliError::Io(_) => (EXIT_ERROR, Status::IoError),
        CliError::Core(c) => {
            let mut root = c;
            while let E::Step { source, .. } = root {
                root = source;
            }
            match root {
                E::Structural(_) | E::Usage(_) | E::Format(_) => (EXIT_CONFIG, Status::InputError),
                E::Io(_) => (EXIT_ERROR, Status::IoError),
                _ => (EXIT_SOLVER, Status::SolverFailure),
            }
        }
    }
}

/// Loads the configuration from `--config`, the environment and flags.
pub fn load_config<I>(cli: &Cli, env: I) -> Result<Loaded, config::ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut loaded = config::load(cli.config.as_deref(), env)?;
    if let Some(s) = cli.seed {
        loaded.config.seed = s;
    }
    if let Some(o) = &cli.output {
        loaded.config.output.directory = o.to_string_lossy().into_owned();
    }
    Ok(loaded)
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let loaded = match load_config(&cli, std::env::vars()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cfg = &loaded.config;
    // `--output` is relative to the working directory, the config key to the file
    let out = match &cli.output {
        Some(o) => o.clone(),
        None => loaded.resolve(&cfg.output.directory),
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_ERROR;
    }
    let started = now();
    let corrupt_adjoint = matches!(cli.command, Command::GradientCheck { corrupt_adjoint: true });
    let mut ctx = Ctx {
        loaded: &loaded,
        out: Artifacts::new(out),
        corrupt_adjoint,
    };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&mut ctx),
        Command::GradientCheck { .. } => commands::gradient_check(&mut ctx),
        Command::OptimizeField => commands::optimize_field_cmd(&mut ctx),
        Command::OptimizeCoils => commands::optimize_coils_cmd(&mut ctx),
        Command::StabilityProbe => commands::stability(&mut ctx),
        Command::EnergyReport => commands::energy(&mut ctx),
    };
    let (code, status, message) = match result {
        Ok(Outcome::Ok(m)) => (EXIT_OK, Status::Success, m),
        Ok(Outcome::CheckFailed(m)) => (EXIT_CHECK, Status::CheckFailed, m),
        Ok(Outcome::NotConverged(m)) => (EXIT_SOLVER, Status::NotConverged, m),
        Err(e) => {
            let (code, status) = classify(&e);
            (code, status, e.to_string())
        }
    };
    let name = cli.command.name();
    if code == EXIT_OK {
        if !cli.quiet {
            println!("{name}: {message}");
        }
    } else {
        eprintln!("error: {name}: {message}");
    }
    let manifest = RunManifest {
        tool: "mvf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        started,
        finished: now(),
        status,
        message: Some(message),
        artifacts: Vec::new(),
    };
    if let Err(e) = ctx.out.finish(manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return EXIT_ERROR;
    }
    code
}
