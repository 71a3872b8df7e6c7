use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod commands;
mod config;
mod error;

use commands::Ctx;
use config::{Overrides, RunConfig};
use error::{CliError, CliResult};

/// Offline guarded safe RL pipeline.
#[derive(Debug, Parser)]
#[command(name = "guardrl", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a behavior dataset from the synthetic environment.
    GenData,
    /// Fit the OOD guardian on the training split.
    FitGuardian,
    /// Fit the kNN dynamics model.
    FitModel,
    /// Train one policy per configured seed.
    Train,
    /// Evaluate trained policies and the behavior-cloning baseline.
    Eval,
    /// Aggregate per-seed reports into summary tables.
    Report {
        /// Report files; defaults to every report_seed*.json in the output directory.
        paths: Vec<PathBuf>,
    },
    /// Run every stage in order.
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::FitGuardian => "fit-guardian",
            Command::FitModel => "fit-model",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Report { .. } => "report",
            Command::Run => "run",
        }
    }
}

fn load(cli: &Cli) -> CliResult<Ctx> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let overrides = Overrides { seed: cli.seed, output: cli.output.clone() };
    Ok(Ctx::new(RunConfig::load(path, &overrides)?, cli.quiet))
}

fn dispatch(cli: &Cli, ctx: Option<&Ctx>) -> CliResult<()> {
    let ctx = || ctx.ok_or_else(|| CliError::Config("--config is required".into()));
    match &cli.command {
        Command::GenData => commands::gen_data(ctx()?),
        Command::FitGuardian => commands::fit_guardian(ctx()?),
        Command::FitModel => commands::fit_model(ctx()?),
        Command::Train => commands::train(ctx()?),
        Command::Eval => commands::eval(ctx()?),
        Command::Run => commands::run_all(ctx()?),
        Command::Report { paths } => {
            if cli.config.is_some() {
                let c = ctx()?;
                commands::report(&c.config.output_dir, paths, &c.config_sha256)
            } else if let Some(out) = &cli.output {
                // Explicit report files need no config; --output alone suffices.
                commands::report(out, paths, "")
            } else {
                Err(CliError::Config("report needs --config or --output".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match cli.config.as_ref().map(|_| load(&cli)).transpose() {
        Ok(ctx) => ctx,
        Err(e) => return fail(&cli, None, e),
    };
    match dispatch(&cli, ctx.as_ref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&cli, ctx.as_ref(), e),
    }
}

/// `output_dir` of a config that parsed as JSON but failed validation.
fn raw_output_dir(path: &std::path::Path) -> Option<PathBuf> {
    let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path).ok()?).ok()?;
    value.get("output_dir")?.as_str().map(PathBuf::from)
}

fn fail(cli: &Cli, ctx: Option<&Ctx>, e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    let dir = ctx
        .map(|c| c.config.output_dir.clone())
        .or_else(|| cli.output.clone())
        .or_else(|| raw_output_dir(cli.config.as_deref()?));
    // An infeasible run still wrote its outputs; that is a result, not a crash.
    if let (Some(dir), false) = (dir, matches!(e, CliError::Infeasible(_))) {
        artifacts::write_failure_marker(&dir, cli.command.name(), &e);
    }
    e.exit_code()
}
