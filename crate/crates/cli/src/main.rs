use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codecurate::recipes::{run_recipe, Recipe};
use codecurate::{CliResult, Phase, Pipeline, PipelineConfig, Stage};
use serde_json::json;

#[derive(Parser)]
#[command(name = "codecurate", version, about = "Curate code pretraining corpora")]
struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// More logging; repeat for trace output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set dedup.threshold=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single stage.
    Run {
        stage: String,
        /// Pretraining phase for group, pack and schedule.
        #[arg(long, default_value_t = 1)]
        phase: u8,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run a named multi-stage recipe.
    Recipe {
        name: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the resolved config and its hash.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn execute(cmd: Command) -> CliResult<serde_json::Value> {
    match cmd {
        Command::Run { stage, phase, cfg } => {
            let stage: Stage = stage.parse()?;
            let phase = Phase::from_number(phase)?;
            let p = Pipeline::new(PipelineConfig::load(&cfg.config, &cfg.overrides)?)?;
            Ok(json!(p.run_stage(stage, phase)?))
        }
        Command::Recipe { name, cfg } => {
            let recipe: Recipe = name.parse()?;
            let p = Pipeline::new(PipelineConfig::load(&cfg.config, &cfg.overrides)?)?;
            let stages = run_recipe(&p, recipe)?;
            Ok(json!({"recipe": recipe.name(), "stages": stages}))
        }
        Command::Config { cfg } => {
            let c = PipelineConfig::load(&cfg.config, &cfg.overrides)?;
            Ok(json!({"config_hash": c.content_hash(), "config": c}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match execute(cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
