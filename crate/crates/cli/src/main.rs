//! `deepair`: synthesize a city, pre-process it, train and apply the models.
//!
//! Every subcommand reads the same TOML run configuration. Exit status is 0 on
//! success, 2 for configuration, validation and I/O errors and 3 when a
//! computation turns non-finite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepair::{Error, Result};

use config::{ModelKind, RunConfig, Task};

#[derive(Parser)]
#[command(name = "deepair", about = "Fine-grained urban air pollution estimation and forecasting")]
#[command(disable_version_flag = true)]
struct Cli {
    /// Print the crate version and the format stamps of every output file.
    #[arg(long)]
    version: bool,
    /// Run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city: observations, station registry, truth cube.
    Synth,
    /// Build the estimation and forecast cubes from raw observations.
    Preprocess,
    /// Train a model and write checkpoint, report and split.
    Train(TrainArgs),
    /// MAPE table for one or more trained runs.
    Evaluate,
    /// Estimate every grid cell at one hour.
    EstimateMap,
    /// Forecast the next hours at every station.
    Forecast,
    /// Per-channel gradient saliency scores.
    Saliency,
    /// Per-season mean estimation rasters.
    SeasonalMaps,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    horizon: Option<usize>,
    /// `false` trains the ResNet-LSTM ablation without inter-unit 1x1 layers.
    #[arg(long)]
    use_1x1: Option<bool>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    grid_search: Option<bool>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train(_) => "train",
            Command::Evaluate => "evaluate",
            Command::EstimateMap => "estimate-map",
            Command::Forecast => "forecast",
            Command::Saliency => "saliency",
            Command::SeasonalMaps => "seasonal-maps",
        }
    }
}

fn resolve(cli: &Cli, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Command::Train(a) = command {
        if let Some(t) = a.task {
            cfg.train.task = t;
        }
        if let Some(h) = a.horizon {
            cfg.train.horizon = h;
        }
        if let Some(u) = a.use_1x1 {
            cfg.model.airres.use_1x1 = u;
        }
        if let Some(m) = a.model {
            cfg.model.kind = m;
        }
        if let Some(g) = a.grid_search {
            cfg.train.grid_search = g;
        }
    }
    cfg.finish()?;
    Ok(cfg)
}

fn run(cli: &Cli, command: &Command) -> Result<()> {
    let cfg = resolve(cli, command)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.out(&format!("resolved-{}.toml", command.name())), cfg.to_toml()?)?;
    match command {
        Command::Synth => commands::synth(&cfg),
        Command::Preprocess => commands::preprocess_cmd(&cfg),
        Command::Train(_) => commands::train_cmd(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::EstimateMap => commands::estimate_map(&cfg),
        Command::Forecast => commands::forecast(&cfg),
        Command::Saliency => commands::saliency(&cfg),
        Command::SeasonalMaps => commands::seasonal_maps(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("deepair {}", env!("CARGO_PKG_VERSION"));
        for f in deepair::formats::ALL {
            println!("{f}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("error: no subcommand given; see --help");
        return ExitCode::from(2);
    };
    match run(&cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
