use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crowdpulse_core::{ModelVariant, ParamIndex, TimeFormat};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "crowdpulse", version, about = "Point-process modelling of crowdfunding platform activity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Fit the full model and write fit.json.
    Fit(FitArgs),
    /// Simulate the platform from a parameter file.
    Simulate(SimulateArgs),
    /// Time-rescaling goodness-of-fit of a parameter file against data.
    Gof(GofArgs),
    /// Fit several model variants and rank them by AIC.
    Select(SelectArgs),
    /// Descriptive tables of a dataset.
    Summarize(SummarizeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Gof(_) => "gof",
            Command::Select(_) => "select",
            Command::Summarize(_) => "summarize",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Fit(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Gof(a) => &a.common,
            Command::Select(a) => &a.common,
            Command::Summarize(a) => &a.common,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CommonArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for tie-breaking jitter and simulation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Input data: either the three raw tables or one canonical events file.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long, requires_all = ["users", "contributions"], conflicts_with = "events")]
    pub items: Option<PathBuf>,
    #[arg(long, requires_all = ["items", "contributions"])]
    pub users: Option<PathBuf>,
    #[arg(long, requires_all = ["items", "users"])]
    pub contributions: Option<PathBuf>,
    /// Canonical `time_days,kind,user_id,item_id` log, as written by `simulate`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long, default_value = "iso")]
    pub time_format: TimeFormat,
    /// Observation end in days; defaults to the last event.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitOptionArgs {
    /// JSON parameter file used as the starting point.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Comma-separated parameter names held at their starting values.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<ParamIndex>,
    /// Exit 0 and keep the output when Newton iterations do not converge.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitOptionArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON parameter file.
    #[arg(long)]
    pub params: PathBuf,
    /// Simulated span in days.
    #[arg(long)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GofArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON parameter file.
    #[arg(long)]
    pub params: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "full,const-gamma,psi-only,exp-decay")]
    pub variants: Vec<ModelVariant>,
    #[command(flatten)]
    pub fit: FitOptionArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}
