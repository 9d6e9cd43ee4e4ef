//! Command-line surface. Every flag is long-form.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hazardcast::models::Architecture;
use hazardcast::report::ColorScale;
use hazardcast::Hazard;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "hazardcast", version, about = "Forecast and explain agricultural weather hazard counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Build a county-day table from daily weather and storm-event files.
    Ingest(IngestArgs),
    /// Train a forecaster on a county-day table.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a table.
    Evaluate(EvaluateArgs),
    /// Explain forecasts with temporal Shapley attributions.
    Explain(ExplainArgs),
    /// Aggregate attribution matrices into a feature-by-month matrix.
    Global(GlobalArgs),
    /// Draw a heatmap or assemble a metrics table.
    Render(RenderArgs),
    /// Generate weather and event files with a known hazard law.
    Synth(SynthArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Explain(_) => "explain",
            Command::Global(_) => "global",
            Command::Render(_) => "render",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> Option<&CommonArgs> {
        match self {
            Command::Ingest(a) => Some(&a.common),
            Command::Train(a) => Some(&a.common),
            Command::Evaluate(a) => Some(&a.common),
            Command::Explain(a) => Some(&a.common),
            Command::Global(a) => Some(&a.common),
            Command::Render(a) => Some(&a.common),
            Command::Synth(a) => Some(&a.common),
            Command::Replay(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    /// JSON config with sections data, model, train, explain (also ingest, synth).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Daily weather CSV (GHCN-Daily layout).
    #[arg(long, value_name = "FILE")]
    pub weather: PathBuf,
    /// Storm-event CSV (NOAA Storm Events layout).
    #[arg(long, value_name = "FILE")]
    pub events: PathBuf,
    #[arg(long)]
    pub county: Option<String>,
    /// Comma-separated station ids; default is every station in the file.
    #[arg(long, value_delimiter = ',')]
    pub stations: Option<Vec<String>>,
    /// Output table CSV; a `.json` sidecar is written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Raw county-day table written by `ingest`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_architecture)]
    pub arch: Option<Architecture>,
    /// Checkpoint JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-epoch loss CSV; default `<out stem>.history.csv`.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// The raw table the checkpoint was trained on.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Metrics CSV: hazard, MAE, RMSE.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Optional per-window rates, warning probabilities and targets.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Window index within the split; repeatable.
    #[arg(long, required_unless_present = "count", conflicts_with = "count")]
    pub index: Vec<usize>,
    /// Explain this many evenly spaced windows of the split.
    #[arg(long)]
    pub count: Option<usize>,
    /// Hazard to explain; repeatable; default all six.
    #[arg(long, value_parser = parse_hazard)]
    pub hazard: Vec<Hazard>,
    /// Output directory for `<hazard>_<split>_<index>.csv` and sidecars.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Attribution CSVs or directories holding them; repeatable.
    #[arg(long, required = true, value_name = "PATH")]
    pub inputs: Vec<PathBuf>,
    /// Keep only attributions of this hazard.
    #[arg(long, value_parser = parse_hazard)]
    pub hazard: Option<Hazard>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["matrix", "metrics"])))]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Labelled matrix CSV (first column row labels) to draw as an SVG heatmap.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    /// `REGION:ARCH:FILE` metrics CSV written by `evaluate`; repeatable.
    #[arg(long, value_name = "REGION:ARCH:FILE")]
    pub metrics: Vec<String>,
    #[arg(long, value_parser = parse_scale, default_value = "linear")]
    pub scale: ColorScale,
    #[arg(long)]
    pub title: Option<String>,
    /// SVG for `--matrix`; CSV (plus a `.txt` table) for `--metrics`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    /// Output directory for weather.csv, events.csv and truth.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: hazardcast::Error| e.to_string())
}

fn parse_hazard(s: &str) -> Result<Hazard, String> {
    s.parse().map_err(|e: hazardcast::Error| e.to_string())
}

fn parse_scale(s: &str) -> Result<ColorScale, String> {
    s.parse().map_err(|e: hazardcast::Error| e.to_string())
}
