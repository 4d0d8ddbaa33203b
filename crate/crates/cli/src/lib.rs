//! `v2g` command line: simulate, train, evaluate, transfer and allocate.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{PpoPreset, Preset};

/// Exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<v2g_core::Error> for Failure {
    fn from(e: v2g_core::Error) -> Self {
        use v2g_core::Error as E;
        let code = match &e {
            E::Infeasible { .. } | E::PowerLimit { .. } | E::SocBound { .. } | E::NoConnected => {
                EXIT_INFEASIBLE
            }
            E::Numerical(_) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "v2g", version, about = "EV aggregator V2G simulation and PPO scheduling")]
pub struct Cli {
    /// Write into this directory instead of a fresh one under $V2G_OUTPUT_ROOT (default ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode under a policy and write its trace.
    Simulate(SimulateArgs),
    /// Train a PPO policy.
    Train(TrainArgs),
    /// Compare a checkpoint with uncontrolled charging on one scenario.
    Eval(EvalArgs),
    /// Evaluate a checkpoint, unchanged, on the RES, large-scale and weekly scenarios.
    Transfer(TransferArgs),
    /// Split one EVA power command over a fleet read from CSV.
    Allocate(AllocateArgs),
    /// Print a preset scenario or PPO configuration as JSON.
    Preset(PresetArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Episode spec JSON.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario (default: desk).
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Fleet size override.
    #[arg(long)]
    pub n_evs: Option<usize>,
    /// Fleet config JSON, as a path or inline object.
    #[arg(long)]
    pub fleet: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Also write a markdown comparison table.
    #[arg(long)]
    pub markdown: bool,
    /// Also write per-figure CSVs under `plot/`.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Drive the episode with this checkpoint instead of uncontrolled charging.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "desk")]
    pub ppo_preset: PpoPreset,
    /// PPO config overrides, as a path or inline JSON object.
    #[arg(long)]
    pub ppo: Option<String>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit per-feature observation scaling on this many full-rate rollouts first.
    #[arg(long)]
    pub fit_normalization: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write the training curve under `plot/`.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time act + envelope + allocation per slot.
    #[arg(long)]
    pub latency: bool,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Res,
    LargeScale,
    Weekly,
    WeeklyRes,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scenarios to evaluate (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub targets: Vec<Target>,
    /// Fleet size for the RES and weekly scenarios.
    #[arg(long, default_value_t = 50)]
    pub n_evs: usize,
    /// Fleet sizes for the large-scale scenario (default: 5090,20360,35630,50900).
    #[arg(long, value_delimiter = ',')]
    pub large_scale_fleets: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AllocateArgs {
    /// CSV with `id,capacity_kwh,p_ch_max_kw,p_dis_max_kw,soc,arrival_slot,departure_slot`.
    #[arg(long)]
    pub fleet: PathBuf,
    /// Commanded EVA power, kW (positive charges).
    #[arg(long, allow_hyphen_values = true)]
    pub power: f64,
    /// Hour of day; sets connectivity and the departure ramp. Without it every vehicle is connected.
    #[arg(long)]
    pub hour: Option<u32>,
    /// SOC band JSON, as a path or inline object.
    #[arg(long)]
    pub band: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PresetName {
    Desk,
    Baseload,
    Res,
    Weekly,
    WeeklyRes,
    LargeScale,
    PpoDesk,
    PpoReference,
}

#[derive(Debug, Clone, Args)]
pub struct PresetArgs {
    #[arg(value_enum)]
    pub name: PresetName,
    #[arg(long)]
    pub n_evs: Option<usize>,
}

/// Runs a parsed command line. `Ok` carries the run directory, if one was made.
pub fn run(cli: Cli) -> Result<Option<PathBuf>, Failure> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, out).map(Some),
        Command::Train(a) => commands::train(&a, out).map(Some),
        Command::Eval(a) => commands::eval(&a, out).map(Some),
        Command::Transfer(a) => commands::transfer(&a, out).map(Some),
        Command::Allocate(a) => commands::allocate(&a, out).map(Some),
        Command::Preset(a) => commands::preset(&a).map(|_| None),
    }
}
