mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Occupancy-measure trajectories of tabular RL agents.
#[derive(Parser, Debug)]
#[command(name = "occtraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train agents over several seeds and write records, aggregate table and summary.
    Run(RunArgs),
    /// Run one of the preset sweeps and write a per-setting table.
    Sweep(SweepArgs),
    /// Per-run distance tables and plots from a record file.
    Analyze(AnalyzeArgs),
    /// Check the bound suite on stored records or on a fresh run.
    Verify(VerifyArgs),
    /// Aggregate tables (and a bar chart) from one or more record files.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Exact,
    Otdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

/// Overrides shared by every command that trains agents.
#[derive(Args, Debug, Default)]
struct TuningArgs {
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Rollouts per policy for the otdd backend.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Config overrides, `key=value`.
    #[arg(long = "overrides", alias = "set", value_name = "KEY=VALUE", num_args = 1..)]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset, e.g. table1-psrl.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory; defaults to `<output_dir>/<name>` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// difficulty, ucrl_delta or rollout_count.
    kind: String,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output directory; defaults to `results/sweep-<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    records: PathBuf,
    /// Output directory; defaults to `analysis` next to the records.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,svg")]
    format: Vec<Format>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Record files; without them a fresh run of --config or --preset is checked.
    records: Vec<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    /// Write `verify.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, default_value = "export")]
    out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<Format>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Verify(a) => commands::verify(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
