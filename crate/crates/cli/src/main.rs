//! `splatstream`: generate synthetic scenes, train streams, evaluate them
//! and export viewer bundles.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use splatstream_core::{Error, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "splatstream", version, about = "Streamable dynamic Gaussian splatting")]
struct Cli {
    /// TOML configuration; keys left out keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set stage1_iterations=250`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every random stream (synthetic scene and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-view video dataset.
    Synth(SynthArgs),
    /// Train a stream over a dataset.
    Stream(StreamArgs),
    /// PSNR of a stream's renders against a dataset split.
    Eval(EvalArgs),
    /// Materialize frames of a stream into a viewer bundle.
    Export(ExportArgs),
    /// Per-frame storage breakdown of a stream.
    Size(SizeArgs),
    /// Print the effective configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Static,
    Rigid,
    Emerging,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "emerging")]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Per-frame translation of every object (rigid scene), `x,y,z`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.0, 0.01])]
    pub translate: Vec<f64>,
    /// Frame at which the blob appears (emerging scene); default half-way.
    #[arg(long)]
    pub emerge_at: Option<usize>,
    /// Total ground-truth Gaussians spread over the objects.
    #[arg(long)]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(clap::Args, Debug)]
pub struct StreamArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Stream file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Add wall-clock columns to the log (which makes it run-dependent).
    #[arg(long)]
    pub timings: bool,
    /// Continue from an existing stream instead of starting over.
    #[arg(long, requires = "keep_through")]
    pub resume: Option<PathBuf>,
    /// Last frame of `--resume` to keep.
    #[arg(long, requires = "resume")]
    pub keep_through: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Per-frame CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    /// First frame (inclusive).
    #[arg(long, default_value_t = 0)]
    pub from: usize,
    /// Last frame (exclusive); default all.
    #[arg(long)]
    pub to: Option<usize>,
}

#[derive(clap::Args, Debug)]
pub struct SizeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Also write the rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ConfigArgs {
    /// List every settable key instead.
    #[arg(long)]
    pub keys: bool,
}

/// What went wrong, by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg = cfg.with_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => commands::synth(a, cli.seed),
        Command::Stream(a) => commands::stream(a, &cfg),
        Command::Eval(a) => commands::eval(a),
        Command::Export(a) => commands::export(a),
        Command::Size(a) => commands::size(a),
        Command::Config(a) => commands::config(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Usage(m) => ("usage error", m),
                Failure::Data(m) => ("error", m),
                Failure::Numerical(m) => ("numerical failure", m),
            };
            eprintln!("splatstream: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
