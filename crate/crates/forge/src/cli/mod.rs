//! Command-line entry point.

mod analysis;
mod data;
mod learn;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Preset;
use crate::error::{ForgeError, Result};

#[derive(Debug, Parser)]
#[command(name = "cadence-forge", version, about = "Radar cadence analysis and dual-stream training pipeline")]
pub struct Cli {
    /// Seed for all randomness (default: $CADENCE_FORGE_SEED, else 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset of RTM1 files.
    Synth(data::SynthArgs),
    /// Extract a cadence velocity diagram from one RTM1 file.
    Cvd(data::CvdArgs),
    /// Second-harmonic ratio of FFT-on-dB versus linearized spectra.
    ArtifactDemo(data::ArtifactArgs),
    /// Apply an augmentation chain to one RTM1 file.
    Augment(data::AugmentArgs),
    /// Train one model variant and save its checkpoints.
    Train(learn::TrainArgs),
    /// Score a checkpoint ensemble on a dataset split.
    Eval(learn::EvalArgs),
    /// Train a list of variants over several seeds and tabulate accuracy.
    Ablate(learn::AblateArgs),
    /// Corrected paired t-test between two sets of fold scores.
    Ttest(analysis::TtestArgs),
    /// Confusion matrix, per-class accuracy and most-confused classes.
    Confusion(analysis::ConfusionArgs),
}

/// Model and schedule options shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// JSON file overriding parts of the preset configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Side length of the square network inputs.
    #[arg(long)]
    pub spatial: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Bh4,
    Hamming,
    Rect,
}

/// Values shared by every command.
pub(crate) struct Context {
    pub seed: u64,
    pub argv: Vec<String>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let seed = crate::config::resolve_seed(cli.seed)?;
    let ctx = Context { seed, argv };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ForgeError::Validation("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| ForgeError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => data::synth(&a, &ctx),
        Command::Cvd(a) => data::cvd(&a),
        Command::ArtifactDemo(a) => data::artifact_demo(&a),
        Command::Augment(a) => data::augment(&a, &ctx),
        Command::Train(a) => learn::train(&a, &ctx),
        Command::Eval(a) => learn::eval(&a, &ctx),
        Command::Ablate(a) => learn::ablate(&a, &ctx),
        Command::Ttest(a) => analysis::ttest(&a),
        Command::Confusion(a) => analysis::confusion(&a, &ctx),
    })
}

pub(crate) fn create_dir(dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))
}

pub(crate) fn write_json<T: serde::Serialize>(dir: &std::path::Path, name: &str, value: &T, outputs: &mut Vec<String>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    crate::formats::write_atomic(&dir.join(name), &bytes)?;
    outputs.push(name.into());
    Ok(())
}

/// Writes CSV rows through a temporary file.
pub(crate) fn write_csv(dir: &std::path::Path, name: &str, header: &[&str], rows: &[Vec<String>], outputs: &mut Vec<String>) -> Result<()> {
    crate::formats::write_atomic(&dir.join(name), &csv_bytes(header, rows)?)?;
    outputs.push(name.into());
    Ok(())
}

pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| ForgeError::Runtime(format!("csv: {e}")))
}
