//! `nanosoc` command-line interface.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// Failure while running (exit 1).
    Runtime(nanosoc::Error),
}

impl From<nanosoc::Error> for CliError {
    fn from(e: nanosoc::Error) -> Self {
        match e {
            nanosoc::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "nanosoc", version, about = "Nanopore signal-to-detection toolkit with an accelerator cost model")]
pub struct Cli {
    /// Versioned TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Output is identical for any value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Random seed for simulation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate reads and their raw signals from a genome.
    Simulate(SimulateArgs),
    /// Train basecaller weights on a simulated dataset.
    Train(TrainArgs),
    /// Basecall raw signals into FASTQ.
    Basecall(BasecallArgs),
    /// Build an FM-index of a reference.
    Index(IndexArgs),
    /// Decide whether reads or signals contain a pathogen.
    Detect(DetectArgs),
    /// Assign reads to barcodes.
    Demux(DemuxArgs),
    /// Remove primers from read ends.
    Trim(TrimArgs),
    /// Drop short or low-identity reads.
    Filter(FilterArgs),
    /// Cycle, energy and power report for a workload.
    PerfReport(PerfArgs),
}

impl Command {
    pub const NAMES: &'static [&'static str] = &[
        "simulate",
        "train",
        "basecall",
        "index",
        "detect",
        "demux",
        "trim",
        "filter",
        "perf-report",
    ];
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Genome FASTA (first record is used).
    #[arg(long)]
    pub genome: Option<PathBuf>,
    /// Generate a random genome of this length instead.
    #[arg(long)]
    pub random_len: Option<usize>,
    #[arg(long)]
    pub n_reads: Option<usize>,
    /// Noise scale relative to the pore model's level spread.
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub read_len_mean: Option<f64>,
    #[arg(long)]
    pub read_len_sd: Option<f64>,
    #[arg(long)]
    pub mean_dwell: Option<f64>,
    #[arg(long)]
    pub pore_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output weights (CNNW).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network architecture TOML; the shipped default otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Reads held out from the end of the dataset for evaluation.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Training log (TSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BasecallArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// NSIG file, directory of NSIG files, or dataset directory.
    #[arg(long)]
    pub signals: Option<PathBuf>,
    /// Output FASTQ.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the int8 inference path.
    #[arg(long)]
    pub int8: bool,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Write the operation trace (JSON) for `perf-report`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Reference FASTA (first record is used).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Output index (FMIX).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub occ_stride: Option<usize>,
    #[arg(long)]
    pub sa_stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Basecalled reads (FASTA/FASTQ).
    #[arg(long)]
    pub reads: Option<PathBuf>,
    /// Raw signals; requires --weights.
    #[arg(long)]
    pub signals: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub int8: bool,
    /// Compare whole reads by edit distance instead of seeded mapping.
    #[arg(long)]
    pub ed_only: bool,
    #[arg(long)]
    pub theta_frac: Option<f64>,
    #[arg(long)]
    pub theta_id: Option<f64>,
    #[arg(long)]
    pub min_read_len: Option<usize>,
    #[arg(long)]
    pub min_identity: Option<f64>,
    #[arg(long)]
    pub pathogen_id: Option<String>,
    /// Report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the operation trace (JSON) for `perf-report`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemuxArgs {
    #[arg(long)]
    pub reads: Option<PathBuf>,
    /// Barcodes as FASTA (record id is the barcode id).
    #[arg(long)]
    pub barcodes: Option<PathBuf>,
    #[arg(long)]
    pub max_hamming: Option<usize>,
    /// Assignments (TSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrimArgs {
    #[arg(long)]
    pub reads: Option<PathBuf>,
    /// Primers as FASTA.
    #[arg(long)]
    pub primers: Option<PathBuf>,
    /// Bases searched at each read end.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_ed: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-read trim report (TSV).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub reads: Option<PathBuf>,
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Minimum identity against truth, for reads listed in --truth.
    #[arg(long)]
    pub min_identity: Option<f64>,
    /// Truth TSV written by `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rejection log (TSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PerfArgs {
    /// Operation trace (JSON) from `basecall` or `detect`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// SoC model TOML; the shipped default otherwise.
    #[arg(long)]
    pub soc: Option<PathBuf>,
    /// Add one forward pass over this many samples.
    #[arg(long)]
    pub basecall_samples: Option<usize>,
    /// Add this many edit-distance comparisons.
    #[arg(long)]
    pub ed_pairs: Option<u64>,
    /// Query and target length of the added comparisons.
    #[arg(long)]
    pub ed_len: Option<usize>,
    /// Network architecture TOML for --basecall-samples and the SRAM check.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Weight precision for the SRAM check: int8 or float32.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub activation_bytes: Option<u64>,
    /// Output format: table or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
