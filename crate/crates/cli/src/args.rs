use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "terawht",
    version,
    about = "Exact in-memory and out-of-core Walsh-Hadamard transforms"
)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Print a versioned JSON report instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sparse Walsh spectrum signal with additive noise.
    Gen(GenArgs),
    /// Transform a dataset in memory or out of core.
    #[command(subcommand)]
    Transform(TransformCommand),
    /// Brute-force transform of a small dataset, checked against the fast one.
    Oracle(OracleArgs),
    /// List Walsh coefficients at or above a magnitude threshold.
    Extract(ExtractArgs),
    /// Signal-to-noise ratio of a clean signal and the significance threshold.
    Snr(SnrArgs),
    /// Runtime estimate for an external transform.
    Plan(PlanArgs),
    /// Same-disk copy benchmark over a range of block sizes.
    Iobench(IoBenchArgs),
    /// Fold a dataset through a full-rank GF(2) linear map.
    Fold(FoldArgs),
    /// Simulate Walsh coefficient coverage of a fleet of folded subspaces.
    Coverage(CoverageArgs),
}

/// Input dataset options shared by the reading commands.
#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Adopt a raw file without a sidecar, inferring n from its size.
    #[arg(long)]
    pub force: bool,
    /// Element kind assumed with --force.
    #[arg(long, value_enum, default_value_t = KindArg::Int64, requires = "force")]
    pub kind: KindArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Int64,
    Float64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    Uniform,
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Entrywise,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogBaseArg {
    Natural,
    Two,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: u32,
    /// Planted Walsh coefficients as `index:amplitude,...`.
    #[arg(long, default_value = "")]
    pub support: String,
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    pub noise: NoiseArg,
    /// Per-sample noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the noiseless signal here.
    #[arg(long, value_name = "FILE")]
    pub clean_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TransformCommand {
    /// Load the whole dataset and transform it in memory.
    Mem(MemArgs),
    /// Transform on disk with a bounded memory budget.
    Ext(ExtArgs),
}

#[derive(Debug, Args)]
pub struct MemArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Write the result to a new dataset instead of in place.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Worker threads (a power of two).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ExtArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// log2 of the in-memory element budget.
    #[arg(long)]
    pub mem_log2: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Blocked)]
    pub mode: ModeArg,
    /// Transfer size for blocked mode, e.g. 4K, 2M (default: min(128M, 2^(B-1) elements)).
    #[arg(long)]
    pub io_block_bytes: Option<String>,
    /// Continue an interrupted run.
    #[arg(long)]
    pub resume: bool,
    /// Worker threads for the in-memory pass.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Journal results in batches of this size so a killed run can resume.
    #[arg(long)]
    pub checkpoint_bytes: Option<String>,
    /// Stop cleanly after this many passes.
    #[arg(long)]
    pub stop_after_passes: Option<usize>,
    /// Use O_DIRECT where the platform allows it.
    #[arg(long)]
    pub direct: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Largest n the brute force accepts.
    #[arg(long, default_value_t = terawht_core::transform::ORACLE_LIMIT)]
    pub limit: u32,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub threshold: f64,
    /// CSV destination (`index,coefficient`); stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SnrArgs {
    /// Clean signal (time or Walsh domain).
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub sigma: f64,
    /// Logarithm base inside the significance threshold.
    #[arg(long, value_enum, default_value_t = LogBaseArg::Natural)]
    pub log_base: LogBaseArg,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub n: u32,
    #[arg(long)]
    pub b: u32,
    /// Copy time of the reference dataset in seconds.
    #[arg(long)]
    pub tcp: Option<f64>,
    /// log2 element count of the reference dataset for --tcp.
    #[arg(long)]
    pub tcp_n: Option<f64>,
    /// In-memory transform time at n = 26 in seconds.
    #[arg(long)]
    pub tcpu_ref: Option<f64>,
    /// Multiplier on every pass.
    #[arg(long)]
    pub io_overhead: Option<f64>,
    /// Multiplier on the copy time for a different device.
    #[arg(long)]
    pub storage_factor: Option<f64>,
    /// Also estimate a fleet that folds a 2^N source down to 2^n.
    #[arg(long, value_name = "N")]
    pub source_n: Option<u32>,
    /// Fleet size for --source-n.
    #[arg(long, default_value_t = 64)]
    pub machines: u32,
}

#[derive(Debug, Args)]
pub struct IoBenchArgs {
    /// Scratch directory on the disk under test.
    #[arg(long)]
    pub dir: PathBuf,
    /// Test file size in GiB (fractions allowed).
    #[arg(long, default_value_t = 1.0)]
    pub file_gb: f64,
    /// Comma-separated block sizes.
    #[arg(long, default_value = "2M,8M,32M,128M,512M,1G")]
    pub blocks: String,
    #[arg(long)]
    pub direct: bool,
    /// CSV destination (`block_bytes,seconds,mbps`); stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Matrix file: one row of '0'/'1' per output bit, rightmost = input bit 0.
    #[arg(long, value_name = "FILE")]
    pub matrix: PathBuf,
    /// Draw a random full-rank map with this many rows and write it to --matrix.
    #[arg(long, value_name = "D")]
    pub random_dout: Option<u32>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub din: u32,
    #[arg(long)]
    pub dout: u32,
    #[arg(long, default_value_t = 64)]
    pub machines: u32,
    #[arg(long, default_value_t = 20)]
    pub trials: u32,
    /// CSV destination (`trial,coverage`); stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
