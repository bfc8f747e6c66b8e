//! Argument grammar and dispatch for the `ocelot` binary.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ocelot_core::bundle::GroupStrategy;
use ocelot_core::field::ElemType;
use ocelot_core::orchestrator::NodeAvailability;

pub use commands::run;
pub use output::Format;

#[derive(Debug, Parser)]
#[command(name = "ocelot", version, about = "Compress, group and stage scientific fields over modelled WAN links")]
pub struct Cli {
    /// Output format for data written to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Seed for every randomized split and synthetic generator.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict ratio, time and PSNR per manifest entry.
    Predict(PredictArgs),
    /// Compress every manifest entry into `<out-dir>/<path>.ocb`.
    Compress(CompressArgs),
    /// Restore every `.ocb` block under a directory.
    Decompress(DecompressArgs),
    /// Pack the files under a directory into group files plus a sidecar.
    Pack(PackArgs),
    /// Restore the members of packed group files.
    Unpack(UnpackArgs),
    /// Transfer manifest entries uncompressed.
    Transfer(TransferArgs),
    /// Train a quality model from labelled samples or a manifest.
    Train(TrainArgs),
    /// Evaluate a model on labelled samples.
    Evaluate(EvaluateArgs),
    /// Fit the WAN model to observed transfers.
    Calibrate(CalibrateArgs),
    /// Run the staging pipeline, optionally behind the sentinel.
    Pipeline(PipelineArgs),
    /// Time feature extraction, compression and decompression per entry.
    Bench(BenchArgs),
    /// Write a seeded synthetic corpus and its manifest.
    Synth(SynthArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a positive finite number, got {s}"))
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {s}"))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie strictly between 0 and 1, got {s}"))
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// `lo:hi:n`, `n` log-spaced points from `lo` to `hi` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct EbGrid(pub Vec<f64>);

impl std::str::FromStr for EbGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected lo:hi:n, got {s:?}"));
        };
        let (lo, hi) = (positive_f64(lo)?, positive_f64(hi)?);
        let n: usize = positive_usize(n)?;
        if lo > hi {
            return Err(format!("lower bound {lo} exceeds upper bound {hi}"));
        }
        if n == 1 {
            return Ok(EbGrid(vec![lo]));
        }
        let (a, b) = (lo.log10(), hi.log10());
        Ok(EbGrid(
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect(),
        ))
    }
}

#[derive(Debug, Clone, Args)]
pub struct CodecArgs {
    /// Absolute error bound.
    #[arg(long, value_parser = positive_f64)]
    pub eb: f64,
    /// Quantization bins (even, at most 65536).
    #[arg(long)]
    pub quant_bins: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Loopback,
    Simwan,
}

#[derive(Debug, Clone, Args)]
pub struct WanArgs {
    /// Simulated link bandwidth, MB/s.
    #[arg(long, value_parser = positive_f64, default_value_t = commands::DEFAULT_BANDWIDTH_MBPS)]
    pub bandwidth: f64,
    /// Simulated per-file overhead, seconds.
    #[arg(long, value_parser = non_negative_f64, default_value_t = commands::DEFAULT_OVERHEAD_S)]
    pub overhead: f64,
    /// Parallel channels; divides the per-file overhead.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,
    /// JSON model written by `calibrate --format json`; overrides the three flags above.
    #[arg(long)]
    pub wan: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = positive_f64)]
    pub eb: f64,
    #[arg(long)]
    pub model: PathBuf,
    /// Feature sampling stride.
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `world:N` (N groups) or `target:BYTES`.
    #[arg(long, default_value = "world:4")]
    pub strategy: GroupStrategy,
}

#[derive(Debug, Clone, Args)]
pub struct UnpackArgs {
    /// Directory with the group files and the sidecar.
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    /// Manifest of the files to send.
    #[arg(long)]
    pub src: PathBuf,
    /// Destination root.
    #[arg(long)]
    pub dst: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Loopback)]
    pub backend: BackendArg,
    #[command(flatten)]
    pub wan: WanArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labelled samples CSV.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub samples: Option<PathBuf>,
    /// Label a manifest over `--eb-grid` instead of reading samples.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `LO:HI:N`, N log-spaced error bounds.
    #[arg(long, default_value = "1e-6:1e-1:11")]
    pub eb_grid: EbGrid,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub stride: usize,
    /// Also write the labelled samples here.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
    /// Where to write the binary model.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Share of each application's files used to fit ratio and time.
    #[arg(long, default_value_t = 0.3, value_parser = fraction)]
    pub train_frac: f64,
    /// Share of each application's files used to fit PSNR.
    #[arg(long, default_value_t = 0.5, value_parser = fraction)]
    pub psnr_train_frac: f64,
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_depth: u32,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub min_leaf: u32,
    #[arg(long, default_value_t = 1e-9, value_parser = positive_f64)]
    pub min_gain: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    /// Print the error histogram table instead of the summary.
    #[arg(long)]
    pub histogram: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// CSV with header `n_files,total_bytes,wall_s`.
    #[arg(long)]
    pub observations: PathBuf,
    /// Channel count the observations were taken at.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,
    /// Also predict a transfer of `N_FILES:TOTAL_BYTES`.
    #[arg(long)]
    pub predict: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Manifest of the source fields.
    #[arg(long)]
    pub src: PathBuf,
    /// Destination root; restored fields keep their relative paths.
    #[arg(long)]
    pub dst: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
    /// Compression workers; defaults to the available CPUs.
    #[arg(long, env = "OCELOT_WORKERS", value_parser = positive_usize)]
    pub workers: Option<usize>,
    /// Defaults to a quarter of `--workers`.
    #[arg(long, value_parser = positive_usize)]
    pub workers_decompress: Option<usize>,
    /// Defaults to one group per compression worker.
    #[arg(long)]
    pub grouping: Option<GroupStrategy>,
    #[arg(long, value_enum, default_value_t = BackendArg::Loopback)]
    pub backend: BackendArg,
    #[command(flatten)]
    pub wan: WanArgs,
    /// Check every restored field against the source and the error bound.
    #[arg(long)]
    pub verify: bool,
    /// Run behind the sentinel: `immediate`, `never` or `after:SECONDS`.
    #[arg(long)]
    pub avail: Option<NodeAvailability>,
    /// Raw files per sentinel batch.
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub raw_batch: usize,
    /// Write the event ledger CSV here.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Source-side scratch directory (defaults under `--dst`).
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// `GROUP:MEMBER`: corrupt that group member before transfer.
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault(pub usize, pub usize);

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (g, m) = s.split_once(':').ok_or_else(|| format!("expected GROUP:MEMBER, got {s:?}"))?;
        Ok(Fault(
            g.parse().map_err(|e| format!("bad group: {e}"))?,
            m.parse().map_err(|e| format!("bad member: {e}"))?,
        ))
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub stride: usize,
    /// Runs per stage; the median is reported.
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub repeat: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Receives the fields and `manifest.txt`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of fields.
    #[arg(long, default_value_t = 16, value_parser = positive_usize)]
    pub count: usize,
    /// Axis lengths, e.g. `32x32x32`.
    #[arg(long, default_value = "32x32x32")]
    pub dims: Dims,
    /// `f32` or `f64`.
    #[arg(long, default_value = "f32")]
    pub dtype: ElemType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl std::str::FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ocelot_core::field::parse_dims(s).map(Dims)
    }
}
