//! The `kwass` command-line pipeline.
//!
//! `features → distmat → cluster → eval` compose through files; `synth`
//! produces a labelled corpus to drive them. [`run`] parses arguments,
//! executes one subcommand and returns the process exit code.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

pub use commands::{cluster, distmat, eval, evaluate, features, synth, EvalReport};

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Input(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<kwass::Error> for CliError {
    fn from(e: kwass::Error) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kwass", version, about = "Kernel Wasserstein and KL distances between sample sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract normalized GLCM texture features from grayscale images.
    Features(FeaturesArgs),
    /// Compute a pairwise distance matrix between sample sets.
    Distmat(DistmatArgs),
    /// Hierarchically cluster a distance matrix.
    Cluster(ClusterArgs),
    /// Score cluster labels against known classes.
    Eval(EvalArgs),
    /// Generate a labelled two-class corpus of scalar sample sets.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FeaturesArgs {
    /// Image files (.png, or text grids) or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Pixels at or below this intensity percentile are excluded.
    #[arg(long, default_value_t = kwass::texture::DEFAULT_PERCENTILE)]
    pub percentile: f64,
    /// Number of gray levels.
    #[arg(long, default_value_t = kwass::texture::DEFAULT_LEVELS)]
    pub levels: usize,
    /// Skip per-feature min-max normalization across the corpus.
    #[arg(long)]
    pub raw: bool,
    /// Output CSV (stdout when omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelFamily {
    Rbf,
    Polynomial,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct DistmatArgs {
    /// CSV of sample sets: `id,v1,v2,…` per row.
    pub input: PathBuf,
    /// w2, kernel_w2, kl_sym, kernel_kl_sym or mmd.
    #[arg(long, default_value = "kernel_w2", value_parser = parse_metric)]
    pub metric: kwass::Metric,
    /// Kernel family for kernel metrics [default: rbf].
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// RBF width [default: 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Polynomial degree [default: 2].
    #[arg(long)]
    pub degree: Option<u32>,
    /// Polynomial offset [default: 1].
    #[arg(long)]
    pub offset: Option<f64>,
    /// KL ridge ρ.
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    /// Report squared W₂ (false: its square root).
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub squared: bool,
    /// true: each row is one set of scalar samples. false: each row is one
    /// d-dimensional sample and rows sharing an id form a set.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub columns_as_samples: bool,
    /// Output format [default: from the --out extension, else csv].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "KWASS_WORKERS")]
    pub workers: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    /// Distance matrix (CSV or JSON).
    pub input: PathBuf,
    /// Number of clusters.
    #[arg(short, long, default_value_t = 2)]
    pub k: usize,
    /// average, complete or single.
    #[arg(long, default_value = "average", value_parser = parse_linkage)]
    pub linkage: kwass::Linkage,
    /// Labels CSV (`id,label`).
    #[arg(long)]
    pub labels_out: PathBuf,
    /// Dendrogram JSON.
    #[arg(long)]
    pub dendrogram_out: Option<PathBuf>,
    /// Long-form heatmap cells in dendrogram leaf order.
    #[arg(long)]
    pub emit_heatmap_csv: Option<PathBuf>,
    /// Pairwise scatter of this matrix against `--compare`, grouped by cluster pair.
    #[arg(long, requires = "compare")]
    pub emit_scatter_csv: Option<PathBuf>,
    /// Second distance matrix over the same ids, for the scatter export.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Labels CSV (`id,label`).
    #[arg(long)]
    pub labels: PathBuf,
    /// Truth CSV (`id,class`).
    #[arg(long)]
    pub truth: PathBuf,
    /// Class treated as positive for the prediction rates.
    #[arg(long, default_value = kwass::synth::NOISY)]
    pub noisy_class: String,
    /// Report JSON (stdout when omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Sample sets per class.
    #[arg(long, visible_alias = "per-class", default_value_t = 60)]
    pub sets: usize,
    /// Scalar samples per set.
    #[arg(long, default_value_t = 25)]
    pub samples: usize,
    /// Strength of the monotone warp applied to the noisy class (0 = same generator).
    #[arg(long, default_value_t = 1.5)]
    pub separation: f64,
    /// Per-set location/scale jitter.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub seed: u64,
    /// Output directory; receives `sets.csv` and `truth.csv`.
    #[arg(short, long)]
    pub out: PathBuf,
}

fn parse_metric(s: &str) -> Result<kwass::Metric, String> {
    s.parse().map_err(|e: kwass::Error| e.to_string())
}

fn parse_linkage(s: &str) -> Result<kwass::Linkage, String> {
    s.parse().map_err(|e: kwass::Error| e.to_string())
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Features(a) => features(a),
        Command::Distmat(a) => distmat(a),
        Command::Cluster(a) => cluster(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kwass: {e}");
            e.exit_code()
        }
    }
}
