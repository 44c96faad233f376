//! The `patchcrypt` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 equivariance verification failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

mod commands;
mod keysource;

pub const KEY_ENV: &str = "PATCHCRYPT_KEY";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "patchcrypt",
    version,
    about = "Block-wise image encryption and matching ViT patch-embedding adaptation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a new 256-bit secret key and write it as 64 hex characters
    Keygen(KeygenArgs),
    /// Encrypt a PPM image, or every .ppm file in a directory
    Encrypt(CipherArgs),
    /// Decrypt a PPM image, or every .ppm file in a directory
    Decrypt(CipherArgs),
    /// Adapt the patch embedding of a .safetensors model to a key
    AdaptModel(AdaptArgs),
    /// Check that the adapted embedding on encrypted input reproduces the plain tokens
    Verify(VerifyArgs),
    /// Score predicted label maps against ground truth (aAcc, mAcc, mIoU)
    Eval(EvalArgs),
    /// Summarize the header of a .safetensors archive
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    /// Key file to create (written with mode 0600 on Unix)
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing key file
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct KeyArg {
    /// Key file (64 hex characters). Falls back to the PATCHCRYPT_KEY environment variable
    #[arg(long, value_name = "FILE")]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CipherArgs {
    #[command(flatten)]
    pub key: KeyArg,
    /// Block size in pixels; must divide the image width and height
    #[arg(long, short = 'p', default_value_t = patchcrypt::DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    /// Input .ppm file or directory
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output .ppm file or directory (file names are preserved)
    #[arg(long = "out", value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LayerArgs {
    /// Name of the patch-embedding weight tensor
    #[arg(long, default_value = patchcrypt::tensorarchive::DEFAULT_WEIGHT_NAME)]
    pub weight_name: String,
    /// Name of the patch-embedding bias tensor (treated as zeros if absent)
    #[arg(long, default_value = patchcrypt::tensorarchive::DEFAULT_BIAS_NAME)]
    pub bias_name: String,
    /// Patch size; inferred from a [D, 3, P, P] weight, required for ambiguous [D, 3*P*P] weights
    #[arg(long, short = 'p')]
    pub patch_size: Option<usize>,
}

impl LayerArgs {
    fn locator(&self) -> patchcrypt::EmbeddingLocator {
        patchcrypt::EmbeddingLocator {
            weight_name: self.weight_name.clone(),
            bias_name: self.bias_name.clone(),
            patch_size: self.patch_size,
        }
    }
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub key: KeyArg,
    /// Plain model (.safetensors)
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Adapted model to write (.safetensors)
    #[arg(long = "out", value_name = "PATH")]
    pub output: PathBuf,
    #[command(flatten)]
    pub layer: LayerArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub key: KeyArg,
    /// Plain model (.safetensors)
    #[arg(long)]
    pub model: PathBuf,
    /// Previously adapted model to check; by default the plain model is adapted in memory
    #[arg(long, value_name = "PATH")]
    pub adapted_model: Option<PathBuf>,
    /// Plain test image (.ppm)
    #[arg(long)]
    pub image: PathBuf,
    /// Maximum allowed absolute token difference
    #[arg(long, default_value = "1e-9")]
    pub tol: f64,
    /// Input normalization mean, applied to every channel
    #[arg(long, default_value_t = patchcrypt::embedding::DEFAULT_NORM_MEAN)]
    pub norm_mean: f64,
    /// Input normalization std, applied to every channel
    #[arg(long, default_value_t = patchcrypt::embedding::DEFAULT_NORM_STD)]
    pub norm_std: f64,
    #[command(flatten)]
    pub layer: LayerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of ground-truth label maps (.pgm)
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory of predicted label maps (.pgm), paired with --gt by file stem
    #[arg(long)]
    pub pred: PathBuf,
    /// Number of classes K; labels must lie in 0..K
    #[arg(long)]
    pub classes: usize,
    /// Ground-truth label excluded from scoring
    #[arg(long, default_value_t = patchcrypt::IGNORE_LABEL)]
    pub ignore: u8,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Archive to summarize (.safetensors)
    pub path: PathBuf,
}

/// A failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    VerifyFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::VerifyFailed => EXIT_VERIFY_FAILED,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

pub(crate) fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(anyhow!("{msg}"))
}

pub(crate) fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

pub(crate) fn read_file(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if let CliError::Usage(err) | CliError::Data(err) = &e {
                eprintln!("error: {err:#}");
            }
            e.exit_code()
        }
    }
}
