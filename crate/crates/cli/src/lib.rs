//! Command-line front end: weight-evolution frames, gradient checks, parameter counts,
//! training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use anodev2::models::{Architecture, Variant};
use anodev2::spectral::Nonlinearity;
use anodev2::trainer::DESK_SCALE_LR;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod error;
mod gradcheck;
mod simulate;
mod training;

pub use error::{CliError, CliResult, EXIT_CHECK_FAILED, EXIT_USAGE};
pub use gradcheck::grad_check;
pub use simulate::{moments, read_pgm, simulate, write_pgm, FieldMoments, InitialField};
pub use training::{count_params, eval, train};

#[derive(Debug, Parser)]
#[command(name = "anodev2", version, about = "Coupled activation/weight ODE networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve a 2D field under the reaction-diffusion-advection operator and write frames.
    Simulate(SimulateArgs),
    /// Compare backpropagated gradients with finite differences and the adjoint system.
    GradCheck(GradCheckArgs),
    /// Print per-layer parameter counts and check them against the published totals.
    CountParams(CountParamsArgs),
    /// Train on a CIFAR-10 binary directory.
    Train(TrainArgs),
    /// Report test accuracy of a checkpoint or of a freshly initialized model.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Grid side; taken from the file for file initial conditions.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Diffusion coefficient.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    /// Advection velocity along x (columns).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub vx: f64,
    /// Advection velocity along y (rows).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub vy: f64,
    /// Reaction rate.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Time per step.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value = "identity")]
    pub sigma: Nonlinearity,
    /// `gaussian:<sigma0>` (unit peak at the centre of the unit square) or a path to a
    /// P5 PGM or whitespace-separated text grid.
    #[arg(long, default_value = "gaussian:0.1")]
    pub init: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckModel {
    TinyResnet4,
    ScalarSystem,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum)]
    pub model: CheckModel,
    /// Weight-evolution configuration (1: one weight step per activation step; 2: two
    /// activation steps, weights evolved between them).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub config: u8,
    /// Activation Euler steps (default 5 for the network, 512 for the scalar system).
    #[arg(long)]
    pub nt: Option<usize>,
    /// Weight-evolution substeps (configuration 2, default 10).
    #[arg(long)]
    pub ntheta: Option<usize>,
    /// Grid of the continuous adjoint solver for the scalar system (default 8 * nt).
    #[arg(long)]
    pub nkkt: Option<usize>,
    /// Initial finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[arg(long)]
    pub arch: Architecture,
    #[arg(long, default_value = "baseline")]
    pub variant: Variant,
    /// Also write the report to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "resnet4")]
    pub arch: Architecture,
    #[arg(long, default_value = "baseline")]
    pub variant: Variant,
    /// Directory with the CIFAR-10 binary batches.
    #[arg(long)]
    pub data: PathBuf,
    /// Train on the first N training images.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Evaluate on the first N test images.
    #[arg(long)]
    pub test_subset: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = DESK_SCALE_LR)]
    pub lr: f64,
    /// Epochs at which the learning rate drops tenfold.
    #[arg(long, value_delimiter = ',')]
    pub decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Keep every ODE-block activation instead of recomputing them during backward.
    #[arg(long)]
    pub full_storage: bool,
    /// Output directory for history.csv, best.anv2 and final.anv2.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; without it a model is built from --arch, --variant and --seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "resnet4")]
    pub arch: Architecture,
    #[arg(long, default_value = "baseline")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate on the first N test images.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Also write `images,accuracy` to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run one command, printing results to stdout and progress to stderr.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::GradCheck(a) => grad_check(&a),
        Command::CountParams(a) => count_params(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
    }
}

/// Serve every allocation from the heap and never trim it. Activation tensors of a training
/// batch exceed glibc's largest mmap threshold, so by default each one is mapped and faulted
/// in afresh.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
