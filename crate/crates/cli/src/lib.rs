//! Command-line front end: data generation, theory checks, training,
//! evaluation, gradient checks and attention map export.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fusion::heads::{AttentionMode, HeadKind};
use fusion::losses::LossKind;
use fusion::Error;

/// Successful run.
pub const EXIT_OK: i32 = 0;
/// A verified inequality failed, or a run could not complete.
pub const EXIT_FAILURE: i32 = 1;
/// Bad flags, bad config, or malformed input files.
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "fusion",
    version,
    about = "Attention-fusion projection heads and their subspace theory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a clustered batch near a random union of subspaces.
    GenData(GenDataArgs),
    /// Estimate cluster integrity by greedy search.
    Rho(RhoArgs),
    /// Check the block form of the constructed attention.
    VerifyThm1(VerifyArgs),
    /// Check sharpness growth across constructed fusion layers.
    VerifyThm2(VerifyThm2Args),
    /// Train an encoder and projection head.
    Train(TrainArgs),
    /// Re-evaluate a finished run.
    Eval(RunArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Export a run's attention matrices as PGM and CSV.
    AttentionMaps(MapsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    Random,
    AxisAligned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn is_on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Equation,
    CodeListing,
}

impl From<ModeArg> for AttentionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Equation => AttentionMode::Equation,
            ModeArg::CodeListing => AttentionMode::CodeListing,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    #[value(name = "nt_xent")]
    NtXent,
    Jsd,
    #[value(name = "kl_softmax")]
    KlSoftmax,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::NtXent => LossKind::NtXent,
            LossArg::Jsd => LossKind::Jsd,
            LossArg::KlSoftmax => LossKind::KlSoftmax,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Ffn,
    Transfusion,
    Transformer,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Ffn => HeadKind::Ffn,
            HeadArg::Transfusion => HeadKind::Transfusion,
            HeadArg::Transformer => HeadKind::Transformer,
        }
    }
}

/// Subspace ensemble and sampling shared by the geometry commands.
#[derive(Args, Debug, Clone)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ambient dimension.
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    /// Number of clusters.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Rank of every subspace.
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    /// Samples per cluster.
    #[arg(long, default_value_t = 10)]
    pub per_cluster: usize,
    /// Noise level: each sample keeps cosine at least 1 - eps to its subspace.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = EnsembleArg::Random)]
    pub mode: EnsembleArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RhoArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = EnsembleArg::Random)]
    pub mode: EnsembleArg,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

#[derive(Args, Debug)]
pub struct VerifyThm2Args {
    #[command(flatten)]
    pub verify: VerifyArgs,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    pub residual: OnOff,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ambient dimension of synthetic data.
    #[arg(long)]
    pub m: Option<usize>,
    /// Clusters of synthetic data.
    #[arg(long)]
    pub k: Option<usize>,
    /// Subspace rank of synthetic data.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Augmentation noise.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    /// Head depth.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub residual: Option<OnOff>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Relative error above which the check fails.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct MapsArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Epoch number, or `last`.
    #[arg(long, default_value = "last")]
    pub epoch: String,
    /// Output directory; defaults to `<run>/maps`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command that completed without an internal error.
#[derive(Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    /// A checked inequality did not hold.
    Violated,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_)
        | Error::Config(_)
        | Error::Json(_)
        | Error::Format { .. }
        | Error::Unsupported(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(Verdict::Ok) => EXIT_OK,
        Ok(Verdict::Violated) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
