use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ltcmh::hashlearn::CommonInput;
use ltcmh::meta::Variant;
use ltcmh::pipeline::{ProjectorKind, RunConfig};
use ltcmh::Modality;

/// Long-tail cross-modal hashing on feature vectors.
#[derive(Debug, Parser)]
#[command(name = "ltcmh", version)]
pub struct Cli {
    /// Root directory for every artifact a command writes.
    #[arg(long, global = true, env = "LTCMH_OUTPUT_DIR", default_value = "ltcmh-out")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tail two-modality dataset.
    GenData(GenDataArgs),
    /// Train the autoencoder, then the hash functions; writes both checkpoints.
    Train(TrainArgs),
    /// Hash one modality of one split with a trained checkpoint.
    Encode(EncodeArgs),
    /// MAP, precision and head/tail breakdown from stored codes.
    Eval(EvalArgs),
    /// Train and evaluate every ablation variant on one dataset.
    Ablate(AblateArgs),
    /// Check analytic gradients and closed forms against oracles.
    CheckGrad(CheckGradArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of labels.
    #[arg(long, default_value_t = 12)]
    pub c: usize,
    /// Sample count of the most frequent label.
    #[arg(long, default_value_t = 1000)]
    pub z1: usize,
    /// Imbalance factor z1/zc; sets the Zipf exponent.
    #[arg(long = "if", value_name = "IF", conflicts_with = "mu")]
    pub imbalance: Option<f64>,
    /// Zipf exponent, as an alternative to --if.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub raw_dim_x: usize,
    #[arg(long, default_value_t = 64)]
    pub raw_dim_y: usize,
    #[arg(long, default_value_t = 8)]
    pub shared_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub private_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Fraction of the rarest labels planted in only one modality.
    #[arg(long, default_value_t = 0.0)]
    pub exclusive_tail_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub labels_max: usize,
    #[arg(long, default_value_t = 0.5)]
    pub secondary_prob: f64,
    /// Samples moved to the query split.
    #[arg(long, default_value_t = 300)]
    pub query_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory (default: <output-dir>/data).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CommonArg {
    Paired,
    Single,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProjectorArg {
    Linear,
    Mlp,
}

/// Hyper-parameters; flags override the config file, which overrides defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Code length k.
    #[arg(long = "bits", short = 'k')]
    pub code_bits: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_feat: Option<f64>,
    #[arg(long)]
    pub lr_ae: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    #[arg(long)]
    pub hash_epochs: Option<usize>,
    #[arg(long)]
    pub modality_dropout: Option<f64>,
    #[arg(long, value_enum)]
    pub common_input: Option<CommonArg>,
    #[arg(long, value_enum)]
    pub projector: Option<ProjectorArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncate rankings to the top R items.
    #[arg(long)]
    pub top_r: Option<usize>,
    /// Labels counted as head, by base frequency.
    #[arg(long)]
    pub head_count: Option<usize>,
}

impl ConfigArgs {
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(code_bits, alpha, beta, gamma, eta, batch_size, lr_feat, lr_ae, max_epochs, modality_dropout, seed);
        if self.ae_epochs.is_some() {
            cfg.ae_epochs = self.ae_epochs;
        }
        if self.hash_epochs.is_some() {
            cfg.hash_epochs = self.hash_epochs;
        }
        if let Some(c) = self.common_input {
            cfg.common_input = match c {
                CommonArg::Paired => CommonInput::Paired,
                CommonArg::Single => CommonInput::Single,
            };
        }
        if let Some(p) = self.projector {
            cfg.projector = match p {
                ProjectorArg::Linear => ProjectorKind::Linear,
                ProjectorArg::Mlp => ProjectorKind::Mlp,
            };
        }
        if self.top_r.is_some() {
            cfg.eval.top_r = self.top_r;
        }
        if self.head_count.is_some() {
            cfg.eval.head_count = self.head_count;
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    #[value(name = "wo-c", alias = "w/oC")]
    WoC,
    #[value(name = "wo-i", alias = "w/oI")]
    WoI,
    #[value(name = "wo-ic", alias = "w/oIC")]
    WoIc,
    #[value(name = "wo-meta-i", alias = "w/oMetaI")]
    WoMetaI,
    #[value(name = "wo-meta-t", alias = "w/oMetaT")]
    WoMetaT,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::WoC => Variant::WoC,
            VariantArg::WoI => Variant::WoI,
            VariantArg::WoIc => Variant::WoIC,
            VariantArg::WoMetaI => Variant::WoMetaI,
            VariantArg::WoMetaT => Variant::WoMetaT,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (default: <output-dir>/data).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    /// Phase-1 checkpoint to start from; skips autoencoder training.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Image,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Query,
    Base,
}

impl SplitArg {
    pub fn name(self) -> &'static str {
        match self {
            SplitArg::Query => "query",
            SplitArg::Base => "base",
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Phase-2 checkpoint (default: <output-dir>/checkpoints/hash).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    #[arg(long, value_enum, default_value = "query")]
    pub split: SplitArg,
    /// Codes directory (default: <output-dir>/codes).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    I2t,
    T2i,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Codes directory holding `<modality>_<split>` code sets (default: <output-dir>/codes).
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub direction: DirectionArg,
    #[arg(long)]
    pub top_r: Option<usize>,
    #[arg(long)]
    pub head_count: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Variants to run (default: all six).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub variants: Vec<VariantArg>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb every checked quantity; all suites should then fail.
    #[arg(long)]
    pub inject_bug: bool,
}
