use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regseg_core::{
    Architecture, FusionMode, LossMode, ModelConfig, SoftmaxOrder, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "regseg",
    version,
    about = "Region-based semantic segmentation with end-to-end training",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset (images, labels, manifest).
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, training log and config echo.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the finite-difference gradient-check battery.
    Gradcheck(GradcheckArgs),
    /// Write predicted label maps and colorized previews for a split.
    Predict(PredictArgs),
    /// Train matched configurations differing in one axis and report deltas.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train_count: usize,
    #[arg(long, default_value_t = 50)]
    pub test_count: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 2.0)]
    pub exponent: f64,
    #[arg(long, default_value_t = 3)]
    pub objects_min: usize,
    #[arg(long, default_value_t = 6)]
    pub objects_max: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Overwrite a non-empty output directory.
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchFlag {
    E2e,
    Baseline,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionFlag {
    Box,
    Region,
    Tied,
    Separate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossFlag {
    Balanced,
    Unbalanced,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SoftmaxOrderFlag {
    /// Pixel max over raw scores, then softmax.
    MaxFirst,
    /// Per-region softmax, then pixel max.
    SoftmaxFirst,
}

#[derive(Args, Debug)]
pub struct ModelFlags {
    #[arg(long, value_enum, default_value_t = ArchFlag::E2e)]
    pub arch: ArchFlag,
    #[arg(long, value_enum, default_value_t = FusionFlag::Separate)]
    pub fusion: FusionFlag,
    #[arg(long, value_enum, default_value_t = LossFlag::Balanced)]
    pub loss: LossFlag,
    #[arg(long, value_enum, default_value_t = SoftmaxOrderFlag::MaxFirst)]
    pub softmax_order: SoftmaxOrderFlag,
    #[arg(long, default_value_t = 16)]
    pub conv1_channels: usize,
    #[arg(long, default_value_t = 32)]
    pub conv2_channels: usize,
    #[arg(long, default_value_t = 64)]
    pub head_width: usize,
    #[arg(long, default_value_t = 6)]
    pub pooled_size: usize,
}

impl ModelFlags {
    pub fn to_config(&self, num_classes: usize) -> ModelConfig {
        let mut config = match self.arch {
            ArchFlag::E2e => ModelConfig::end_to_end(num_classes),
            ArchFlag::Baseline => ModelConfig::baseline(num_classes),
        };
        if matches!(self.arch, ArchFlag::E2e) {
            config.fusion = match self.fusion {
                FusionFlag::Box => FusionMode::BoxOnly,
                FusionFlag::Region => FusionMode::RegionOnly,
                FusionFlag::Tied => FusionMode::Tied,
                FusionFlag::Separate => FusionMode::Separate,
            };
            config.softmax_order = match self.softmax_order {
                SoftmaxOrderFlag::MaxFirst => SoftmaxOrder::MaxThenSoftmax,
                SoftmaxOrderFlag::SoftmaxFirst => SoftmaxOrder::SoftmaxThenMax,
            };
        }
        config.loss_mode = match self.loss {
            LossFlag::Balanced => LossMode::Balanced,
            LossFlag::Unbalanced => LossMode::Unbalanced,
        };
        config.conv1_channels = self.conv1_channels;
        config.conv2_channels = self.conv2_channels;
        config.head_width = self.head_width;
        config.pooled_size = self.pooled_size;
        config
    }

    pub fn describe(&self, config: &ModelConfig) -> Vec<(String, String)> {
        vec![
            (
                "arch".into(),
                match config.arch {
                    Architecture::EndToEnd => "e2e".into(),
                    Architecture::Baseline => "baseline".into(),
                },
            ),
            (
                "fusion".into(),
                match config.fusion {
                    FusionMode::BoxOnly => "box".into(),
                    FusionMode::RegionOnly => "region".into(),
                    FusionMode::Tied => "tied".into(),
                    FusionMode::Separate => "separate".into(),
                },
            ),
            (
                "loss".into(),
                match config.loss_mode {
                    LossMode::Balanced => "balanced".into(),
                    LossMode::Unbalanced => "unbalanced".into(),
                },
            ),
            (
                "softmax_order".into(),
                match config.softmax_order {
                    SoftmaxOrder::MaxThenSoftmax => "max-first".into(),
                    SoftmaxOrder::SoftmaxThenMax => "softmax-first".into(),
                },
            ),
            ("conv1_channels".into(), config.conv1_channels.to_string()),
            ("conv2_channels".into(), config.conv2_channels.to_string()),
            ("head_width".into(), config.head_width.to_string()),
            ("pooled_size".into(), config.pooled_size.to_string()),
        ]
    }
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 1e-3)]
    pub lr1: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs1: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr2: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs2: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overlap threshold for positive baseline training regions.
    #[arg(long, default_value_t = 0.5)]
    pub pos_overlap: f64,
    /// Overlap threshold below which a baseline region would count as
    /// negative; regions between the thresholds are ignored.
    #[arg(long, default_value_t = 0.2)]
    pub neg_overlap: f64,
}

impl TrainFlags {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            lr_phase1: self.lr1,
            epochs_phase1: self.epochs1,
            lr_phase2: self.lr2,
            epochs_phase2: self.epochs2,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            pos_overlap: self.pos_overlap,
            neg_overlap: self.neg_overlap,
        }
    }

    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("lr1".into(), format!("{}", self.lr1)),
            ("epochs1".into(), self.epochs1.to_string()),
            ("lr2".into(), format!("{}", self.lr2)),
            ("epochs2".into(), self.epochs2.to_string()),
            ("momentum".into(), format!("{}", self.momentum)),
            ("weight_decay".into(), format!("{}", self.weight_decay)),
            ("seed".into(), self.seed.to_string()),
            ("pos_overlap".into(), format!("{}", self.pos_overlap)),
            ("neg_overlap".into(), format!("{}", self.neg_overlap)),
        ]
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProposalFlag {
    Grid,
    Overseg,
}

#[derive(Args, Debug)]
pub struct ProposalFlags {
    #[arg(long, value_enum, default_value_t = ProposalFlag::Grid)]
    pub proposals: ProposalFlag,
    /// Grid window scales in pixels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32])]
    pub scales: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub stride_fraction: f64,
    /// Mean-color merge threshold for the oversegmentation.
    #[arg(long, default_value_t = 0.12)]
    pub merge_threshold: f64,
    #[arg(long, default_value_t = 16)]
    pub min_region_size: usize,
}

impl ProposalFlags {
    pub fn to_config(&self) -> regseg_core::ProposalConfig {
        let overseg = regseg_core::trainer::OversegParams {
            merge_threshold: self.merge_threshold,
            min_region_size: self.min_region_size,
        };
        match self.proposals {
            ProposalFlag::Grid => regseg_core::ProposalConfig::Grid {
                scales: self.scales.clone(),
                stride_fraction: self.stride_fraction,
                overseg: Some(overseg),
            },
            ProposalFlag::Overseg => regseg_core::ProposalConfig::Oversegmentation(overseg),
        }
    }

    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            (
                "proposals".into(),
                match self.proposals {
                    ProposalFlag::Grid => "grid".into(),
                    ProposalFlag::Overseg => "overseg".into(),
                },
            ),
            (
                "scales".into(),
                self.scales
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("stride_fraction".into(), format!("{}", self.stride_fraction)),
            ("merge_threshold".into(), format!("{}", self.merge_threshold)),
            ("min_region_size".into(), self.min_region_size.to_string()),
        ]
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub proposal: ProposalFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitFlag {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
    pub split: SplitFlag,
    /// Restrict metrics to pixels within this distance of a ground-truth
    /// boundary.
    #[arg(long)]
    pub boundary_band: Option<usize>,
    #[command(flatten)]
    pub proposal: ProposalFlags,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Weight coordinates sampled per parameter tensor in the whole-model
    /// checks.
    #[arg(long, default_value_t = 12)]
    pub samples_per_param: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
    pub split: SplitFlag,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub proposal: ProposalFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblationAxis {
    /// End-to-end pixel loss vs baseline region classification, both with
    /// bounding-box pooling only.
    E2eVsBaseline,
    /// Max-then-softmax vs softmax-then-max composition.
    SoftmaxOrder,
    /// Multi-scale overlapping grid proposals vs oversegmentation only.
    RegionShape,
    /// Box / region / tied / separate pooling representations.
    PoolingMode,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub which: AblationAxis,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub proposal: ProposalFlags,
}
