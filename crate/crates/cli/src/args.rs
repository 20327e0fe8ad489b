use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mesti_core::pipeline::EqualizeOrder;
use mesti_core::{EncoderKind, MegaNetConfig, PipelineConfig, TrainConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mesti", version, about = "MESTI encoding and MEGANet micro-expression recognition")]
pub struct Cli {
    /// JSON config with optional `model`, `train`, `pipeline`, `synth`,
    /// `jobs` and `out_dir` entries; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool clips into MESTI or dynamic images.
    Encode(EncodeArgs),
    /// Export the gradient attention map of an image.
    AttentionMap(AttentionArgs),
    /// Generate a synthetic micro-motion dataset.
    Synth(SynthArgs),
    /// Train and evaluate under leave-one-subject-out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderArg {
    Mesti,
    Dynamic,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Mesti => EncoderKind::Mesti,
            EncoderArg::Dynamic => EncoderKind::Dynamic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    Mesti,
    Dynamic,
    Both,
}

impl EncoderChoice {
    pub fn kinds(self) -> Vec<EncoderKind> {
        match self {
            EncoderChoice::Mesti => vec![EncoderKind::Mesti],
            EncoderChoice::Dynamic => vec![EncoderKind::Dynamic],
            EncoderChoice::Both => vec![EncoderKind::Mesti, EncoderKind::Dynamic],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ApexFallback {
    /// Frame `ceil(T / 2)` of the clip.
    Middle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    EqualizeThenResize,
    ResizeThenEqualize,
}

impl From<OrderArg> for EqualizeOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::EqualizeThenResize => EqualizeOrder::EqualizeThenResize,
            OrderArg::ResizeThenEqualize => EqualizeOrder::ResizeThenEqualize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Loso,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 224 x 224 input with 64-channel stem and blocks of 64, 128 and 256.
    Full,
    /// 112 x 112 input with 8-channel stem and blocks of 8, 16 and 32.
    Desk,
}

impl Preset {
    pub fn model(self) -> MegaNetConfig {
        match self {
            Preset::Full => MegaNetConfig::default(),
            Preset::Desk => MegaNetConfig::desk(),
        }
    }
}

/// Frame preprocessing switches shared by `encode` and `train`.
#[derive(Debug, Args)]
pub struct PipelineFlags {
    /// Equalize every frame's histogram before pooling.
    #[arg(long)]
    pub hist_equalize: bool,
    /// Whether equalization runs before or after resizing.
    #[arg(long, value_enum)]
    pub equalize_order: Option<OrderArg>,
    /// Use the middle frame even where an apex is annotated.
    #[arg(long)]
    pub ignore_apex: bool,
}

impl PipelineFlags {
    pub fn apply(&self, mut p: PipelineConfig) -> PipelineConfig {
        p.hist_equalize |= self.hist_equalize;
        p.ignore_apex |= self.ignore_apex;
        if let Some(o) = self.equalize_order {
            p.equalize_order = o.into();
        }
        p
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Dataset manifest CSV; every row is encoded.
    #[arg(long, required_unless_present = "clip_dir", conflicts_with = "clip_dir")]
    pub manifest: Option<PathBuf>,
    /// Directory of numerically named frames forming one clip.
    #[arg(long)]
    pub clip_dir: Option<PathBuf>,
    /// First frame of the clip (1-based, `--clip-dir` only).
    #[arg(long, requires = "clip_dir")]
    pub onset: Option<usize>,
    /// Last frame of the clip (1-based, `--clip-dir` only); defaults to the last file.
    #[arg(long, requires = "clip_dir")]
    pub offset: Option<usize>,
    /// Apex frame, numbered like `--onset` (`--clip-dir` only).
    #[arg(long, requires = "clip_dir")]
    pub apex: Option<usize>,
    /// Subject name used in output file names (`--clip-dir` only).
    #[arg(long, default_value = "clip")]
    pub subject: String,
    /// Pooling method to run on every clip.
    #[arg(long, value_enum, default_value_t = EncoderChoice::Mesti)]
    pub encoder: EncoderChoice,
    /// Apex used for clips without an annotated apex.
    #[arg(long, value_enum, default_value_t = ApexFallback::Middle)]
    pub apex_fallback: ApexFallback,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Resize the PNG view to a square of this side.
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory.
    #[arg(long, env = "MESTI_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    /// Input image (PNG or another common format).
    pub image: PathBuf,
    /// Checkpoint directory whose gradient attention weights are used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output PNG; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Initialization seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square input side of a freshly initialized model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec as JSON; missing fields take their defaults.
    pub spec: Option<PathBuf>,
    /// Dataset root.
    #[arg(long, env = "MESTI_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Generator seed, overriding the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Architecture overrides applied after the preset and config file.
#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Square input side.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Stem channels; block widths scale proportionally.
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of residual attention blocks.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Remove the gradient attention block.
    #[arg(long)]
    pub no_gab: bool,
    /// Remove self-attention from every block.
    #[arg(long)]
    pub no_self_attention: bool,
    /// Remove the shortcut connection from every block.
    #[arg(long)]
    pub no_residual: bool,
    /// Drop the residual term from the self-attention output.
    #[arg(long)]
    pub strict_literal_attention: bool,
    /// Dropout rate after self-attention.
    #[arg(long)]
    pub dropout: Option<f64>,
}

impl ModelFlags {
    pub fn apply(&self, mut m: MegaNetConfig) -> MegaNetConfig {
        if let Some(r) = self.resolution {
            m = m.with_resolution(r);
        }
        if let Some(w) = self.width {
            m = m.scaled_width(w);
        }
        if let Some(n) = self.blocks {
            m = m.with_blocks(n);
        }
        m.enable_gab &= !self.no_gab;
        m.enable_self_attention &= !self.no_self_attention;
        m.enable_residual &= !self.no_residual;
        m.strict_literal_attention |= self.strict_literal_attention;
        if let Some(d) = self.dropout {
            m.dropout = d;
        }
        m
    }
}

/// Optimization overrides applied after the config file.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Training epochs per fold.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Focusing exponent of the focal loss; 0 gives cross-entropy.
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    /// Train on the original images only.
    #[arg(long)]
    pub no_augment: bool,
    /// Base seed; fold i uses `seed ^ i`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainFlags {
    pub fn apply(&self, mut t: TrainConfig) -> TrainConfig {
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.lr = self.lr.unwrap_or(t.lr);
        t.weight_decay = self.weight_decay.unwrap_or(t.weight_decay);
        t.focal_gamma = self.focal_gamma.unwrap_or(t.focal_gamma);
        t.augment &= !self.no_augment;
        t.seed = self.seed.unwrap_or(t.seed);
        t
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::Loso)]
    pub protocol: Protocol,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Pooling method used to build the training images.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Worker threads for encoding and folds; 0 uses all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory for the report and fold checkpoints.
    #[arg(long, env = "MESTI_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for `eval.json`.
    #[arg(long, env = "MESTI_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Inference batch size.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Worker threads for encoding; 0 uses all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}
