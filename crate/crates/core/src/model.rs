//! The full classifier: gradient attention, convolutional stem, residual
//! attention blocks, global pooling and a softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{BlockOptions, GradientAttentionParams, ResidualAttentionParams};
use crate::autodiff::{conv_output_extent, Var};
use crate::error::{Error, Result};
use crate::layers::{BatchNormParams, ConvParams, LinearParams, Session};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

/// Architecture description; serialized next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MegaNetConfig {
    /// `(height, width, channels)` of the network input.
    pub input_size: (usize, usize, usize),
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_padding: usize,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub num_blocks: usize,
    pub dropout: f64,
    pub enable_gab: bool,
    pub enable_self_attention: bool,
    pub enable_residual: bool,
    pub strict_literal_attention: bool,
}

impl Default for MegaNetConfig {
    fn default() -> Self {
        MegaNetConfig {
            input_size: (224, 224, 3),
            num_classes: 3,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            pool_kernel: 3,
            pool_stride: 2,
            pool_padding: 1,
            block_channels: vec![64, 128, 256],
            block_strides: vec![1, 2, 2],
            num_blocks: 3,
            dropout: 0.3,
            enable_gab: true,
            enable_self_attention: true,
            enable_residual: true,
            strict_literal_attention: false,
        }
    }
}

impl MegaNetConfig {
    /// Desk-scale preset for single-core training runs: `112 x 112` input,
    /// stem of 8 channels and blocks of 8, 16 and 32 channels.
    pub fn desk() -> Self {
        MegaNetConfig::default().with_resolution(112).scaled_width(8)
    }

    /// Same architecture at a square input resolution.
    pub fn with_resolution(mut self, side: usize) -> Self {
        self.input_size = (side, side, self.input_size.2);
        self
    }

    /// Narrow variant for CPU-bound experiments: the stem and every block
    /// are `width / 64` as wide as the defaults.
    pub fn scaled_width(mut self, stem_channels: usize) -> Self {
        let old = self.stem_channels;
        self.stem_channels = stem_channels;
        self.block_channels = self.block_channels.iter().map(|&c| c * stem_channels / old).collect();
        self
    }

    /// Keep the first `n` blocks, or append blocks that double the
    /// channels with stride 2 until there are `n`.
    pub fn with_blocks(mut self, n: usize) -> Self {
        self.block_channels.truncate(n);
        self.block_strides.truncate(n);
        while self.block_channels.len() < n {
            let last = self.block_channels.last().copied().unwrap_or(self.stem_channels);
            self.block_channels.push(if self.block_channels.is_empty() { last } else { last * 2 });
            self.block_strides.push(if self.block_strides.is_empty() { 1 } else { 2 });
        }
        self.num_blocks = n;
        self
    }

    pub fn block_options(&self) -> BlockOptions {
        BlockOptions {
            self_attention: self.enable_self_attention,
            residual: self.enable_residual,
            strict_literal: self.strict_literal_attention,
            dropout: self.dropout,
        }
    }

    /// Short label of the enabled blocks, e.g. `gab+res+sa`.
    pub fn ablation_label(&self) -> String {
        let parts: Vec<&str> =
            [(self.enable_gab, "gab"), (self.enable_residual, "res"), (self.enable_self_attention, "sa")]
                .iter()
                .filter(|(on, _)| *on)
                .map(|(_, name)| *name)
                .collect();
        if parts.is_empty() {
            "plain".into()
        } else {
            parts.join("+")
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return bad(format!("input size {h}x{w}x{c} has a zero dimension"));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_blocks != self.block_channels.len() || self.num_blocks != self.block_strides.len() {
            return bad(format!(
                "num_blocks = {} but {} block channels and {} block strides given",
                self.num_blocks,
                self.block_channels.len(),
                self.block_strides.len()
            ));
        }
        if self.num_blocks == 0 {
            return bad("at least one residual block is required".into());
        }
        if self.stem_channels == 0 || self.block_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.enable_self_attention {
            if let Some(c) = self.block_channels.iter().find(|&&c| c % 8 != 0) {
                return bad(format!("block channels {c} not divisible by 8 with self-attention enabled"));
            }
        }
        if let Some(s) = self.block_strides.iter().find(|&&s| !(1..=2).contains(&s)) {
            return bad(format!("block stride {s} not in {{1, 2}}"));
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 || self.pool_kernel == 0 || self.pool_stride == 0 {
            return bad("stem kernel, stem stride, pool kernel and pool stride must be positive".into());
        }
        if self.pool_padding >= self.pool_kernel {
            return bad("pool padding must be smaller than the pool kernel".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.stage_shapes(1)?;
        Ok(())
    }

    /// Activation shapes after the stem, the pool and each block.
    pub fn stage_shapes(&self, batch: usize) -> Result<Vec<Shape>> {
        let too_small =
            || Error::Config(format!("input {:?} too small for the configured downsampling", self.input_size));
        let (h, w, _) = self.input_size;
        let pad = self.stem_kernel / 2;
        let sh = conv_output_extent(h, self.stem_kernel, self.stem_stride, pad).ok_or_else(too_small)?;
        let sw = conv_output_extent(w, self.stem_kernel, self.stem_stride, pad).ok_or_else(too_small)?;
        let mut shapes = vec![Shape::new(batch, self.stem_channels, sh, sw)];
        let ph = conv_output_extent(sh, self.pool_kernel, self.pool_stride, self.pool_padding).ok_or_else(too_small)?;
        let pw = conv_output_extent(sw, self.pool_kernel, self.pool_stride, self.pool_padding).ok_or_else(too_small)?;
        shapes.push(Shape::new(batch, self.stem_channels, ph, pw));
        let (mut bh, mut bw) = (ph, pw);
        for (&c, &s) in self.block_channels.iter().zip(&self.block_strides) {
            bh = conv_output_extent(bh, 3, s, 1).ok_or_else(too_small)?;
            bw = conv_output_extent(bw, 3, s, 1).ok_or_else(too_small)?;
            shapes.push(Shape::new(batch, c, bh, bw));
        }
        Ok(shapes)
    }
}

/// Parameter handles of a built network; the values live in `store`.
#[derive(Clone, Debug)]
pub struct MegaNet {
    pub config: MegaNetConfig,
    pub store: ParamStore,
    pub gab: Option<GradientAttentionParams>,
    pub stem: ConvParams,
    pub stem_bn: BatchNormParams,
    pub blocks: Vec<ResidualAttentionParams>,
    pub fc: LinearParams,
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Class probabilities, `(B, 1, 1, K)`.
    pub probs: Var,
    /// Gradient attention map, `(B, 1, H, W)`, when the gate is enabled.
    pub attention: Option<Var>,
}

impl MegaNet {
    /// Deterministically initialize every parameter from `seed`.
    pub fn build(config: MegaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let in_channels = config.input_size.2;
        let gab = if config.enable_gab {
            Some(GradientAttentionParams::new(&mut store, "gab", in_channels, &mut rng)?)
        } else {
            None
        };
        let stem = ConvParams::new(
            &mut store,
            "stem.conv",
            config.stem_channels,
            in_channels,
            config.stem_kernel,
            config.stem_stride,
            false,
            &mut rng,
        )?;
        let stem_bn = BatchNormParams::new(&mut store, "stem.bn", config.stem_channels)?;
        let options = config.block_options();
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut c_in = config.stem_channels;
        for (i, (&c_out, &stride)) in config.block_channels.iter().zip(&config.block_strides).enumerate() {
            blocks.push(ResidualAttentionParams::new(
                &mut store,
                &format!("blocks.{i}"),
                c_in,
                c_out,
                stride,
                options,
                &mut rng,
            )?);
            c_in = c_out;
        }
        let fc = LinearParams::new(&mut store, "fc", config.num_classes, c_in, &mut rng)?;
        Ok(MegaNet { config, store, gab, stem, stem_bn, blocks, fc })
    }

    /// Expected input shape for a batch of `batch` images.
    pub fn input_shape(&self, batch: usize) -> Shape {
        let (h, w, c) = self.config.input_size;
        Shape::new(batch, c, h, w)
    }

    /// Record the full forward pass of `x` on the session's graph.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<ForwardOutput> {
        let shape = s.graph.shape(x);
        let want = self.input_shape(shape.batch);
        if shape != want {
            return Err(Error::shape(format!("model expects input {want:?}, got {shape:?}")));
        }
        let (x, attention) = match &self.gab {
            Some(gab) => {
                let (y, a) = gab.forward(s, x)?;
                (y, Some(a))
            }
            None => (x, None),
        };
        let h = self.stem.forward(s, x)?;
        let h = self.stem_bn.forward(s, h)?;
        let h = s.graph.relu(h);
        let mut h = s.graph.maxpool2d(h, self.config.pool_kernel, self.config.pool_stride, self.config.pool_padding)?;
        for block in &self.blocks {
            h = block.forward(s, h)?;
        }
        let pooled = s.graph.global_avg_pool(h);
        let logits = self.fc.forward(s, pooled)?;
        let probs = s.graph.softmax_rows(logits);
        Ok(ForwardOutput { probs, attention })
    }

    /// Eval-mode class probabilities, one row of `K` per batch item.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut s = Session::eval(&self.store);
        let xv = s.graph.constant(x.clone());
        let out = self.forward(&mut s, xv)?;
        let probs = s.graph.value(out.probs);
        let k = self.config.num_classes;
        Ok(probs.data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Eval-mode arg-max class per batch item (ties resolve to the lowest id).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.iter().map(|row| argmax(row)).collect())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
