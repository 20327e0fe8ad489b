//! Gradient attention gate and residual self-attention block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{kaiming_uniform, vector_shape, BatchNormParams, ConvParams, Session};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Zero-padded absolute neighbour differences `(|dx|, |dy|)` of every channel.
pub fn gradient_maps(g: &mut Graph, x: Var) -> (Var, Var) {
    (g.shift_abs_diff(x, Axis::Horizontal), g.shift_abs_diff(x, Axis::Vertical))
}

/// Learnable `1 x C x 3 x 3` kernel and scalar bias producing the single
/// attention channel.
#[derive(Clone, Debug)]
pub struct GradientAttentionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl GradientAttentionParams {
    /// Kaiming-uniform kernel with non-negative entries and a zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        let mut w = kaiming_uniform(Shape::new(1, channels, 3, 3), channels * 9, rng);
        w.data_mut().iter_mut().for_each(|v| *v = v.abs());
        Ok(GradientAttentionParams {
            weight: store.add(format!("{name}.weight"), w, true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vector_shape(1)), true)?,
            channels,
        })
    }

    /// Returns the gated input and the `(B, 1, H, W)` attention map.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let c = s.graph.shape(x).channels;
        if c != self.channels {
            return Err(Error::shape(format!(
                "gradient attention built for {} channels, input has {c}",
                self.channels
            )));
        }
        let (gx, gy) = gradient_maps(&mut s.graph, x);
        let combined = s.graph.add(gx, gy)?;
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let logits = s.graph.conv2d(combined, w, Some(b), 1, 1)?;
        let attn = s.graph.sigmoid(logits);
        let y = s.graph.gate_mul(x, attn)?;
        Ok((y, attn))
    }
}

/// Structural switches of one residual-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub self_attention: bool,
    pub residual: bool,
    /// Drop the `+ x_res` term inside self-attention.
    pub strict_literal: bool,
    pub dropout: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions { self_attention: true, residual: true, strict_literal: false, dropout: 0.3 }
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttentionParams {
    pub query: ConvParams,
    /// Key projection, without bias.
    pub key: ConvParams,
    pub value: ConvParams,
    pub gamma: ParamId,
}

#[derive(Clone, Debug)]
pub struct ResidualAttentionParams {
    pub conv1: ConvParams,
    pub bn1: BatchNormParams,
    pub conv2: ConvParams,
    pub bn2: BatchNormParams,
    pub shortcut: Option<ConvParams>,
    pub attention: Option<SelfAttentionParams>,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub options: BlockOptions,
}

impl ResidualAttentionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        options: BlockOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("{name}: stride {stride} not in {{1, 2}}")));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::Config(format!("{name}: zero channels")));
        }
        if options.self_attention && !c_out.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "{name}: {c_out} output channels not divisible by 8 as self-attention requires"
            )));
        }
        if !(0.0..1.0).contains(&options.dropout) {
            return Err(Error::Config(format!("{name}: dropout {} outside [0, 1)", options.dropout)));
        }
        let conv1 = ConvParams::new(store, &format!("{name}.conv1"), c_out, c_in, 3, stride, false, rng)?;
        let bn1 = BatchNormParams::new(store, &format!("{name}.bn1"), c_out)?;
        let conv2 = ConvParams::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, false, rng)?;
        let bn2 = BatchNormParams::new(store, &format!("{name}.bn2"), c_out)?;
        let shortcut = if options.residual && (c_in != c_out || stride != 1) {
            Some(ConvParams::new(store, &format!("{name}.shortcut"), c_out, c_in, 1, stride, true, rng)?)
        } else {
            None
        };
        let attention = if options.self_attention {
            let qk = c_out / 8;
            Some(SelfAttentionParams {
                query: ConvParams::new(store, &format!("{name}.attn.query"), qk, c_out, 1, 1, true, rng)?,
                key: ConvParams::new(store, &format!("{name}.attn.key"), qk, c_out, 1, 1, false, rng)?,
                value: ConvParams::new(store, &format!("{name}.attn.value"), c_out, c_out, 1, 1, true, rng)?,
                gamma: store.add(format!("{name}.attn.gamma"), Tensor::zeros(Shape::scalar()), true)?,
            })
        } else {
            None
        };
        Ok(ResidualAttentionParams { conv1, bn1, conv2, bn2, shortcut, attention, c_in, c_out, stride, options })
    }

    /// `x_res = shortcut(x) + BN2(Conv2(ReLU(BN1(Conv1(x)))))`.
    pub fn residual_forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = s.graph.shape(x).channels;
        if c != self.c_in {
            return Err(Error::shape(format!("block expects {} channels, input has {c}", self.c_in)));
        }
        let h = self.conv1.forward(s, x)?;
        let h = self.bn1.forward(s, h)?;
        let h = s.graph.relu(h);
        let h = self.conv2.forward(s, h)?;
        let f = self.bn2.forward(s, h)?;
        if !self.options.residual {
            return Ok(f);
        }
        let shortcut = match &self.shortcut {
            Some(conv) => conv.forward(s, x)?,
            None => x,
        };
        let (ss, fs) = (s.graph.shape(shortcut), s.graph.shape(f));
        assert_eq!(ss, fs, "shortcut {ss:?} and residual branch {fs:?} disagree");
        s.graph.add(shortcut, f)
    }

    /// Spatial self-attention over `x_res`, followed by ReLU and dropout.
    pub fn self_attention(&self, s: &mut Session, x_res: Var) -> Result<Var> {
        let y = match &self.attention {
            Some(attn) => self.attend(attn, s, x_res)?,
            None => x_res,
        };
        let y = s.graph.relu(y);
        s.dropout(y, self.options.dropout)
    }

    /// `y_attn = gamma * (V E^T) [+ x_res]`, `E = softmax_rows(Q^T K)`.
    fn attend(&self, attn: &SelfAttentionParams, s: &mut Session, x_res: Var) -> Result<Var> {
        let q = attn.query.forward(s, x_res)?;
        let k = attn.key.forward(s, x_res)?;
        let v = attn.value.forward(s, x_res)?;
        let o = s.graph.spatial_attention(q, k, v)?;
        let gamma = s.param(attn.gamma);
        let scaled = s.graph.scale_by(o, gamma)?;
        if self.options.strict_literal {
            Ok(scaled)
        } else {
            s.graph.add(scaled, x_res)
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let x_res = self.residual_forward(s, x)?;
        self.self_attention(s, x_res)
    }
}
