use super::{Graph, Mode, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased variance, the quantity blended into the running estimate.
    pub var_unbiased: Vec<f64>,
}

impl BatchMoments {
    /// Blend into running statistics with [`BN_MOMENTUM`].
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64]) {
        for (r, m) in running_mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in running_var.iter_mut().zip(&self.var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

impl Graph {
    /// Batch normalisation over `(B, H, W)` per channel.
    ///
    /// In [`Mode::Train`] the batch statistics normalise the input and are
    /// returned so the caller can update its running estimates; in
    /// [`Mode::Eval`] `running_mean`/`running_var` are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let s = self.shape(x);
        let c = s.channels;
        for (what, len) in [
            ("gamma", self.value(gamma).len()),
            ("beta", self.value(beta).len()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(format!(
                    "batch_norm {what} has {len} values but input {s:?} has {c} channels"
                )));
            }
        }
        let xv = self.value(x).data();
        let plane = s.plane();
        let n = (s.batch * plane) as f64;

        let (mean, var, moments) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut acc = 0.0;
                    for b in 0..s.batch {
                        let off = (b * c + ch) * plane;
                        acc += xv[off..off + plane].iter().sum::<f64>();
                    }
                    let m = acc / n;
                    let mut sq = 0.0;
                    for b in 0..s.batch {
                        let off = (b * c + ch) * plane;
                        sq += xv[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / n;
                }
                let unbiased = if n > 1.0 { var.iter().map(|v| v * n / (n - 1.0)).collect() } else { var.clone() };
                let moments = BatchMoments { mean: mean.clone(), var_unbiased: unbiased };
                (mean, var, Some(moments))
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; s.numel()];
        for b in 0..s.batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (m, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for (o, v) in out[off..off + plane].iter_mut().zip(&xv[off..off + plane]) {
                    *o = (v - m) * is * ga + be;
                }
            }
        }
        let y = self.push_op(
            Tensor::from_vec(s, out)?,
            Op::BatchNorm { input: x, gamma, beta, mean, inv_std, train: mode == Mode::Train },
            &[x, gamma, beta],
        );
        Ok((y, moments))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    g: &Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[f64],
    inv_std: &[f64],
    train: bool,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let s = g.shape(x);
    let c = s.channels;
    let plane = s.plane();
    let n = (s.batch * plane) as f64;
    let xv = g.value(x).data();
    let gv = g.value(gamma).data();

    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for b in 0..s.batch {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for (dy, v) in grad[off..off + plane].iter().zip(&xv[off..off + plane]) {
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * (v - mean[ch]) * inv_std[ch];
            }
        }
    }

    let mut result = Vec::with_capacity(3);
    if g.needs(x) {
        let mut dx = vec![0.0; s.numel()];
        for b in 0..s.batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let scale = gv[ch] * inv_std[ch];
                let dst = &mut dx[off..off + plane];
                if train {
                    let (sd, sdx) = (sum_dy[ch] / n, sum_dy_xhat[ch] / n);
                    for ((d, dy), v) in dst.iter_mut().zip(&grad[off..off + plane]).zip(&xv[off..off + plane]) {
                        let xhat = (v - mean[ch]) * inv_std[ch];
                        *d = scale * (dy - sd - xhat * sdx);
                    }
                } else {
                    for (d, dy) in dst.iter_mut().zip(&grad[off..off + plane]) {
                        *d = scale * dy;
                    }
                }
            }
        }
        result.push((x, dx));
    }
    result.push((gamma, sum_dy_xhat));
    result.push((beta, sum_dy));
    result
}
