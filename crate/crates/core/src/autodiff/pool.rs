use super::conv::conv_output_extent;
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

impl Graph {
    /// Max pooling with a `k x k` window. Padded positions never win.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(x);
        if k == 0 || stride == 0 || padding >= k {
            return Err(Error::InvalidArgument(format!("maxpool2d window {k}, stride {stride}, padding {padding}")));
        }
        let (Some(ho), Some(wo)) =
            (conv_output_extent(s.height, k, stride, padding), conv_output_extent(s.width, k, stride, padding))
        else {
            return Err(Error::shape(format!("maxpool2d window {k} larger than input {s:?}")));
        };
        let out_shape = Shape::new(s.batch, s.channels, ho, wo);
        let xv = self.value(x).data();
        let mut out = vec![0.0; out_shape.numel()];
        let mut argmax = vec![0usize; out_shape.numel()];
        for plane in 0..s.batch * s.channels {
            let in_off = plane * s.plane();
            let out_off = plane * ho * wo;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for ki in 0..k {
                        let ih = (oh * stride + ki) as isize - padding as isize;
                        if ih < 0 || ih >= s.height as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * stride + kj) as isize - padding as isize;
                            if iw < 0 || iw >= s.width as isize {
                                continue;
                            }
                            let p = in_off + ih as usize * s.width + iw as usize;
                            if xv[p] > best || best_at == usize::MAX {
                                best = xv[p];
                                best_at = p;
                            }
                        }
                    }
                    out[out_off + oh * wo + ow] = best;
                    argmax[out_off + oh * wo + ow] = best_at;
                }
            }
        }
        Ok(self.push_op(Tensor::from_vec(out_shape, out)?, Op::MaxPool { input: x, argmax }, &[x]))
    }

    /// Spatial mean per channel, `(B, C, H, W) -> (B, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let xv = self.value(x).data();
        let out: Vec<f64> = xv.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        let t = Tensor::from_vec(Shape::new(s.batch, s.channels, 1, 1), out).expect("shape");
        self.push_op(t, Op::GlobalAvgPool(x), &[x])
    }
}

pub(super) fn maxpool_backward(g: &Graph, x: Var, argmax: &[usize], grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let mut dx = vec![0.0; g.value(x).len()];
    for (d, &p) in grad.iter().zip(argmax) {
        dx[p] += d;
    }
    vec![(x, dx)]
}

pub(super) fn gap_backward(g: &Graph, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let s = g.shape(x);
    let plane = s.plane();
    let scale = 1.0 / plane as f64;
    let mut dx = vec![0.0; s.numel()];
    for (chunk, d) in dx.chunks_mut(plane).zip(grad) {
        chunk.fill(d * scale);
    }
    vec![(x, dx)]
}
