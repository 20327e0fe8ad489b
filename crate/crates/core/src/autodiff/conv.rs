//! 2-D cross-correlation via im2col + GEMM.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatLayout, Shape, Tensor};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1x1, unit-stride, unpadded: the input item already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output columns `ow` whose input column `ow * stride + kj - padding`
    /// lies inside the image, as a half-open range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.padding > kj {
            ((self.w + self.padding - kj - 1) / self.stride + 1).min(self.w_out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (hw_out, k) = (self.col_cols(), self.k);
        for c in 0..self.c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                    let (lo, hi) = self.valid_cols(kj);
                    for oh in 0..self.h_out {
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oh * self.w_out..(oh + 1) * self.w_out];
                        if ih < 0 || ih >= self.h as isize || lo == hi {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + ih as usize) * self.w..][..self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        let first = lo * self.stride + kj - self.padding;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, &s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(self.stride)) {
                                *v = s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], dx: &mut [f64]) {
        let (hw_out, k) = (self.col_cols(), self.k);
        for c in 0..self.c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * hw_out..(row + 1) * hw_out];
                    let (lo, hi) = self.valid_cols(kj);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * self.stride + kj - self.padding;
                    for oh in 0..self.h_out {
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + ih as usize) * self.w..][..self.w];
                        let line = &src[oh * self.w_out + lo..oh * self.w_out + hi];
                        for (d, &v) in dst[first..].iter_mut().step_by(self.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: Shape, w: Shape, stride: usize, padding: usize) -> Result<Geometry> {
    if w.height != w.width {
        return Err(Error::shape(format!("kernel {w:?} is not square")));
    }
    if x.channels != w.channels {
        return Err(Error::shape(format!(
            "conv2d input has {} channels but kernel {w:?} expects {}",
            x.channels, w.channels
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    let k = w.height;
    let (Some(h_out), Some(w_out)) =
        (conv_output_extent(x.height, k, stride, padding), conv_output_extent(x.width, k, stride, padding))
    else {
        return Err(Error::shape(format!(
            "kernel {k}x{k} with padding {padding} does not fit input {}x{}",
            x.height, x.width
        )));
    };
    Ok(Geometry { c_in: x.channels, h: x.height, w: x.width, k, stride, padding, h_out, w_out })
}

impl Graph {
    /// Cross-correlation of `x (B, C_in, H, W)` with `weight (C_out, C_in, k, k)`
    /// plus an optional `bias` of `C_out` values.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let geo = geometry(xs, ws, stride, padding)?;
        let c_out = ws.batch;
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(Error::shape(format!("conv2d bias has {} values, expected {c_out}", self.value(b).len())));
            }
        }
        let out_shape = Shape::new(xs.batch, c_out, geo.h_out, geo.w_out);
        let mut out = vec![0.0; out_shape.numel()];
        let (rows, cols) = (geo.col_rows(), geo.col_cols());
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols] };
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        for b in 0..xs.batch {
            let item = &xv[b * xs.item_len()..(b + 1) * xs.item_len()];
            let colm: &[f64] = if geo.is_pointwise() {
                item
            } else {
                geo.im2col(item, &mut col);
                &col
            };
            let dst = &mut out[b * out_shape.item_len()..(b + 1) * out_shape.item_len()];
            gemm(
                c_out,
                rows,
                cols,
                wv,
                MatLayout::row_major(rows, false),
                colm,
                MatLayout::row_major(cols, false),
                0.0,
                dst,
            );
            if let Some(bv) = bias {
                let bd = self.value(bv).data();
                for (co, plane) in dst.chunks_mut(cols).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bd[co]);
                }
            }
        }
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            Tensor::from_vec(out_shape, out)?,
            Op::Conv2d { input: x, weight, bias, stride, padding },
            &inputs,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    g: &Graph,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    out_shape: Shape,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let xs = g.shape(x);
    let ws = g.shape(weight);
    let geo = geometry(xs, ws, stride, padding).expect("validated in forward");
    let c_out = ws.batch;
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let xv = g.value(x).data();
    let wv = g.value(weight).data();
    let need_x = g.needs(x);
    let need_w = g.needs(weight);

    let mut dw = vec![0.0; if need_w { ws.numel() } else { 0 }];
    let mut dx = vec![0.0; if need_x { xs.numel() } else { 0 }];
    let mut col = if geo.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols] };
    let mut dcol = vec![0.0; if need_x && !geo.is_pointwise() { rows * cols } else { 0 }];

    for b in 0..xs.batch {
        let gout = &grad[b * out_shape.item_len()..(b + 1) * out_shape.item_len()];
        if need_w {
            let item = &xv[b * xs.item_len()..(b + 1) * xs.item_len()];
            let colm: &[f64] = if geo.is_pointwise() {
                item
            } else {
                geo.im2col(item, &mut col);
                &col
            };
            // dW (c_out x rows) += dOut (c_out x cols) * col^T (cols x rows)
            gemm(
                c_out,
                cols,
                rows,
                gout,
                MatLayout::row_major(cols, false),
                colm,
                MatLayout::row_major(cols, true),
                1.0,
                &mut dw,
            );
        }
        if need_x {
            let dx_item = &mut dx[b * xs.item_len()..(b + 1) * xs.item_len()];
            // dcol (rows x cols) = W^T (rows x c_out) * dOut (c_out x cols)
            if geo.is_pointwise() {
                gemm(
                    rows,
                    c_out,
                    cols,
                    wv,
                    MatLayout::row_major(rows, true),
                    gout,
                    MatLayout::row_major(cols, false),
                    0.0,
                    dx_item,
                );
            } else {
                gemm(
                    rows,
                    c_out,
                    cols,
                    wv,
                    MatLayout::row_major(rows, true),
                    gout,
                    MatLayout::row_major(cols, false),
                    0.0,
                    &mut dcol,
                );
                geo.col2im_add(&dcol, dx_item);
            }
        }
    }

    let mut result = Vec::with_capacity(3);
    if need_x {
        result.push((x, dx));
    }
    if need_w {
        result.push((weight, dw));
    }
    if let Some(bv) = bias {
        if g.needs(bv) {
            let mut db = vec![0.0; c_out];
            for item in grad.chunks(out_shape.item_len()) {
                for (co, plane) in item.chunks(cols).enumerate() {
                    db[co] += plane.iter().sum::<f64>();
                }
            }
            result.push((bv, db));
        }
    }
    result
}
