use rand::Rng;

use super::{Graph, Mode, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Spatial axis for neighbour differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along the width: `x(i, j+1) - x(i, j)`.
    Horizontal,
    /// Along the height: `x(i+1, j) - x(i, j)`.
    Vertical,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| f(v.data()[i]));
        self.push_op(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(s, |i| va[i] + vb[i]);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(s, |i| va[i] * vb[i]);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    /// `|a - b|` elementwise.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "abs_diff")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::from_fn(s, |i| (va[i] - vb[i]).abs());
        Ok(self.push_op(out, Op::AbsDiff(a, b), &[a, b]))
    }

    /// Absolute forward difference with the neighbour along `axis`; the last
    /// column (or row) has no neighbour and is zero.
    pub fn shift_abs_diff(&mut self, x: Var, axis: Axis) -> Var {
        let v = self.value(x);
        let s = v.shape();
        let d = v.data();
        let mut out = vec![0.0; s.numel()];
        for plane in 0..s.batch * s.channels {
            let off = plane * s.plane();
            for i in 0..s.height {
                for j in 0..s.width {
                    let p = off + i * s.width + j;
                    out[p] = match axis {
                        Axis::Horizontal if j + 1 < s.width => (d[p + 1] - d[p]).abs(),
                        Axis::Vertical if i + 1 < s.height => (d[p + s.width] - d[p]).abs(),
                        _ => 0.0,
                    };
                }
            }
        }
        let t = Tensor::from_vec(s, out).expect("shape preserved");
        self.push_op(t, Op::ShiftAbsDiff { input: x, axis }, &[x])
    }

    /// Multiply `x (B, C, H, W)` by a single-channel `gate (B, 1, H, W)`
    /// broadcast over channels.
    pub fn gate_mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(gate));
        if sg != Shape::new(sx.batch, 1, sx.height, sx.width) {
            return Err(Error::shape(format!("gate {sg:?} does not broadcast over {sx:?}")));
        }
        let (vx, vg) = (self.value(x).data(), self.value(gate).data());
        let plane = sx.plane();
        let out = Tensor::from_fn(sx, |i| {
            let b = i / sx.item_len();
            vx[i] * vg[b * plane + i % plane]
        });
        Ok(self.push_op(out, Op::GateMul { input: x, gate }, &[x, gate]))
    }

    /// Multiply every element of `x` by the scalar node `scale`.
    pub fn scale_by(&mut self, x: Var, scale: Var) -> Result<Var> {
        if self.value(scale).len() != 1 {
            return Err(Error::shape(format!("scale must be a scalar, got {:?}", self.shape(scale))));
        }
        let s = self.value(scale).data()[0];
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| s * v.data()[i]);
        Ok(self.push_op(out, Op::ScaleBy { input: x, scale }, &[x, scale]))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`; identity in eval.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let v = self.value(x);
        let out = Tensor::from_fn(v.shape(), |i| v.data()[i] * mask[i]);
        Ok(self.push_op(out, Op::Dropout { input: x, mask }, &[x]))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(super) fn relu_backward(g: &Graph, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let xv = g.value(x).data();
    vec![(x, grad.iter().zip(xv).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect())]
}

pub(super) fn sigmoid_backward(x: Var, out: &Tensor, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    vec![(x, grad.iter().zip(out.data()).map(|(d, y)| d * y * (1.0 - y)).collect())]
}

pub(super) fn mul_backward(g: &Graph, a: Var, b: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (va, vb) = (g.value(a).data(), g.value(b).data());
    vec![(a, grad.iter().zip(vb).map(|(d, y)| d * y).collect()), (b, grad.iter().zip(va).map(|(d, x)| d * x).collect())]
}

pub(super) fn abs_diff_backward(g: &Graph, a: Var, b: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (va, vb) = (g.value(a).data(), g.value(b).data());
    let da: Vec<f64> = grad.iter().zip(va.iter().zip(vb)).map(|(d, (x, y))| d * sign(x - y)).collect();
    let db = da.iter().map(|v| -v).collect();
    vec![(a, da), (b, db)]
}

pub(super) fn shift_abs_diff_backward(g: &Graph, x: Var, axis: Axis, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let v = g.value(x);
    let s = v.shape();
    let d = v.data();
    let mut dx = vec![0.0; s.numel()];
    let step = match axis {
        Axis::Horizontal => 1,
        Axis::Vertical => s.width,
    };
    for plane in 0..s.batch * s.channels {
        let off = plane * s.plane();
        for i in 0..s.height {
            for j in 0..s.width {
                let inside = match axis {
                    Axis::Horizontal => j + 1 < s.width,
                    Axis::Vertical => i + 1 < s.height,
                };
                if !inside {
                    continue;
                }
                let p = off + i * s.width + j;
                let t = grad[p] * sign(d[p + step] - d[p]);
                dx[p + step] += t;
                dx[p] -= t;
            }
        }
    }
    vec![(x, dx)]
}

pub(super) fn gate_mul_backward(g: &Graph, x: Var, gate: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let sx = g.shape(x);
    let (vx, vg) = (g.value(x).data(), g.value(gate).data());
    let plane = sx.plane();
    let mut dx = vec![0.0; sx.numel()];
    let mut dgate = vec![0.0; sx.batch * plane];
    for (i, d) in grad.iter().enumerate() {
        let b = i / sx.item_len();
        let gi = b * plane + i % plane;
        dx[i] = d * vg[gi];
        dgate[gi] += d * vx[i];
    }
    vec![(x, dx), (gate, dgate)]
}

pub(super) fn scale_by_backward(g: &Graph, x: Var, scale: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let s = g.value(scale).data()[0];
    let vx = g.value(x).data();
    let ds: f64 = grad.iter().zip(vx).map(|(d, v)| d * v).sum();
    vec![(x, grad.iter().map(|d| d * s).collect()), (scale, vec![ds])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_definitions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        let s = g.sigmoid(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(g.value(s).data()[1], 0.5);
    }

    #[test]
    fn shift_diff_ramp() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(Shape::new(1, 1, 3, 4), |i| (i % 4) as f64 * 0.25));
        let gx = g.shift_abs_diff(x, Axis::Horizontal);
        let gy = g.shift_abs_diff(x, Axis::Vertical);
        for i in 0..3 {
            for j in 0..4 {
                let want = if j < 3 { 0.25 } else { 0.0 };
                assert_eq!(g.value(gx).at(0, 0, i, j), want);
            }
        }
        assert!(g.value(gy).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_eval_is_identity_and_rate_validated() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
        let y = g.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_train_preserves_expectation() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 1, 100_000), 1.5));
        let y = g.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
        let v = g.value(y);
        let mean = v.sum() / v.len() as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
        let keep = 1.5 / 0.7;
        assert!(v.data().iter().all(|&e| e == 0.0 || (e - keep).abs() < 1e-12));
    }

    #[test]
    fn gate_must_be_single_channel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        let gate = g.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        assert!(g.gate_mul(x, gate).is_err());
    }
}
