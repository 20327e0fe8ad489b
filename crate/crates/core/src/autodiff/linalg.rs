use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatLayout, Shape, Tensor};

/// `(rows, cols)` of the matrix each batch item of a `(B, 1, rows, cols)` tensor holds.
fn matrix_dims(s: Shape, what: &str) -> Result<(usize, usize)> {
    if s.channels != 1 {
        return Err(Error::shape(format!("{what} must be a batch of matrices (B, 1, rows, cols), got {s:?}")));
    }
    Ok((s.height, s.width))
}

impl Graph {
    /// Dense layer on flattened batch items: `x (B, F, ..) -> (B, 1, 1, K)`
    /// with `weight (K, F, 1, 1)` and `bias` of `K` values.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (k, f) = (ws.batch, ws.item_len());
        if xs.item_len() != f {
            return Err(Error::shape(format!(
                "linear input has {} features per item, weight {ws:?} expects {f}",
                xs.item_len()
            )));
        }
        if self.value(bias).len() != k {
            return Err(Error::shape(format!("linear bias must hold {k} values")));
        }
        let mut out = vec![0.0; xs.batch * k];
        for row in out.chunks_mut(k) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(
            xs.batch,
            f,
            k,
            self.value(x).data(),
            MatLayout::row_major(f, false),
            self.value(weight).data(),
            MatLayout::row_major(f, true),
            1.0,
            &mut out,
        );
        let t = Tensor::from_vec(Shape::new(xs.batch, 1, 1, k), out)?;
        Ok(self.push_op(t, Op::Linear { input: x, weight, bias }, &[x, weight, bias]))
    }

    /// Batched matrix product `op(lhs) * op(rhs)` where `op` optionally
    /// transposes. Operands are `(B, 1, rows, cols)`.
    pub fn bmm(&mut self, lhs: Var, rhs: Var, trans_lhs: bool, trans_rhs: bool) -> Result<Var> {
        let (sl, sr) = (self.shape(lhs), self.shape(rhs));
        let (rl, cl) = matrix_dims(sl, "bmm lhs")?;
        let (rr, cr) = matrix_dims(sr, "bmm rhs")?;
        if sl.batch != sr.batch {
            return Err(Error::shape(format!("bmm batch mismatch: {sl:?} vs {sr:?}")));
        }
        let (m, k) = if trans_lhs { (cl, rl) } else { (rl, cl) };
        let (k2, n) = if trans_rhs { (cr, rr) } else { (rr, cr) };
        if k != k2 {
            return Err(Error::shape(format!(
                "bmm inner dimensions differ: {sl:?}{} x {sr:?}{}",
                if trans_lhs { "^T" } else { "" },
                if trans_rhs { "^T" } else { "" }
            )));
        }
        let out_shape = Shape::new(sl.batch, 1, m, n);
        let mut out = vec![0.0; out_shape.numel()];
        let (lv, rv) = (self.value(lhs).data(), self.value(rhs).data());
        for b in 0..sl.batch {
            gemm(
                m,
                k,
                n,
                &lv[b * rl * cl..(b + 1) * rl * cl],
                MatLayout::row_major(cl, trans_lhs),
                &rv[b * rr * cr..(b + 1) * rr * cr],
                MatLayout::row_major(cr, trans_rhs),
                0.0,
                &mut out[b * m * n..(b + 1) * m * n],
            );
        }
        Ok(self.push_op(
            Tensor::from_vec(out_shape, out)?,
            Op::BatchMatMul { lhs, rhs, trans_lhs, trans_rhs },
            &[lhs, rhs],
        ))
    }

    /// Softmax over the last axis; every `width`-long run is one row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(s.width) {
            softmax_in_place(row);
        }
        let t = Tensor::from_vec(s, out).expect("shape preserved");
        self.push_op(t, Op::SoftmaxRows(x), &[x])
    }
}

impl Graph {
    /// Spatial self-attention `o[c, i] = sum_j v[c, j] * e[i, j]` with
    /// `e[i, :] = softmax_j(sum_r q[r, i] * k[r, j])` over the `H * W`
    /// positions of each batch item. `q` and `k` are `(B, D, H, W)`, `v` is
    /// `(B, C, H, W)` and the output has the shape of `v`.
    pub fn spatial_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq != sk || (sv.batch, sv.height, sv.width) != (sq.batch, sq.height, sq.width) {
            return Err(Error::shape(format!("spatial_attention: query {sq:?}, key {sk:?} and value {sv:?} disagree")));
        }
        let (d, c, n) = (sq.channels, sv.channels, sq.plane());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut weights = vec![0.0; sq.batch * n * n];
        let mut out = vec![0.0; sv.numel()];
        for b in 0..sq.batch {
            let e = &mut weights[b * n * n..(b + 1) * n * n];
            let (qb, kb) = (&qv[b * d * n..(b + 1) * d * n], &kv[b * d * n..(b + 1) * d * n]);
            gemm(n, d, n, qb, MatLayout::row_major(n, true), kb, MatLayout::row_major(n, false), 0.0, e);
            e.chunks_mut(n).for_each(softmax_in_place);
            gemm(
                c,
                n,
                n,
                &vv[b * c * n..(b + 1) * c * n],
                MatLayout::row_major(n, false),
                e,
                MatLayout::row_major(n, true),
                0.0,
                &mut out[b * c * n..(b + 1) * c * n],
            );
        }
        Ok(self.push_op(Tensor::from_vec(sv, out)?, Op::SpatialAttention { q, k, v, weights }, &[q, k, v]))
    }
}

pub(super) fn spatial_attention_backward(
    g: &Graph,
    q: Var,
    k: Var,
    v: Var,
    weights: &[f64],
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (sq, sv) = (g.shape(q), g.shape(v));
    let (d, c, n) = (sq.channels, sv.channels, sq.plane());
    let (qv, kv, vv) = (g.value(q).data(), g.value(k).data(), g.value(v).data());
    let (mut dq, mut dk, mut dv) = (vec![0.0; qv.len()], vec![0.0; kv.len()], vec![0.0; vv.len()]);
    let mut ds = vec![0.0; n * n];
    for b in 0..sq.batch {
        let e = &weights[b * n * n..(b + 1) * n * n];
        let go = &grad[b * c * n..(b + 1) * c * n];
        let vb = &vv[b * c * n..(b + 1) * c * n];
        gemm(
            c,
            n,
            n,
            go,
            MatLayout::row_major(n, false),
            e,
            MatLayout::row_major(n, false),
            0.0,
            &mut dv[b * c * n..(b + 1) * c * n],
        );
        // d(e) = grad^T v, then the softmax Jacobian row by row
        gemm(n, c, n, go, MatLayout::row_major(n, true), vb, MatLayout::row_major(n, false), 0.0, &mut ds);
        for (dr, er) in ds.chunks_mut(n).zip(e.chunks(n)) {
            let dot: f64 = dr.iter().zip(er).map(|(a, b)| a * b).sum();
            dr.iter_mut().zip(er).for_each(|(a, &p)| *a = p * (*a - dot));
        }
        let (qb, kb) = (&qv[b * d * n..(b + 1) * d * n], &kv[b * d * n..(b + 1) * d * n]);
        gemm(
            d,
            n,
            n,
            kb,
            MatLayout::row_major(n, false),
            &ds,
            MatLayout::row_major(n, true),
            0.0,
            &mut dq[b * d * n..(b + 1) * d * n],
        );
        gemm(
            d,
            n,
            n,
            qb,
            MatLayout::row_major(n, false),
            &ds,
            MatLayout::row_major(n, false),
            0.0,
            &mut dk[b * d * n..(b + 1) * d * n],
        );
    }
    vec![(q, dq), (k, dk), (v, dv)]
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v = exp_nonpositive(*v - max);
    }
    let total: f64 = row.iter().sum();
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// `e^x` for `x <= 0` in straight-line arithmetic the compiler can
/// vectorize. Arguments below `-700` are clamped; the relative error
/// elsewhere stays within a few units in the last place.
#[inline]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2_E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-700.0);
    let shifted = x * LOG2_E + ROUND;
    let k = shifted - ROUND;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((shifted.to_bits() as i64 + 1023) << 52) as u64);
    p * scale
}

pub(super) fn linear_backward(g: &Graph, x: Var, weight: Var, bias: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let xs = g.shape(x);
    let ws = g.shape(weight);
    let (k, f, batch) = (ws.batch, ws.item_len(), xs.batch);
    let mut result = Vec::with_capacity(3);
    if g.needs(x) {
        let mut dx = vec![0.0; xs.numel()];
        gemm(
            batch,
            k,
            f,
            grad,
            MatLayout::row_major(k, false),
            g.value(weight).data(),
            MatLayout::row_major(f, false),
            0.0,
            &mut dx,
        );
        result.push((x, dx));
    }
    if g.needs(weight) {
        let mut dw = vec![0.0; ws.numel()];
        gemm(
            k,
            batch,
            f,
            grad,
            MatLayout::row_major(k, true),
            g.value(x).data(),
            MatLayout::row_major(f, false),
            0.0,
            &mut dw,
        );
        result.push((weight, dw));
    }
    let mut db = vec![0.0; k];
    for row in grad.chunks(k) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    result.push((bias, db));
    result
}

pub(super) fn bmm_backward(
    g: &Graph,
    lhs: Var,
    rhs: Var,
    trans_lhs: bool,
    trans_rhs: bool,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (sl, sr) = (g.shape(lhs), g.shape(rhs));
    let (rl, cl) = (sl.height, sl.width);
    let (rr, cr) = (sr.height, sr.width);
    let (m, k) = if trans_lhs { (cl, rl) } else { (rl, cl) };
    let n = if trans_rhs { rr } else { cr };
    let (lv, rv) = (g.value(lhs).data(), g.value(rhs).data());
    let mut result = Vec::with_capacity(2);

    if g.needs(lhs) {
        let mut dl = vec![0.0; sl.numel()];
        for b in 0..sl.batch {
            let gc = &grad[b * m * n..(b + 1) * m * n];
            let r = &rv[b * rr * cr..(b + 1) * rr * cr];
            let dst = &mut dl[b * rl * cl..(b + 1) * rl * cl];
            if trans_lhs {
                // d(lhs) (k x m) = op(rhs) (k x n) * dC^T (n x m)
                gemm(k, n, m, r, MatLayout::row_major(cr, trans_rhs), gc, MatLayout::row_major(n, true), 0.0, dst);
            } else {
                // d(lhs) (m x k) = dC (m x n) * op(rhs)^T (n x k)
                gemm(m, n, k, gc, MatLayout::row_major(n, false), r, MatLayout::row_major(cr, !trans_rhs), 0.0, dst);
            }
        }
        result.push((lhs, dl));
    }
    if g.needs(rhs) {
        let mut dr = vec![0.0; sr.numel()];
        for b in 0..sr.batch {
            let gc = &grad[b * m * n..(b + 1) * m * n];
            let l = &lv[b * rl * cl..(b + 1) * rl * cl];
            let dst = &mut dr[b * rr * cr..(b + 1) * rr * cr];
            if trans_rhs {
                // d(rhs) (n x k) = dC^T (n x m) * op(lhs) (m x k)
                gemm(n, m, k, gc, MatLayout::row_major(n, true), l, MatLayout::row_major(cl, trans_lhs), 0.0, dst);
            } else {
                // d(rhs) (k x n) = op(lhs)^T (k x m) * dC (m x n)
                gemm(k, m, n, l, MatLayout::row_major(cl, !trans_lhs), gc, MatLayout::row_major(n, false), 0.0, dst);
            }
        }
        result.push((rhs, dr));
    }
    result
}

pub(super) fn softmax_rows_backward(x: Var, out: &Tensor, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let w = out.shape().width;
    let mut dx = vec![0.0; grad.len()];
    for ((d, y), gr) in dx.chunks_mut(w).zip(out.data().chunks(w)).zip(grad.chunks(w)) {
        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((di, yi), gi) in d.iter_mut().zip(y).zip(gr) {
            *di = yi * (gi - dot);
        }
    }
    vec![(x, dx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..=200_000 {
            let x = -700.0 * i as f64 / 200_000.0;
            let (a, e) = (exp_nonpositive(x), x.exp());
            worst = worst.max(((a - e) / e).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "worst relative error {worst:e}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(exp_nonpositive(f64::NEG_INFINITY) >= 0.0);
    }

    #[test]
    fn spatial_attention_with_one_position_copies_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::full(Shape::new(2, 1, 1, 1), 3.0));
        let k = g.constant(Tensor::full(Shape::new(2, 1, 1, 1), -1.0));
        let v = g.constant(Tensor::from_fn(Shape::new(2, 3, 1, 1), |i| i as f64));
        let o = g.spatial_attention(q, k, v).unwrap();
        assert_eq!(g.value(o).data(), g.value(v).data());
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 3)));
        let y = g.softmax_rows(x);
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_for_large_inputs() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(Shape::new(2, 1, 3, 5), |i| (i as f64 * 97.0) % 800.0 - 400.0));
        let y = g.softmax_rows(x);
        for row in g.value(y).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bmm_transposed_operands() {
        let mut g = Graph::new();
        // a: 2x3 stored, b: 2x4 stored; a^T b is 3x4
        let a = g.constant(Tensor::from_fn(Shape::new(1, 1, 2, 3), |i| i as f64));
        let b = g.constant(Tensor::from_fn(Shape::new(1, 1, 2, 4), |i| 1.0 + i as f64));
        let c = g.bmm(a, b, true, false).unwrap();
        assert_eq!(g.shape(c), Shape::new(1, 1, 3, 4));
        let av = g.value(a).clone();
        let bv = g.value(b).clone();
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|p| av.at(0, 0, p, i) * bv.at(0, 0, p, j)).sum();
                assert_eq!(g.value(c).at(0, 0, i, j), want);
            }
        }
        assert!(g.bmm(a, b, false, false).is_err());
    }

    #[test]
    fn linear_matches_hand_product() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::from_vec(Shape::new(3, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, 0.0, -1.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 2.0, 2.0, 3.5, 4.0, 6.0]);
    }
}
