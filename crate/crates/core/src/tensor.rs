//! Dense `(batch, channel, height, width)` tensors.
//!
//! Values are stored as `f64` and every kernel accumulates in double
//! precision. Learnable parameters stay representable in `f32` (see
//! [`crate::params`]).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 4-D extent. Matrices use `(batch, 1, rows, cols)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape { batch, channels, height, width }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn from_dims(dims: [usize; 4]) -> Self {
        Shape::new(dims[0], dims[1], dims[2], dims[3])
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    pub(crate) fn ensure_positive(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::shape(format!("{self:?} has a zero dimension")));
        }
        Ok(())
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.batch, self.channels, self.height, self.width)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("len", &self.data.len()).finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.ensure_positive()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values supplied for shape {shape:?} ({} expected)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        Tensor { shape, data: (0..shape.numel()).map(&mut f).collect() }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(b, c, h, w)]
    }

    /// Values of batch item `b`.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Same values under a new shape with the same element count.
    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut batch = 0;
        for t in items {
            let ts = t.shape;
            if (ts.channels, ts.height, ts.width) != (s.channels, s.height, s.width) {
                return Err(Error::shape(format!("cannot stack {ts:?} with {s:?}")));
            }
            batch += ts.batch;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(batch, s.channels, s.height, s.width), data)
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatLayout {
    pub row_stride: isize,
    pub col_stride: isize,
}

impl MatLayout {
    /// Row-major `rows x cols` storage, optionally read transposed.
    pub fn row_major(cols: usize, transposed: bool) -> Self {
        if transposed {
            MatLayout { row_stride: 1, col_stride: cols as isize }
        } else {
            MatLayout { row_stride: cols as isize, col_stride: 1 }
        }
    }
}

/// `c = beta * c + a (m x k) * b (k x n)`; `c` is row-major `m x n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: MatLayout,
    b: &[f64],
    lb: MatLayout,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, l: MatLayout| {
        (rows - 1) * l.row_stride as usize + (cols - 1) * l.col_stride as usize + 1
    };
    assert!(k == 0 || a.len() >= span(m, k, la), "gemm: lhs too short");
    assert!(k == 0 || b.len() >= span(k, n, lb), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above bound every index dgemm touches given the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
