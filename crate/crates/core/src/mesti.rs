//! Apex-centred approximate rank pooling of a frame sequence into one image.
//!
//! Each frame `t` (1-based) of a clip with `T` frames and apex `a` is weighted
//! by an integer coefficient
//!
//! ```text
//! alpha_t = 2t - a - 1        for 1 <= t <= a
//! alpha_t = T - 2t + a + 1    for a < t <= T
//! ```
//!
//! and the weighted frames are summed. The coefficients of each side of the
//! apex sum to zero. With `a = T` they equal the dynamic-image weights
//! `2t - T - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_u8, Image, ImageU8};

/// Ordered frames of one clip with intensities in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    pub frames: Vec<Image<f32>>,
    /// 1-based apex position within `frames`.
    pub apex: Option<usize>,
    pub subject_id: String,
    pub clip_id: String,
    pub label: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image<f32>>, apex: Option<usize>) -> Self {
        FrameSequence { frames, apex, subject_id: String::new(), clip_id: String::new(), label: 0 }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the sequence invariants and returns the common frame extent.
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let first = self.frames.first().ok_or_else(|| Error::InvalidInput("empty frame sequence".into()))?;
        let dims = first.dims();
        if let Some((i, f)) = self.frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::InvalidInput(format!(
                "frame {} has extent {:?}, frame 1 has {dims:?}",
                i + 1,
                f.dims()
            )));
        }
        if let Some(a) = self.apex {
            if a == 0 || a > self.len() {
                return Err(Error::InvalidApex { apex: a, len: self.len() });
            }
        }
        Ok(dims)
    }
}

/// Which pooling coefficients to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Apex-centred piecewise coefficients.
    Mesti,
    /// Classic dynamic image, `2t - T - 1`.
    Dynamic,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Mesti => "mesti",
            EncoderKind::Dynamic => "dynamic",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mesti" => Ok(EncoderKind::Mesti),
            "dynamic" => Ok(EncoderKind::Dynamic),
            other => Err(Error::InvalidArgument(format!("unknown encoder '{other}'"))),
        }
    }
}

/// Pooling weights for every frame of a clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoefficientVector {
    pub alphas: Vec<i64>,
    pub apex: usize,
    pub len: usize,
}

impl CoefficientVector {
    /// The rising segment `alpha_1..=alpha_a`.
    pub fn rising(&self) -> &[i64] {
        &self.alphas[..self.apex]
    }

    /// The falling segment `alpha_{a+1}..=alpha_T`.
    pub fn falling(&self) -> &[i64] {
        &self.alphas[self.apex..]
    }
}

fn check_apex(len: usize, apex: usize) -> Result<()> {
    if len == 0 || apex == 0 || apex > len {
        return Err(Error::InvalidApex { apex, len });
    }
    Ok(())
}

/// Coefficient of 1-based frame `t` for a clip of `len` frames with apex `apex`.
#[inline]
pub fn alpha(t: usize, apex: usize, len: usize) -> i64 {
    let (t, a, n) = (t as i64, apex as i64, len as i64);
    if t <= a {
        2 * t - a - 1
    } else {
        n - 2 * t + a + 1
    }
}

pub fn compute_alpha(len: usize, apex: usize) -> Result<CoefficientVector> {
    check_apex(len, apex)?;
    Ok(CoefficientVector { alphas: (1..=len).map(|t| alpha(t, apex, len)).collect(), apex, len })
}

/// Dynamic-image coefficients `2t - T - 1`.
pub fn dynamic_alpha(len: usize) -> Result<CoefficientVector> {
    compute_alpha(len, len)
}

/// Brute-force coefficients from the ranking objective.
///
/// Coefficients recomputed as the negated gradient at `d = 0` of the pairwise
/// hinge ranking objective with one-hot frame features. Frames on the same
/// side of the apex form ranked pairs in which the frame nearer the apex
/// ranks higher. At `d = 0` the regulariser's gradient vanishes.
pub fn alpha_oracle(len: usize, apex: usize) -> Result<Vec<i64>> {
    check_apex(len, apex)?;
    let scores = vec![0i64; len];
    let mut gradient = vec![0i64; len];
    for (lo, hi) in [(1, apex), (apex + 1, len)] {
        for q in lo..=hi {
            for t in lo..=hi {
                // q ranks above t when strictly nearer the apex.
                if apex.abs_diff(q) < apex.abs_diff(t) && 1 - scores[q - 1] + scores[t - 1] > 0 {
                    gradient[t - 1] += 1;
                    gradient[q - 1] -= 1;
                }
            }
        }
    }
    Ok(gradient.into_iter().map(|g| -g).collect())
}

/// Annotated apex, or the middle frame `ceil(T / 2)` when absent.
pub fn resolve_apex(seq: &FrameSequence) -> usize {
    seq.apex.unwrap_or(seq.len().div_ceil(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MestiMeta {
    pub frames: usize,
    pub apex: usize,
    pub clip: String,
    pub encoder: EncoderKind,
}

/// A pooled clip: the real-valued map and its 8-bit view.
#[derive(Clone, Debug)]
pub struct MestiImage {
    pub raw: Image<f64>,
    pub view: ImageU8,
    pub meta: MestiMeta,
}

/// Single-pass pooling with one `H x W x C` accumulator.
pub struct PoolingAccumulator {
    acc: Vec<f64>,
    dims: Option<(usize, usize, usize)>,
    apex: usize,
    len: usize,
    next: usize,
}

impl PoolingAccumulator {
    pub fn new(len: usize, apex: usize) -> Result<Self> {
        check_apex(len, apex)?;
        Ok(PoolingAccumulator { acc: Vec::new(), dims: None, apex, len, next: 1 })
    }

    pub fn push(&mut self, frame: &Image<f32>) -> Result<()> {
        if self.next > self.len {
            return Err(Error::InvalidInput(format!("more than {} frames pushed", self.len)));
        }
        match self.dims {
            None => {
                self.dims = Some(frame.dims());
                self.acc = vec![0.0; frame.data().len()];
            }
            Some(d) if d != frame.dims() => {
                return Err(Error::InvalidInput(format!(
                    "frame {} has extent {:?}, expected {d:?}",
                    self.next,
                    frame.dims()
                )));
            }
            Some(_) => {}
        }
        let w = alpha(self.next, self.apex, self.len) as f64;
        if w != 0.0 {
            for (a, &v) in self.acc.iter_mut().zip(frame.data()) {
                *a += w * v as f64;
            }
        }
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<Image<f64>> {
        if self.next != self.len + 1 {
            return Err(Error::InvalidInput(format!("{} of {} frames pushed", self.next - 1, self.len)));
        }
        let (h, w, c) = self.dims.expect("len >= 1 implies a frame was pushed");
        Image::from_vec(h, w, c, self.acc)
    }
}

fn pool(seq: &FrameSequence, apex: usize, encoder: EncoderKind) -> Result<MestiImage> {
    seq.validate()?;
    let mut acc = PoolingAccumulator::new(seq.len(), apex)?;
    for f in &seq.frames {
        acc.push(f)?;
    }
    let raw = acc.finish()?;
    let view = normalize_view(&raw);
    Ok(MestiImage { raw, view, meta: MestiMeta { frames: seq.len(), apex, clip: seq.clip_id.clone(), encoder } })
}

/// Pool with apex-centred coefficients; the apex falls back to the middle frame.
pub fn encode_mesti(seq: &FrameSequence) -> Result<MestiImage> {
    if seq.is_empty() {
        return Err(Error::InvalidInput("empty frame sequence".into()));
    }
    pool(seq, resolve_apex(seq), EncoderKind::Mesti)
}

/// Classic dynamic image, ignoring any apex annotation.
pub fn encode_dynamic_image(seq: &FrameSequence) -> Result<MestiImage> {
    if seq.is_empty() {
        return Err(Error::InvalidInput("empty frame sequence".into()));
    }
    pool(seq, seq.len(), EncoderKind::Dynamic)
}

pub fn encode(seq: &FrameSequence, encoder: EncoderKind) -> Result<MestiImage> {
    match encoder {
        EncoderKind::Mesti => encode_mesti(seq),
        EncoderKind::Dynamic => encode_dynamic_image(seq),
    }
}

/// Global min-max stretch to `0..=255` over all channels jointly. A constant
/// map becomes uniform 128.
pub fn normalize_view(raw: &Image<f64>) -> ImageU8 {
    let (min, max) = raw.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) || !range.is_finite() {
        return raw.map(|_| 128u8);
    }
    let scale = 255.0 / range;
    raw.map(|v| to_u8((v - min) * scale))
}
