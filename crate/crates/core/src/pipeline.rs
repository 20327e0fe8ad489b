//! From a manifest row to a network-ready 8-bit image.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{hist_equalize, load_frames, resize_u8, DatasetManifest, ManifestRow};
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::mesti::{encode, EncoderKind, FrameSequence, MestiImage};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizeOrder {
    EqualizeThenResize,
    ResizeThenEqualize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub encoder: EncoderKind,
    /// Equalize every frame's histogram before pooling.
    pub hist_equalize: bool,
    pub equalize_order: EqualizeOrder,
    /// Replace annotated apexes with the middle frame.
    pub ignore_apex: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderKind::Mesti,
            hist_equalize: false,
            equalize_order: EqualizeOrder::EqualizeThenResize,
            ignore_apex: false,
        }
    }
}

/// An encoded clip resized to the network input.
#[derive(Clone, Debug)]
pub struct EncodedClip {
    pub subject: String,
    pub clip: String,
    pub label: usize,
    pub image: ImageU8,
    pub mesti: MestiImage,
}

impl PipelineConfig {
    /// Load, optionally equalize, pool and resize one manifest row to
    /// `height x width`.
    pub fn encode_row(
        &self,
        manifest: &DatasetManifest,
        row: &ManifestRow,
        size: (usize, usize),
    ) -> Result<EncodedClip> {
        let (mesti, image) = self.encode_clip(&manifest.clip_path(row), row.onset, row.offset, row.apex, Some(size))?;
        Ok(EncodedClip { subject: row.subject.clone(), clip: row.clip_dir.clone(), label: row.label, image, mesti })
    }

    /// Encode frames `onset..=offset` of `dir`. `apex` is numbered like
    /// `onset`. Returns the pooled clip and its view resized to `size`, or
    /// at native resolution when `size` is `None`.
    pub fn encode_clip(
        &self,
        dir: &Path,
        onset: usize,
        offset: usize,
        apex: Option<usize>,
        size: Option<(usize, usize)>,
    ) -> Result<(MestiImage, ImageU8)> {
        if let Some(a) = apex {
            if a < onset || a > offset {
                return Err(Error::InvalidApex { apex: a, len: offset.saturating_sub(onset) + 1 });
            }
        }
        let mut frames = load_frames(dir, onset, offset)?;
        if self.hist_equalize {
            frames = frames
                .iter()
                .map(|f| match (self.equalize_order, size) {
                    (EqualizeOrder::ResizeThenEqualize, Some((h, w))) => Ok(hist_equalize(&resize_u8(f, h, w)?)),
                    _ => Ok(hist_equalize(f)),
                })
                .collect::<Result<_>>()?;
        }
        let apex = if self.ignore_apex { None } else { apex.map(|a| a - onset + 1) };
        let mut seq = FrameSequence::new(frames.iter().map(ImageU8::to_unit).collect(), apex);
        seq.clip_id = dir.to_string_lossy().into_owned();
        let mesti = encode(&seq, self.encoder)?;
        let image = match size {
            Some((h, w)) if (mesti.view.height(), mesti.view.width()) != (h, w) => resize_u8(&mesti.view, h, w)?,
            _ => mesti.view.clone(),
        };
        Ok((mesti, image))
    }
}

/// Stack 8-bit `H x W x C` images into a `(B, C, H, W)` tensor scaled to `[0, 1]`.
pub fn images_to_tensor(images: &[&ImageU8]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::InvalidInput("no images to batch".into()))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(Error::shape(format!("cannot batch {:?} with {:?}", img.dims(), (h, w, c))));
        }
        let px = img.data();
        for ch in 0..c {
            data.extend((0..h * w).map(|i| px[i * c + ch] as f64 / 255.0));
        }
    }
    Tensor::from_vec(Shape::new(images.len(), c, h, w), data)
}
