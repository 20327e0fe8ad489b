//! PNG frame I/O and the optional preprocessing operations.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{to_u8, Image, ImageU8};
use crate::mesti::FrameSequence;

/// Read an image file as 8-bit gray (`C = 1`) or RGB (`C = 3`). Alpha is
/// dropped and deeper samples are reduced to 8 bits.
pub fn load_image(path: &Path) -> Result<ImageU8> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        ImageU8::from_vec(h, w, 1, img.into_luma8().into_raw())
    } else {
        ImageU8::from_vec(h, w, 3, img.into_rgb8().into_raw())
    }
}

/// Write a 1- or 3-channel image as PNG.
pub fn save_png(path: &Path, image: &ImageU8) -> Result<()> {
    let color = match image.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::InvalidInput(format!("cannot write a {c}-channel image as PNG"))),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(
        path,
        image.data(),
        image.width() as u32,
        image.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Image files in `dir` whose stem is a number, sorted by that number.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"));
        let index = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok());
        if let (true, Some(i)) = (is_image, index) {
            frames.push((i, path));
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// 8-bit frames `onset..=offset` (1-based positions in the numerically
/// sorted listing of `dir`), all of one extent.
pub fn load_frames(dir: &Path, onset: usize, offset: usize) -> Result<Vec<ImageU8>> {
    if onset == 0 || offset < onset {
        return Err(Error::InvalidInput(format!("frame range {onset}..={offset} is empty or not 1-based")));
    }
    let files = list_frames(dir)?;
    if files.len() < offset {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("clip has {} frames, offset is {offset}", files.len()),
            ),
        ));
    }
    let mut frames: Vec<ImageU8> = Vec::with_capacity(offset - onset + 1);
    for path in &files[onset - 1..offset] {
        let img = load_image(path)?;
        if let Some(first) = frames.first() {
            if first.dims() != img.dims() {
                return Err(Error::InvalidInput(format!(
                    "{}: extent {:?} differs from the clip's first frame {:?}",
                    path.display(),
                    img.dims(),
                    first.dims()
                )));
            }
        }
        frames.push(img);
    }
    Ok(frames)
}

/// [`load_frames`] scaled to `[0, 1]`. `apex` uses the same numbering as
/// `onset` and `offset` and is re-indexed relative to `onset`.
pub fn load_clip(dir: &Path, onset: usize, offset: usize, apex: Option<usize>) -> Result<FrameSequence> {
    if let Some(a) = apex {
        if a < onset || a > offset {
            return Err(Error::InvalidApex { apex: a, len: offset.saturating_sub(onset) + 1 });
        }
    }
    let frames = load_frames(dir, onset, offset)?;
    Ok(FrameSequence::new(frames.iter().map(ImageU8::to_unit).collect(), apex.map(|a| a - onset + 1)))
}

/// Per-channel histogram equalization, `round((cdf(v) - cdf_min) / (N - cdf_min) * 255)`.
/// Channels holding a single level are left unchanged.
pub fn hist_equalize(image: &ImageU8) -> ImageU8 {
    let (h, w, c) = image.dims();
    let n = (h * w) as u64;
    let mut out = image.clone();
    for ch in 0..c {
        let mut hist = [0u64; 256];
        for px in image.data().chunks(c) {
            hist[px[ch] as usize] += 1;
        }
        let mut cdf = [0u64; 256];
        let mut running = 0;
        for (v, count) in hist.iter().enumerate() {
            running += count;
            cdf[v] = running;
        }
        let cdf_min = hist.iter().zip(&cdf).find(|(&h, _)| h > 0).map_or(0, |(_, &c)| c);
        if cdf_min == n {
            continue;
        }
        let denom = (n - cdf_min) as f64;
        let lut: Vec<u8> = cdf.iter().map(|&cv| to_u8(cv.saturating_sub(cdf_min) as f64 / denom * 255.0)).collect();
        for px in out.data_mut().chunks_mut(c) {
            px[ch] = lut[px[ch] as usize];
        }
    }
    out
}

/// Bilinear resize with half-pixel centres (corners not aligned), edges clamped.
pub fn resize_bilinear<T: Copy + Into<f64>>(image: &Image<T>, height: usize, width: usize) -> Result<Image<f64>> {
    let (h, w, c) = image.dims();
    if h < 2 || w < 2 {
        return Err(Error::InvalidInput(format!("cannot resize a {h}x{w} image")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput(format!("target size {height}x{width} has a zero dimension")));
    }
    let (sy, sx) = (h as f64 / height as f64, w as f64 / width as f64);
    Ok(Image::from_fn(height, width, c, |y, x, ch| {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        image.sample_bilinear(src_y, src_x, ch)
    }))
}

/// [`resize_bilinear`] rounded back to 8 bits.
pub fn resize_u8(image: &ImageU8, height: usize, width: usize) -> Result<ImageU8> {
    Ok(resize_bilinear(image, height, width)?.map(to_u8))
}
