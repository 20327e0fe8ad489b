//! Geometric training-set expansion of encoded images.

use crate::image::{to_u8, ImageU8};

/// Rotation angles in degrees, counterclockwise as displayed, applied after
/// the original and its mirror image.
pub const ROTATIONS: [f64; 4] = [5.0, -5.0, 10.0, -10.0];

/// Number of images [`augment`] produces per input.
pub const VARIANTS: usize = 2 + ROTATIONS.len();

/// Rotate about the image centre with bilinear sampling; samples falling
/// outside the frame repeat the nearest edge pixel. Size is preserved.
pub fn rotate(image: &ImageU8, degrees: f64) -> ImageU8 {
    let (h, w, c) = image.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    ImageU8::from_fn(h, w, c, |y, x, ch| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let sx = cx + cos * dx - sin * dy;
        let sy = cy + sin * dx + cos * dy;
        to_u8(image.sample_bilinear(sy, sx, ch))
    })
}

/// `[original, horizontal flip, +5°, -5°, +10°, -10°]`.
pub fn augment(image: &ImageU8) -> Vec<ImageU8> {
    let mut out = Vec::with_capacity(VARIANTS);
    out.push(image.clone());
    out.push(image.flip_horizontal());
    out.extend(ROTATIONS.iter().map(|&a| rotate(image, a)));
    out
}
