//! Dataset manifests, frame I/O and the synthetic dataset generator.

pub mod image_io;
pub mod manifest;
pub mod synth;

pub use image_io::{
    hist_equalize, list_frames, load_clip, load_frames, load_image, resize_bilinear, resize_u8, save_png,
};
pub use manifest::{DatasetManifest, ManifestRow};
pub use synth::{generate_synthetic, SynthSpec};
