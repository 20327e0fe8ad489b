//! Apex-centred rank pooling of micro-expression clips and a gradient- and
//! self-attention CNN trained on the pooled images, built on a small
//! reverse-mode differentiation engine.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod image;
pub mod layers;
pub mod mesti;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mesti::{encode, encode_dynamic_image, encode_mesti, EncoderKind, FrameSequence, MestiImage};
pub use model::{MegaNet, MegaNetConfig};
pub use pipeline::PipelineConfig;
pub use tensor::{Shape, Tensor};
pub use train::{EvalReport, TrainConfig};
