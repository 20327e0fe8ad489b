//! Loss, optimizer, augmentation, metrics and the evaluation protocol.

pub mod augment;
pub mod loso;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use loso::{loso_folds, Fold};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
pub use optim::{Adam, AdamConfig};
pub use trainer::{
    predict_images, train_loso, train_model, EvalReport, FoldReport, LosoOptions, Prediction, TrainConfig,
};
