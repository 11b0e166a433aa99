//! Desk-scale two-logit classifiers trained with cross-entropy plus an
//! optional spectral decoupling penalty on the logits.

pub mod checkpoint;
mod config;
mod dataset;
mod loss;
mod model;
mod train;

pub use config::{LrSchedule, SdConfig, TrainConfig};
pub use dataset::{ImageShape, LabeledDataset, Split, PIXEL_CENTER};
pub use loss::{
    cross_entropy, loss_and_grad, positive_probability, predict_proba, sd_penalty, sd_penalty_eq1,
    sd_penalty_eq2, softmax,
};
pub use model::{Dense, Model, ModelKind, OUTPUT_DIM};
pub use train::{
    evaluate_accuracy, evaluate_balanced_accuracy, train, train_with_validation, EpochRecord,
    TrainTrace, AUGMENT_PAD,
};
