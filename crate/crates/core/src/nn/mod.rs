//! Compact convolutional classifier trained from scratch.
//!
//! Computation is generic over [`Real`] so the same code trains in `f32`
//! and can be checked against finite differences in `f64`.

pub mod arch;
pub mod layers;
pub mod model;
pub mod train;

pub use arch::{Architecture, LayerSpec};
pub use layers::{Real, Tensor};
pub use model::{init_model, load_model, save_model, LayerParams, ModelParams, Params};
pub use train::{
    classify, decide, forward, forward_tensor, loss_and_gradients, loss_and_gradients_images, train, train_runs,
    Classifier, EpochRecord, ImageStore, TrainConfig, TrainOutcome, TrainTrace, DEFAULT_THRESHOLD,
    DESK_LEARNING_RATE, PAPER_LEARNING_RATE,
};
