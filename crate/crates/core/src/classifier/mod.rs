//! Frame classifiers, their adaptation to a new signer and tandem observations.

mod adapt;
mod mlp;
mod tandem;

pub use adapt::{adapt, with_adapters, AdaptMode};
pub use mlp::{
    evaluate, fill_window, frame_error_rate, holdout_split, sgd, train_mlp, Dense, EpochRecord,
    Examples, FrameDataset, LearningCurve, Mlp, Selection, TrainConfig, Trainable, VectorDataset,
};
pub use tandem::{classifier_block, TandemBuilder, TandemMode, Transform, LOG_FLOOR};
