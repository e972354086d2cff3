//! Gaussian-mixture HMM recognizer over tandem observations.

mod decode;
mod gmm;
mod model;

pub use decode::{
    forced_align, nbest, span_scores, viterbi_decode, CandidateLattice, DecodeConfig, Hypothesis,
};
pub use gmm::{DiagGmm, GmmStats};
pub use model::{train_em, EmReport, HmmConfig, LabelModel, LetterHmm, TrainingMode};
