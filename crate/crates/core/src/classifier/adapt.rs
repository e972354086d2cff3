use serde::{Deserialize, Serialize};

use super::mlp::{sgd, Dense, Examples, LearningCurve, Mlp, Selection, TrainConfig, Trainable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    /// Input transform plus the existing output layer.
    #[serde(rename = "lin+up")]
    LinUp,
    /// Input transform plus a new affine layer over the frozen output logits.
    #[serde(rename = "lin+lon")]
    LinLon,
    /// Every original weight, starting from the given network.
    FineTune,
}

impl AdaptMode {
    fn trainable(self) -> Trainable {
        match self {
            AdaptMode::LinUp => Trainable {
                lin: true,
                hidden: false,
                output: true,
                lon: false,
            },
            AdaptMode::LinLon => Trainable {
                lin: true,
                hidden: false,
                output: false,
                lon: true,
            },
            AdaptMode::FineTune => Trainable {
                lin: false,
                hidden: true,
                output: true,
                lon: false,
            },
        }
    }
}

/// The network with the adaptation layers `mode` trains, each initialized to
/// the identity so outputs are unchanged.
pub fn with_adapters(model: &Mlp, mode: AdaptMode) -> Mlp {
    let mut m = model.clone();
    match mode {
        AdaptMode::LinUp => {
            m.lin
                .get_or_insert_with(|| Dense::identity(model.frame_dim));
        }
        AdaptMode::LinLon => {
            m.lin
                .get_or_insert_with(|| Dense::identity(model.frame_dim));
            m.lon
                .get_or_insert_with(|| Dense::identity(model.n_classes()));
        }
        AdaptMode::FineTune => {}
    }
    m
}

/// Adapts a trained network on a new signer's labeled frames. The retained
/// epoch minimizes cross-entropy on the adaptation set itself.
pub fn adapt(
    model: &Mlp,
    data: &dyn Examples,
    mode: AdaptMode,
    cfg: &TrainConfig,
) -> Result<(Mlp, LearningCurve)> {
    if data.is_empty() {
        return Err(Error::empty("adaptation set"));
    }
    let start = with_adapters(model, mode);
    let idx: Vec<usize> = (0..data.len()).collect();
    sgd(
        start,
        data,
        &idx,
        data,
        &idx,
        cfg,
        mode.trainable(),
        Selection::Loss,
    )
}
