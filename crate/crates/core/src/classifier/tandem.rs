use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::alphabet::PhonologicalFeature;
use crate::error::{Error, Result};
use crate::vision::{fit_pca, PcaModel};

/// Floor applied before taking logs of classifier outputs.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TandemMode {
    /// The letter classifier's distribution (letters and boundaries).
    Letter,
    /// The six phonological feature distributions, concatenated.
    Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Linear,
    Log,
}

/// Concatenates the classifier outputs a tandem observation is built from.
pub fn classifier_block(dists: &[ArrayView1<f64>], mode: TandemMode) -> Result<Vec<f64>> {
    match mode {
        TandemMode::Letter => {
            let d = dists
                .first()
                .ok_or_else(|| Error::invalid("letter mode needs the letter classifier output"))?;
            if dists.len() != 1 {
                return Err(Error::invalid("letter mode takes exactly one distribution"));
            }
            Ok(d.to_vec())
        }
        TandemMode::Feature => {
            if dists.len() != PhonologicalFeature::ALL.len() {
                return Err(Error::invalid(format!(
                    "feature mode needs {} classifier outputs, got {}",
                    PhonologicalFeature::ALL.len(),
                    dists.len()
                )));
            }
            let mut out = Vec::new();
            for (d, f) in dists.iter().zip(PhonologicalFeature::ALL) {
                if d.len() != f.values().len() {
                    return Err(Error::DimensionMismatch {
                        expected: f.values().len(),
                        got: d.len(),
                    });
                }
                out.extend(d.iter());
            }
            Ok(out)
        }
    }
}

fn transform(block: &[f64], t: Transform) -> Vec<f64> {
    match t {
        Transform::Linear => block.to_vec(),
        Transform::Log => block.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect(),
    }
}

/// Projects classifier blocks and image features with separate PCA models
/// and concatenates the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TandemBuilder {
    pub mode: TandemMode,
    pub transform: Transform,
    pub classifier_pca: PcaModel,
    pub image_pca: PcaModel,
}

impl TandemBuilder {
    /// Fits both projections on per-frame rows of classifier blocks and image
    /// features.
    pub fn fit(
        blocks: &Array2<f64>,
        images: &Array2<f64>,
        k_classifier: usize,
        k_image: usize,
        mode: TandemMode,
        transform_kind: Transform,
    ) -> Result<Self> {
        let mut tb = blocks.clone();
        for mut row in tb.rows_mut() {
            let v = transform(row.as_slice().expect("contiguous"), transform_kind);
            row.assign(&ArrayView1::from(&v));
        }
        Ok(TandemBuilder {
            mode,
            transform: transform_kind,
            classifier_pca: fit_pca(&tb, k_classifier)?,
            image_pca: fit_pca(images, k_image)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.classifier_pca.output_dim() + self.image_pca.output_dim()
    }

    pub fn observation(&self, block: &[f64], image: ArrayView1<f64>) -> Result<Vec<f64>> {
        let b = transform(block, self.transform);
        let mut out = self.classifier_pca.apply(ArrayView1::from(&b))?.to_vec();
        out.extend(self.image_pca.apply(image)?.iter());
        Ok(out)
    }

    /// Observation sequence from per-frame blocks and image features.
    pub fn sequence(&self, blocks: &Array2<f64>, images: &Array2<f64>) -> Result<Array2<f64>> {
        if blocks.nrows() != images.nrows() {
            return Err(Error::DimensionMismatch {
                expected: blocks.nrows(),
                got: images.nrows(),
            });
        }
        let mut out = Array2::zeros((blocks.nrows(), self.dim()));
        for i in 0..blocks.nrows() {
            let o =
                self.observation(blocks.row(i).as_slice().expect("contiguous"), images.row(i))?;
            out.row_mut(i).assign(&ArrayView1::from(&o));
        }
        Ok(out)
    }
}
