use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal component projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`.
    pub basis: Vec<Vec<f64>>,
    /// Sample variance along each component, non-increasing.
    pub variances: Vec<f64>,
}

/// Top-`k` eigenvectors of the sample covariance of the rows of `data`.
///
/// Each component's sign is chosen so that its largest-magnitude entry is
/// positive.
pub fn fit_pca(data: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::invalid(
            "principal components need at least two rows",
        ));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!(
            "component count {k} outside 1..={}",
            (n - 1).min(d)
        )));
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut basis = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(v);
        variances.push(eig.eigenvalues[c].max(0.0));
    }
    Ok(PcaModel {
        mean: mean.to_vec(),
        basis,
        variances,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        Ok(self
            .basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect())
    }

    pub fn apply_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.apply(row)?);
        }
        Ok(out)
    }

    /// Maps a projection back to the input space.
    pub fn reconstruct(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::from(self.mean.clone());
        for (b, &c) in self.basis.iter().zip(z.iter()) {
            for (o, w) in out.iter_mut().zip(b) {
                *o += c * w;
            }
        }
        out
    }
}
