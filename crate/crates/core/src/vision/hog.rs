use image::GrayImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::mask::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Side of the square crop the hand box is resized to.
    pub size: usize,
    /// Cells per side for each pyramid level.
    pub grids: Vec<usize>,
    pub bins: usize,
    /// When false the whole crop contributes, not only hand pixels.
    pub respect_mask: bool,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            size: 128,
            grids: vec![4, 8, 16],
            bins: 8,
            respect_mask: true,
            epsilon: 1e-6,
        }
    }
}

impl HogConfig {
    pub fn dim(&self) -> usize {
        self.grids.iter().map(|g| g * g).sum::<usize>() * self.bins
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 || self.bins == 0 || self.grids.is_empty() {
            return Err(Error::invalid(
                "HOG needs a size, bins and at least one grid",
            ));
        }
        if let Some(g) = self.grids.iter().find(|&&g| g == 0 || self.size % g != 0) {
            return Err(Error::invalid(format!(
                "grid {g} does not divide crop size {}",
                self.size
            )));
        }
        Ok(())
    }
}

/// Intensities in `[0, 1]`, rows by columns.
pub fn gray_plane(img: &GrayImage) -> Array2<f64> {
    Array2::from_shape_fn((img.height() as usize, img.width() as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0
    })
}

fn resize_bilinear(
    src: &Array2<f64>,
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
    n: usize,
) -> Array2<f64> {
    let sy = h as f64 / n as f64;
    let sx = w as f64 / n as f64;
    let coord = |d: usize, s: f64, len: usize| {
        let p = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (len - 1) as f64);
        let i = p.floor() as usize;
        let j = (i + 1).min(len - 1);
        (i, j, p - i as f64)
    };
    Array2::from_shape_fn((n, n), |(r, c)| {
        let (y0, y1, fy) = coord(r, sy, h);
        let (x0, x1, fx) = coord(c, sx, w);
        let at = |y: usize, x: usize| src[[r0 + y, c0 + x]];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Central-difference gradients with replicate padding, as (gx, gy).
pub fn gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(r, c)| {
        (img[[r, (c + 1).min(w - 1)]] - img[[r, c.saturating_sub(1)]]) / 2.0
    });
    let gy = Array2::from_shape_fn((h, w), |(r, c)| {
        (img[[(r + 1).min(h - 1), c]] - img[[r.saturating_sub(1), c]]) / 2.0
    });
    (gx, gy)
}

/// Bin of an unsigned orientation in `[0, π)`.
pub fn orientation_bin(gx: f64, gy: f64, bins: usize) -> usize {
    let a = gy.atan2(gx).rem_euclid(PI);
    ((a / PI * bins as f64) as usize).min(bins - 1)
}

/// Gradient-orientation histograms over the pyramid grids of the mask's
/// bounding box, resized to `cfg.size` squared. Each grid is L2-normalized
/// on its own.
pub fn hog_descriptor(gray: &Array2<f64>, mask: &Mask, cfg: &HogConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if gray.dim() != (mask.height, mask.width) {
        return Err(Error::DimensionMismatch {
            expected: mask.width * mask.height,
            got: gray.len(),
        });
    }
    let bb = mask.bbox().ok_or_else(|| Error::empty("hand mask"))?;
    let n = cfg.size;
    let crop = resize_bilinear(gray, bb.y, bb.x, bb.height, bb.width, n);
    let keep: Vec<bool> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            let y = ((r as f64 + 0.5) * bb.height as f64 / n as f64) as usize;
            let x = ((c as f64 + 0.5) * bb.width as f64 / n as f64) as usize;
            !cfg.respect_mask || mask.get(bb.x + x.min(bb.width - 1), bb.y + y.min(bb.height - 1))
        })
        .collect();
    let (gx, gy) = gradients(&crop);
    let mut out = Vec::with_capacity(cfg.dim());
    for &g in &cfg.grids {
        let cell = n / g;
        let mut hist = vec![0.0; g * g * cfg.bins];
        for r in 0..n {
            for c in 0..n {
                if !keep[r * n + c] {
                    continue;
                }
                let (dx, dy) = (gx[[r, c]], gy[[r, c]]);
                let m = dx.hypot(dy);
                if m == 0.0 {
                    continue;
                }
                let b = orientation_bin(dx, dy, cfg.bins);
                hist[((r / cell) * g + c / cell) * cfg.bins + b] += m;
            }
        }
        let norm = (hist.iter().map(|v| v * v).sum::<f64>() + cfg.epsilon * cfg.epsilon).sqrt();
        out.extend(hist.iter().map(|v| v / norm));
    }
    Ok(out)
}
