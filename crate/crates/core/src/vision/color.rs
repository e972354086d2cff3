use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::mask::{Mask, Rect};
use crate::error::{Error, Result};
use crate::hmm::{DiagGmm, GmmStats};

/// CIE L*a*b* of an sRGB pixel under the D65 white point.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorModelConfig {
    pub components: usize,
    pub var_floor: f64,
    /// Background fitting ignores pixels within this many pixels of a ROI.
    pub dilation: usize,
    pub kmeans_iters: usize,
    pub em_iters: usize,
    /// Percentile of training hand-pixel log densities used as the floor.
    pub floor_percentile: f64,
}

impl Default for ColorModelConfig {
    fn default() -> Self {
        ColorModelConfig {
            components: 3,
            var_floor: 1e-4,
            dilation: 5,
            kmeans_iters: 10,
            em_iters: 20,
            floor_percentile: 1.0,
        }
    }
}

/// Hand color mixture, per-pixel background Gaussians and the hand prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandColorModel {
    pub hand: DiagGmm,
    pub width: usize,
    pub height: usize,
    pub bg_mean: Vec<[f64; 3]>,
    pub bg_var: Vec<[f64; 3]>,
    pub prior: f64,
    /// Log density below which a pixel cannot be hand.
    pub hand_floor: f64,
}

fn lab_pixels(img: &RgbImage) -> Vec<[f64; 3]> {
    img.pixels().map(|p| rgb_to_lab(p.0)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means seeded at lightness quantiles, then EM.
fn fit_mixture(points: &[[f64; 3]], cfg: &ColorModelConfig) -> DiagGmm {
    let k = cfg.components;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let mut centers: Vec<Vec<f64>> = (0..k)
        .map(|j| points[order[(2 * j + 1) * points.len() / (2 * k)]].to_vec())
        .collect();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..cfg.kmeans_iters {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = (0..k)
                .min_by(|&i, &j| sq_dist(p, &centers[i]).total_cmp(&sq_dist(p, &centers[j])))
                .expect("k > 0");
        }
        let mut sums = vec![vec![0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let mut stats = GmmStats::new(k, 3);
    for (&a, p) in assign.iter().zip(points) {
        stats.add(a, p, 1.0);
    }
    let mut gmm = DiagGmm {
        weights: vec![0.0; k],
        means: centers,
        vars: vec![vec![1.0; 3]; k],
    };
    stats.update(&mut gmm, cfg.var_floor);
    let mut buf = Vec::new();
    for _ in 0..cfg.em_iters {
        let mut stats = GmmStats::new(k, 3);
        for p in points {
            stats.accumulate(&gmm, p, 1.0, &mut buf);
        }
        stats.update(&mut gmm, cfg.var_floor);
    }
    // components that lost all their points carry no mass
    let live: Vec<usize> = (0..k).filter(|&j| gmm.weights[j] > 0.0).collect();
    DiagGmm {
        weights: live.iter().map(|&j| gmm.weights[j]).collect(),
        means: live.iter().map(|&j| gmm.means[j].clone()).collect(),
        vars: live.iter().map(|&j| gmm.vars[j].clone()).collect(),
    }
}

/// Fits the hand mixture to ROI pixels, a Gaussian per background pixel
/// from frames where that pixel lies outside every dilated ROI, and the prior
/// as the ROI pixel fraction.
pub fn fit_hand_color_model(
    frames: &[RgbImage],
    rois: &[Mask],
    cfg: &ColorModelConfig,
) -> Result<HandColorModel> {
    if frames.is_empty() || frames.len() != rois.len() {
        return Err(Error::empty("annotated frames"));
    }
    if cfg.components == 0 || cfg.var_floor <= 0.0 {
        return Err(Error::invalid(
            "color model needs components and a positive variance floor",
        ));
    }
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let mut hand_px = Vec::new();
    let mut bg_sum = vec![[0.0; 3]; w * h];
    let mut bg_sq = vec![[0.0; 3]; w * h];
    let mut bg_n = vec![0usize; w * h];
    let mut roi_count = 0usize;
    for (img, roi) in frames.iter().zip(rois) {
        if img.width() as usize != w
            || img.height() as usize != h
            || roi.width != w
            || roi.height != h
        {
            return Err(Error::invalid("frames and ROI masks must share one size"));
        }
        if roi.is_empty() {
            return Err(Error::empty("hand ROI"));
        }
        let lab = lab_pixels(img);
        let near = roi.dilate(cfg.dilation);
        for (i, c) in lab.iter().enumerate() {
            if roi.data[i] {
                hand_px.push(*c);
                roi_count += 1;
            }
            if !near.data[i] {
                bg_n[i] += 1;
                for d in 0..3 {
                    bg_sum[i][d] += c[d];
                    bg_sq[i][d] += c[d] * c[d];
                }
            }
        }
    }
    let total_bg: usize = bg_n.iter().sum();
    if total_bg == 0 {
        return Err(Error::empty("background pixels"));
    }
    // pixels never seen as background fall back to the pooled statistics
    let mut pooled = ([0.0; 3], [0.0; 3]);
    for i in 0..w * h {
        for d in 0..3 {
            pooled.0[d] += bg_sum[i][d];
            pooled.1[d] += bg_sq[i][d];
        }
    }
    let moments = |s: [f64; 3], q: [f64; 3], n: f64| {
        let mean = [s[0] / n, s[1] / n, s[2] / n];
        let var = [0, 1, 2].map(|d| (q[d] / n - mean[d] * mean[d]).max(cfg.var_floor));
        (mean, var)
    };
    let fallback = moments(pooled.0, pooled.1, total_bg as f64);
    let (bg_mean, bg_var): (Vec<[f64; 3]>, Vec<[f64; 3]>) = (0..w * h)
        .map(|i| {
            if bg_n[i] == 0 {
                fallback
            } else {
                moments(bg_sum[i], bg_sq[i], bg_n[i] as f64)
            }
        })
        .unzip();
    let hand = fit_mixture(&hand_px, cfg);
    let mut dens: Vec<f64> = hand_px.iter().map(|c| hand.log_density(c)).collect();
    dens.sort_by(f64::total_cmp);
    let idx = ((cfg.floor_percentile / 100.0) * (dens.len() - 1) as f64).floor() as usize;
    let prior = roi_count as f64 / (frames.len() * w * h) as f64;
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::invalid(
            "hand prior must lie strictly between 0 and 1",
        ));
    }
    Ok(HandColorModel {
        hand,
        width: w,
        height: h,
        bg_mean,
        bg_var,
        prior,
        hand_floor: dens[idx.min(dens.len() - 1)],
    })
}

fn gauss3(c: &[f64; 3], mean: &[f64; 3], var: &[f64; 3]) -> f64 {
    const LOG_2PI: f64 = 1.837_877_066_409_345_3;
    -0.5 * (0..3)
        .map(|d| LOG_2PI + var[d].ln() + (c[d] - mean[d]).powi(2) / var[d])
        .sum::<f64>()
}

impl HandColorModel {
    /// Per-pixel odds test, before any suppression.
    pub fn hand_pixels(&self, frame: &RgbImage) -> Result<Mask> {
        if frame.width() as usize != self.width || frame.height() as usize != self.height {
            return Err(Error::DimensionMismatch {
                expected: self.width * self.height,
                got: (frame.width() * frame.height()) as usize,
            });
        }
        let log_prior = self.prior.ln();
        let log_rest = (1.0 - self.prior).ln();
        let mut m = Mask::new(self.width, self.height);
        for (i, p) in frame.pixels().enumerate() {
            let c = rgb_to_lab(p.0);
            let hand = self.hand.log_density(&c);
            let bg = gauss3(&c, &self.bg_mean[i], &self.bg_var[i]);
            m.data[i] = hand + log_prior > bg + log_rest && hand >= self.hand_floor;
        }
        Ok(m)
    }
}

/// Result of [`segment_hand`]; `empty` flags a frame where nothing survived.
#[derive(Clone, Debug, PartialEq)]
pub struct HandMask {
    pub mask: Mask,
    pub empty: bool,
}

/// Odds test, exclusion and region suppression, then the largest
/// 8-connected component.
pub fn segment_hand(
    frame: &RgbImage,
    model: &HandColorModel,
    exclusion: Option<&Mask>,
    region: Option<Rect>,
) -> Result<HandMask> {
    let mut m = model.hand_pixels(frame)?;
    if let Some(ex) = exclusion {
        if ex.width != m.width || ex.height != m.height {
            return Err(Error::invalid("exclusion mask size differs from the frame"));
        }
        for (a, &b) in m.data.iter_mut().zip(&ex.data) {
            *a &= !b;
        }
    }
    if let Some(r) = region {
        for y in 0..m.height {
            for x in 0..m.width {
                if !r.contains(x, y) {
                    m.set(x, y, false);
                }
            }
        }
    }
    let mask = m.largest_component();
    let empty = mask.is_empty();
    Ok(HandMask { mask, empty })
}
