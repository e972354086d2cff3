use serde::{Deserialize, Serialize};

use crate::semimarkov::logsumexp;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal-covariance Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl DiagGmm {
    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Self {
        DiagGmm {
            weights: vec![1.0],
            means: vec![mean],
            vars: vec![var],
        }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Splits every component into `m` copies whose means are offset by
    /// multiples of `0.2σ`, sharing the original weight.
    pub fn mix_up(&self, m: usize) -> Self {
        let mut out = DiagGmm {
            weights: Vec::new(),
            means: Vec::new(),
            vars: Vec::new(),
        };
        for c in 0..self.components() {
            for j in 0..m {
                let shift = 0.2 * (2.0 * j as f64 - (m as f64 - 1.0));
                out.weights.push(self.weights[c] / m as f64);
                out.means.push(
                    self.means[c]
                        .iter()
                        .zip(&self.vars[c])
                        .map(|(mu, v)| mu + shift * v.sqrt())
                        .collect(),
                );
                out.vars.push(self.vars[c].clone());
            }
        }
        out
    }

    /// Weighted log density of each component at `x`.
    pub fn component_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for c in 0..self.components() {
            let w = self.weights[c];
            if w <= 0.0 {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let mut acc = 0.0;
            for ((xi, mu), v) in x.iter().zip(&self.means[c]).zip(&self.vars[c]) {
                let d = xi - mu;
                acc += LOG_2PI + v.ln() + d * d / v;
            }
            out.push(w.ln() - 0.5 * acc);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.components());
        self.component_log_densities(x, &mut buf);
        logsumexp(&buf)
    }
}

/// Zeroth, first and second order statistics per mixture component.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmStats {
    pub occ: Vec<f64>,
    pub sum: Vec<Vec<f64>>,
    pub sq: Vec<Vec<f64>>,
}

impl GmmStats {
    pub fn new(components: usize, dim: usize) -> Self {
        GmmStats {
            occ: vec![0.0; components],
            sum: vec![vec![0.0; dim]; components],
            sq: vec![vec![0.0; dim]; components],
        }
    }

    /// Adds frame `x` with state occupancy `gamma`, split over components by
    /// their posteriors under `gmm`.
    pub fn accumulate(&mut self, gmm: &DiagGmm, x: &[f64], gamma: f64, buf: &mut Vec<f64>) {
        if gamma <= 0.0 {
            return;
        }
        gmm.component_log_densities(x, buf);
        let total = logsumexp(buf);
        for c in 0..self.occ.len() {
            let r = gamma * (buf[c] - total).exp();
            if r == 0.0 {
                continue;
            }
            self.add(c, x, r);
        }
    }

    pub fn add(&mut self, c: usize, x: &[f64], r: f64) {
        self.occ[c] += r;
        for ((s, q), &xi) in self.sum[c].iter_mut().zip(self.sq[c].iter_mut()).zip(x) {
            *s += r * xi;
            *q += r * xi * xi;
        }
    }

    pub fn merge(&mut self, other: &GmmStats) {
        for c in 0..self.occ.len() {
            self.occ[c] += other.occ[c];
            for (a, b) in self.sum[c].iter_mut().zip(&other.sum[c]) {
                *a += b;
            }
            for (a, b) in self.sq[c].iter_mut().zip(&other.sq[c]) {
                *a += b;
            }
        }
    }

    /// Maximum-likelihood update with variances floored at `floor`. A
    /// component with no occupancy keeps its mean and variance at zero weight;
    /// a state with no occupancy is left unchanged.
    pub fn update(&self, gmm: &mut DiagGmm, floor: f64) {
        let total: f64 = self.occ.iter().sum();
        if total <= 0.0 {
            return;
        }
        for c in 0..self.occ.len() {
            let n = self.occ[c];
            gmm.weights[c] = n / total;
            if n <= 0.0 {
                continue;
            }
            for d in 0..gmm.means[c].len() {
                let mu = self.sum[c][d] / n;
                gmm.means[c][d] = mu;
                gmm.vars[c][d] = (self.sq[c][d] / n - mu * mu).max(floor);
            }
        }
    }
}
