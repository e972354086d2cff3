//! Segment feature functions.
//!
//! Every feature splits into a span part, depending on `(label, start, end)`
//! and the observations, and a pair part depending only on the two labels at
//! a boundary. Lexicalized blocks are laid out label-major.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::alphabet::{BOS, EOS};
use crate::classifier::Mlp;
use crate::error::{Error, Result};
use crate::lm::BigramLm;
use crate::semimarkov::ScoreTable;

/// Sparse feature vector as `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Pooling applied to classifier outputs over a span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Mean,
    Max,
    /// Means over three contiguous thirds.
    DivS,
    /// Maxima over three contiguous thirds.
    DivM,
}

impl Pool {
    pub fn width(self) -> usize {
        match self {
            Pool::Mean | Pool::Max => 1,
            Pool::DivS | Pool::DivM => 3,
        }
    }
}

/// Which per-frame classifier a feature reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Letters,
    /// One of the six phonological feature classifiers, by position.
    Phonological(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// Segment average, first/middle/last samples, boundary frames, duration
    /// one-hot and bias of the letter posteriors, all lexicalized.
    FirstPass { classes: usize, max_dur: usize },
    /// Bigram probability of the label pair.
    Lm { log: bool },
    /// +1 when the span lies inside a single run of the baseline labeling
    /// that carries the hypothesized label, -1 otherwise.
    Baseline,
    /// Pooled classifier outputs, lexicalized by label.
    Classifier {
        source: Source,
        pool: Pool,
        classes: usize,
    },
    /// Single smoothed-motion minimum inside the span, lexicalized by label.
    Peak,
    /// Score assigned by an earlier model, read from `FeatureContext::first_pass`.
    FirstPassScore,
    /// Segment classifier posterior of the hypothesized label.
    SegmentClassifier { log: bool },
}

/// Per-sequence inputs the feature functions may read.
#[derive(Clone, Debug, Default)]
pub struct FeatureContext {
    pub frames: usize,
    pub letter_posteriors: Option<Array2<f64>>,
    pub phonological_posteriors: Vec<Array2<f64>>,
    pub descriptors: Option<Array2<f64>>,
    pub lm: Option<Arc<BigramLm>>,
    pub baseline: Option<Vec<usize>>,
    pub peak_curve: Option<Vec<f64>>,
    pub first_pass: Option<Arc<ScoreTable>>,
    pub segment_classifier: Option<Arc<Mlp>>,
}

impl FeatureContext {
    pub fn new(frames: usize) -> Self {
        FeatureContext {
            frames,
            ..Default::default()
        }
    }

    pub fn with_letter_posteriors(mut self, p: Array2<f64>) -> Result<Self> {
        self.check_rows(p.nrows())?;
        self.letter_posteriors = Some(p);
        Ok(self)
    }

    pub fn with_phonological_posteriors(mut self, p: Vec<Array2<f64>>) -> Result<Self> {
        for m in &p {
            self.check_rows(m.nrows())?;
        }
        self.phonological_posteriors = p;
        Ok(self)
    }

    /// Stores descriptors and derives the smoothed motion curve from them.
    pub fn with_descriptors(mut self, x: Array2<f64>) -> Result<Self> {
        self.check_rows(x.nrows())?;
        self.peak_curve = Some(peak_curve(&x));
        self.descriptors = Some(x);
        Ok(self)
    }

    pub fn with_lm(mut self, lm: Arc<BigramLm>) -> Self {
        self.lm = Some(lm);
        self
    }

    pub fn with_baseline(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_rows(labels.len())?;
        self.baseline = Some(labels);
        Ok(self)
    }

    pub fn with_first_pass(mut self, table: Arc<ScoreTable>) -> Result<Self> {
        self.check_rows(table.frames())?;
        self.first_pass = Some(table);
        Ok(self)
    }

    pub fn with_segment_classifier(mut self, mlp: Arc<Mlp>) -> Self {
        self.segment_classifier = Some(mlp);
        self
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.frames {
            return Err(Error::DimensionMismatch {
                expected: self.frames,
                got: rows,
            });
        }
        Ok(())
    }

    fn source(&self, s: Source) -> Result<&Array2<f64>> {
        match s {
            Source::Letters => self.letter_posteriors.as_ref(),
            Source::Phonological(k) => self.phonological_posteriors.get(k),
        }
        .ok_or_else(|| Error::invalid(format!("feature context lacks {s:?} classifier outputs")))
    }
}

/// L2 norm of consecutive descriptor differences (length `T - 1`), smoothed
/// by a centered 5-frame moving average whose window shrinks at the edges.
pub fn peak_curve(x: &Array2<f64>) -> Vec<f64> {
    let t = x.nrows();
    if t < 2 {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..t - 1)
        .map(|i| {
            let a = x.row(i);
            let b = x.row(i + 1);
            a.iter()
                .zip(b.iter())
                .map(|(p, q)| (q - p) * (q - p))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    moving_average(&raw, 2)
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(n);
            v[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Counts interior local minima: an index (or a run of equal values) that is
/// strictly below both neighbors. Endpoints never count.
pub fn count_local_minima(c: &[f64]) -> usize {
    let n = c.len();
    let mut count = 0;
    let mut i = 1;
    while i + 1 < n {
        if c[i] < c[i - 1] {
            let mut j = i;
            while j + 1 < n && c[j + 1] == c[i] {
                j += 1;
            }
            if j + 1 < n && c[j + 1] > c[i] {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

/// δ_peak for frames `start..end`: the motion curve entries between frames of
/// the span contain exactly one local minimum.
pub fn single_peak(curve: &[f64], start: usize, end: usize) -> bool {
    let hi = end.min(curve.len() + 1);
    if hi <= start + 1 {
        return false;
    }
    count_local_minima(&curve[start..hi - 1]) == 1
}

/// Splits `n` frames into three contiguous parts: `ceil(n/3)` first, the rest
/// split evenly with the earlier part taking any remainder.
pub fn thirds(n: usize) -> [(usize, usize); 3] {
    let a = n.div_ceil(3);
    let rest = n - a;
    let b = rest.div_ceil(2);
    let c = rest - b;
    [(0, a), (a, a + b), (a + b, a + b + c)]
}

/// Pooled values of `x[start..end]` column `v`. Empty thirds repeat the
/// previous third.
fn pool_column(x: &Array2<f64>, v: usize, start: usize, end: usize, pool: Pool, out: &mut [f64]) {
    let col = x.column(v);
    let mean = |a: usize, b: usize| (a..b).map(|i| col[i]).sum::<f64>() / (b - a) as f64;
    let max = |a: usize, b: usize| (a..b).map(|i| col[i]).fold(f64::NEG_INFINITY, f64::max);
    match pool {
        Pool::Mean => out[0] = mean(start, end),
        Pool::Max => out[0] = max(start, end),
        Pool::DivS | Pool::DivM => {
            let parts = thirds(end - start);
            for (k, (a, b)) in parts.iter().enumerate() {
                out[k] = if b > a {
                    if pool == Pool::DivS {
                        mean(start + a, start + b)
                    } else {
                        max(start + a, start + b)
                    }
                } else {
                    out[k - 1]
                };
            }
        }
    }
}

/// Means of the three thirds of a segment, concatenated.
pub fn thirds_summary(x: &Array2<f64>, start: usize, end: usize) -> Vec<f64> {
    let d = x.ncols();
    let mut out = vec![0.0; 3 * d];
    let mut buf = [0.0; 3];
    for v in 0..d {
        pool_column(x, v, start, end, Pool::DivS, &mut buf);
        for k in 0..3 {
            out[k * d + v] = buf[k];
        }
    }
    out
}

impl Feature {
    pub fn name(&self) -> String {
        match self {
            Feature::FirstPass { .. } => "first_pass".into(),
            Feature::Lm { log } => if *log { "lm_log" } else { "lm" }.into(),
            Feature::Baseline => "baseline".into(),
            Feature::Classifier { source, pool, .. } => {
                format!("classifier_{source:?}_{pool:?}").to_lowercase()
            }
            Feature::Peak => "peak".into(),
            Feature::FirstPassScore => "first_pass_score".into(),
            Feature::SegmentClassifier { .. } => "segment_classifier".into(),
        }
    }

    pub fn dim(&self, n_labels: usize) -> usize {
        match self {
            Feature::FirstPass { classes, max_dur } => {
                n_labels * first_pass_block(*classes, *max_dur)
            }
            Feature::Lm { .. } | Feature::Baseline | Feature::FirstPassScore => 1,
            Feature::SegmentClassifier { .. } => 1,
            Feature::Classifier { pool, classes, .. } => n_labels * classes * pool.width(),
            Feature::Peak => n_labels,
        }
    }

    /// Appends the span part for `label` over frames `start..end`.
    pub fn span_into(
        &self,
        ctx: &FeatureContext,
        label: usize,
        start: usize,
        end: usize,
        offset: usize,
        out: &mut SparseVec,
    ) -> Result<()> {
        match self {
            Feature::FirstPass { classes, max_dur } => {
                let g = ctx.source(Source::Letters)?;
                if g.ncols() != *classes {
                    return Err(Error::DimensionMismatch {
                        expected: *classes,
                        got: g.ncols(),
                    });
                }
                let c = *classes;
                let base = offset + label * first_pass_block(c, *max_dur);
                let n = (end - start) as f64;
                for v in 0..c {
                    let s: f64 = (start..end).map(|i| g[[i, v]]).sum();
                    out.push((base + v, s / n));
                }
                let mid = start + (end - start - 1) / 2;
                for (k, i) in [start, mid, end - 1, start, end - 1]
                    .into_iter()
                    .enumerate()
                {
                    let row = g.row(i);
                    let b = base + (k + 1) * c;
                    out.extend(row.iter().enumerate().map(|(v, &x)| (b + v, x)));
                }
                let dur = (end - start).min(*max_dur);
                out.push((base + 6 * c + dur - 1, 1.0));
                out.push((base + 6 * c + max_dur, 1.0));
            }
            Feature::Lm { .. } => {}
            Feature::Baseline => {
                let b = ctx
                    .baseline
                    .as_ref()
                    .ok_or_else(|| Error::invalid("feature context lacks a baseline labeling"))?;
                let first = b[start];
                let single = b[start..end].iter().all(|&x| x == first);
                out.push((offset, if single && first == label { 1.0 } else { -1.0 }));
            }
            Feature::Classifier {
                source,
                pool,
                classes,
            } => {
                let g = ctx.source(*source)?;
                if g.ncols() != *classes {
                    return Err(Error::DimensionMismatch {
                        expected: *classes,
                        got: g.ncols(),
                    });
                }
                let w = pool.width();
                let base = offset + label * classes * w;
                let mut buf = [0.0; 3];
                for v in 0..*classes {
                    pool_column(g, v, start, end, *pool, &mut buf);
                    for k in 0..w {
                        out.push((base + v * w + k, buf[k]));
                    }
                }
            }
            Feature::Peak => {
                let curve = ctx.peak_curve.as_ref().ok_or_else(|| {
                    Error::invalid("feature context lacks descriptors for the peak feature")
                })?;
                if single_peak(curve, start, end) {
                    out.push((offset + label, 1.0));
                }
            }
            Feature::FirstPassScore => {
                let t = ctx
                    .first_pass
                    .as_ref()
                    .ok_or_else(|| Error::invalid("feature context lacks first-pass scores"))?;
                out.push((offset, t.span(label, end, end - start)));
            }
            Feature::SegmentClassifier { log } => {
                let mlp = ctx
                    .segment_classifier
                    .as_ref()
                    .ok_or_else(|| Error::invalid("feature context lacks a segment classifier"))?;
                let x = ctx
                    .descriptors
                    .as_ref()
                    .ok_or_else(|| Error::invalid("feature context lacks descriptors"))?;
                let summary = thirds_summary(x, start, end);
                let p = mlp.predict(ArrayView1::from(&summary))?;
                let v = p.get(label).copied().unwrap_or(0.0);
                out.push((offset, if *log { v.max(1e-10).ln() } else { v }));
            }
        }
        Ok(())
    }

    /// Appends the pair part for a boundary `prev -> label`; `None` is the
    /// sequence start.
    pub fn pair_into(
        &self,
        ctx: &FeatureContext,
        prev: Option<usize>,
        label: usize,
        offset: usize,
        out: &mut SparseVec,
    ) {
        match self {
            Feature::Lm { log } => {
                if let Some(v) = lm_value(ctx, prev, label) {
                    out.push((offset, if *log { v.ln() } else { v }));
                }
            }
            Feature::FirstPassScore => {
                if let Some(t) = &ctx.first_pass {
                    out.push((offset, t.pair(prev, label)));
                }
            }
            _ => {}
        }
    }

    pub fn has_pair_part(&self) -> bool {
        matches!(self, Feature::Lm { .. } | Feature::FirstPassScore)
    }

    pub fn has_span_part(&self) -> bool {
        !matches!(self, Feature::Lm { .. })
    }

    /// Adds `w · span features` to every entry of the table.
    pub fn add_span_scores(
        &self,
        ctx: &FeatureContext,
        w: &[f64],
        table: &mut ScoreTable,
    ) -> Result<()> {
        if !self.has_span_part() {
            return Ok(());
        }
        if let Feature::FirstPass { classes, max_dur } = self {
            return first_pass_scores(ctx, *classes, *max_dur, w, table);
        }
        let mut buf = SparseVec::new();
        for y in 0..table.n_labels() {
            for e in 1..=table.frames() {
                for d in 1..=table.max_dur(y).min(e) {
                    buf.clear();
                    self.span_into(ctx, y, e - d, e, 0, &mut buf)?;
                    *table.span_mut(y, e, d) += buf.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
                }
            }
        }
        Ok(())
    }

    /// Accumulates `Σ weight(span) · f(span)` into `grad`, with span weights
    /// read from a table of expected counts.
    pub fn add_span_grad(
        &self,
        ctx: &FeatureContext,
        counts: &ScoreTable,
        grad: &mut [f64],
    ) -> Result<()> {
        if !self.has_span_part() {
            return Ok(());
        }
        if let Feature::FirstPass { classes, max_dur } = self {
            return first_pass_grad(ctx, *classes, *max_dur, counts, grad);
        }
        let mut buf = SparseVec::new();
        for y in 0..counts.n_labels() {
            for e in 1..=counts.frames() {
                for d in 1..=counts.max_dur(y).min(e) {
                    let m = counts.span(y, e, d);
                    if m == 0.0 {
                        continue;
                    }
                    buf.clear();
                    self.span_into(ctx, y, e - d, e, 0, &mut buf)?;
                    for &(i, v) in &buf {
                        grad[i] += m * v;
                    }
                }
            }
        }
        Ok(())
    }
}

fn first_pass_block(classes: usize, max_dur: usize) -> usize {
    6 * classes + max_dur + 1
}

fn lm_value(ctx: &FeatureContext, prev: Option<usize>, label: usize) -> Option<f64> {
    let lm = ctx.lm.as_ref()?;
    match prev {
        None if label == BOS => Some(1.0),
        None => lm.prob(BOS, label).ok(),
        Some(p) if p == EOS || label == BOS => None,
        Some(p) => lm.prob(p, label).ok(),
    }
}

/// Per-frame projections `w_block(y) · g_i` for the six posterior blocks.
fn first_pass_projections(
    g: &Array2<f64>,
    w: &[f64],
    label: usize,
    classes: usize,
    block: usize,
) -> [Vec<f64>; 6] {
    let t = g.nrows();
    let base = label * block;
    std::array::from_fn(|k| {
        let wk = &w[base + k * classes..base + (k + 1) * classes];
        (0..t)
            .map(|i| g.row(i).iter().zip(wk).map(|(a, b)| a * b).sum())
            .collect()
    })
}

fn first_pass_scores(
    ctx: &FeatureContext,
    classes: usize,
    max_dur: usize,
    w: &[f64],
    table: &mut ScoreTable,
) -> Result<()> {
    let g = ctx.source(Source::Letters)?;
    if g.ncols() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            got: g.ncols(),
        });
    }
    let block = first_pass_block(classes, max_dur);
    let t = table.frames();
    for y in 0..table.n_labels() {
        let [avg, first, mid, last, b_start, b_end] =
            first_pass_projections(g, w, y, classes, block);
        let mut prefix = vec![0.0; t + 1];
        for i in 0..t {
            prefix[i + 1] = prefix[i] + avg[i];
        }
        let wd = &w[y * block + 6 * classes..y * block + 6 * classes + max_dur];
        let bias = w[y * block + 6 * classes + max_dur];
        let md = table.max_dur(y);
        let spans = table.label_spans_mut(y);
        for e in 1..=t {
            for d in 1..=md.min(e) {
                let s = e - d;
                let v = (prefix[e] - prefix[s]) / d as f64
                    + first[s]
                    + mid[s + (d - 1) / 2]
                    + last[e - 1]
                    + b_start[s]
                    + b_end[e - 1]
                    + wd[d.min(max_dur) - 1]
                    + bias;
                spans[(e - 1) * md + d - 1] += v;
            }
        }
    }
    Ok(())
}

fn first_pass_grad(
    ctx: &FeatureContext,
    classes: usize,
    max_dur: usize,
    counts: &ScoreTable,
    grad: &mut [f64],
) -> Result<()> {
    let g = ctx.source(Source::Letters)?;
    let block = first_pass_block(classes, max_dur);
    let t = counts.frames();
    for y in 0..counts.n_labels() {
        // per-frame coefficients: running average, first/start, middle, last/end
        let mut diff = vec![0.0; t + 1];
        let mut c_first = vec![0.0; t];
        let mut c_mid = vec![0.0; t];
        let mut c_last = vec![0.0; t];
        let md = counts.max_dur(y);
        let spans = counts.label_spans(y);
        let base = y * block;
        let mut touched = false;
        for e in 1..=t {
            for d in 1..=md.min(e) {
                let m = spans[(e - 1) * md + d - 1];
                if m == 0.0 {
                    continue;
                }
                touched = true;
                let s = e - d;
                diff[s] += m / d as f64;
                diff[e] -= m / d as f64;
                c_first[s] += m;
                c_mid[s + (d - 1) / 2] += m;
                c_last[e - 1] += m;
                grad[base + 6 * classes + d.min(max_dur) - 1] += m;
                grad[base + 6 * classes + max_dur] += m;
            }
        }
        if !touched {
            continue;
        }
        let mut run = 0.0;
        for i in 0..t {
            run += diff[i];
            let row = g.row(i);
            for (k, c) in [
                (0, run),
                (1, c_first[i]),
                (2, c_mid[i]),
                (3, c_last[i]),
                (4, c_first[i]),
                (5, c_last[i]),
            ] {
                if c == 0.0 {
                    continue;
                }
                let gk = &mut grad[base + k * classes..base + (k + 1) * classes];
                for (a, &x) in gk.iter_mut().zip(row.iter()) {
                    *a += c * x;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn thirds_layout() {
        assert_eq!(thirds(6), [(0, 2), (2, 4), (4, 6)]);
        assert_eq!(thirds(4), [(0, 2), (2, 3), (3, 4)]);
        assert_eq!(thirds(5), [(0, 2), (2, 4), (4, 5)]);
        assert_eq!(thirds(7), [(0, 3), (3, 5), (5, 7)]);
        assert_eq!(thirds(1), [(0, 1), (1, 1), (1, 1)]);
    }

    #[test]
    fn local_minima_rules() {
        assert_eq!(count_local_minima(&[3.0, 1.0, 3.0]), 1);
        assert_eq!(count_local_minima(&[3.0, 1.0, 2.0, 1.0, 3.0]), 2);
        assert_eq!(count_local_minima(&[4.0, 3.0, 2.0, 1.0]), 0);
        assert_eq!(count_local_minima(&[3.0, 1.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(count_local_minima(&[1.0, 2.0, 3.0]), 0);
        assert_eq!(count_local_minima(&[3.0, 1.0, 1.0]), 0);
    }

    #[test]
    fn classifier_pools() {
        let g = array![[0.0], [1.0], [0.0], [1.0], [0.0], [1.0]];
        let ctx = FeatureContext::new(6).with_letter_posteriors(g).unwrap();
        let f = Feature::Classifier {
            source: Source::Letters,
            pool: Pool::DivS,
            classes: 1,
        };
        let mut out = SparseVec::new();
        f.span_into(&ctx, 1, 0, 6, 0, &mut out).unwrap();
        assert_eq!(out, vec![(3, 0.5), (4, 0.5), (5, 0.5)]);
        let f = Feature::Classifier {
            source: Source::Letters,
            pool: Pool::DivM,
            classes: 1,
        };
        out.clear();
        f.span_into(&ctx, 0, 0, 6, 0, &mut out).unwrap();
        assert_eq!(out, vec![(0, 1.0), (1, 1.0), (2, 1.0)]);

        let g = array![[0.2], [0.4]];
        let ctx = FeatureContext::new(2).with_letter_posteriors(g).unwrap();
        let f = Feature::Classifier {
            source: Source::Letters,
            pool: Pool::Mean,
            classes: 1,
        };
        out.clear();
        f.span_into(&ctx, 0, 0, 2, 0, &mut out).unwrap();
        assert!((out[0].1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn baseline_values() {
        let ctx = FeatureContext::new(6)
            .with_baseline(vec![0, 0, 0, 1, 1, 1])
            .unwrap();
        let v = |label, s, e| {
            let mut out = SparseVec::new();
            Feature::Baseline
                .span_into(&ctx, label, s, e, 0, &mut out)
                .unwrap();
            out[0].1
        };
        assert_eq!(v(0, 0, 3), 1.0);
        assert_eq!(v(0, 2, 4), -1.0);
        assert_eq!(v(1, 0, 2), -1.0);
    }

    #[test]
    fn peak_curve_smoothing() {
        let x = array![[0.0], [1.0], [3.0], [3.0], [4.0], [6.0]];
        let c = peak_curve(&x);
        assert_eq!(c.len(), 5);
        // raw = [1, 2, 0, 1, 2]
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!((c[2] - 6.0 / 5.0).abs() < 1e-15);
        assert!((c[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fast_first_pass_matches_generic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (t, c, l, n) = (7, 4, 3, 3);
        let g = Array2::from_shape_fn((t, c), |_| rng.random::<f64>());
        let ctx = FeatureContext::new(t).with_letter_posteriors(g).unwrap();
        let f = Feature::FirstPass {
            classes: c,
            max_dur: l,
        };
        let w: Vec<f64> = (0..f.dim(n)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut fast = ScoreTable::new(t, &[l, l, t]);
        fast.fill(0.0);
        f.add_span_scores(&ctx, &w, &mut fast).unwrap();
        let mut counts = ScoreTable::new(t, &[l, l, t]);
        let mut fast_grad = vec![0.0; w.len()];
        let mut slow_grad = vec![0.0; w.len()];
        let mut buf = SparseVec::new();
        for y in 0..n {
            for e in 1..=t {
                for d in 1..=fast.max_dur(y).min(e) {
                    buf.clear();
                    f.span_into(&ctx, y, e - d, e, 0, &mut buf).unwrap();
                    let slow: f64 = buf.iter().map(|&(i, v)| w[i] * v).sum();
                    assert!((fast.span(y, e, d) - slow).abs() < 1e-12);
                    let m = rng.random::<f64>();
                    *counts.span_mut(y, e, d) = m;
                    for &(i, v) in &buf {
                        slow_grad[i] += m * v;
                    }
                }
            }
        }
        f.add_span_grad(&ctx, &counts, &mut fast_grad).unwrap();
        for (a, b) in fast_grad.iter().zip(&slow_grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
