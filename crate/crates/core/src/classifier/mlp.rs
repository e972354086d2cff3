//! Feed-forward ReLU networks with a softmax output, trained by minibatch SGD.
//!
//! A network may carry two adaptation layers: a square affine map on each
//! static frame descriptor applied before windowing (LIN) and an affine map
//! on the output logits (LON).

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `y = x W + b` with `W` stored `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn identity(n: usize) -> Self {
        Dense {
            w: Array2::eye(n),
            b: Array1::zeros(n),
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..limit)),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Which parameter groups an optimizer may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub lin: bool,
    pub hidden: bool,
    pub output: bool,
    pub lon: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        lin: true,
        hidden: true,
        output: true,
        lon: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// Frames per input window; inputs are `window * frame_dim` long.
    pub window: usize,
    pub frame_dim: usize,
    pub lin: Option<Dense>,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    pub lon: Option<Dense>,
    pub classes: Vec<String>,
}

/// Intermediate values kept for backpropagation.
struct Cache {
    input: Array2<f64>,
    /// Input to each layer in `layers`.
    acts: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

pub(crate) fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

impl Mlp {
    /// Randomly initialized network with the given hidden sizes.
    pub fn new(
        window: usize,
        frame_dim: usize,
        hidden: &[usize],
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if window == 0 || frame_dim == 0 || classes.is_empty() {
            return Err(Error::invalid(
                "network needs a positive input size and at least one class",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = window * frame_dim;
        for &h in hidden {
            layers.push(Dense::random(prev, h, &mut rng));
            prev = h;
        }
        layers.push(Dense::random(prev, classes.len(), &mut rng));
        Ok(Mlp {
            window,
            frame_dim,
            lin: None,
            layers,
            lon: None,
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.window * self.frame_dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn apply_lin(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.lin {
            None => x.clone(),
            Some(lin) => {
                let b = x.nrows();
                let flat = x
                    .to_shape((b * self.window, self.frame_dim))
                    .expect("contiguous batch")
                    .to_owned();
                lin.forward(&flat)
                    .into_shape_with_order((b, self.window * self.frame_dim))
                    .expect("contiguous batch")
            }
        }
    }

    fn forward(&self, x: &Array2<f64>, dropout: f64, rng: Option<&mut ChaCha8Rng>) -> Cache {
        let mut rng = rng;
        let input = x.clone();
        let mut h = self.apply_lin(x);
        let n_hidden = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        let mut masks = Vec::with_capacity(n_hidden);
        for layer in &self.layers[..n_hidden] {
            let a = layer.forward(&h);
            let mut out = a.mapv(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if dropout > 0.0 => {
                    let keep = 1.0 - dropout;
                    let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            acts.push(std::mem::replace(&mut h, out));
            pre.push(a);
            masks.push(mask);
        }
        let mut logits = self.layers[n_hidden].forward(&h);
        acts.push(h);
        if let Some(lon) = &self.lon {
            let z = lon.forward(&logits);
            acts.push(std::mem::replace(&mut logits, z));
        }
        let probs = softmax_rows(&logits);
        Cache {
            input,
            acts,
            pre,
            masks,
            logits,
            probs,
        }
    }

    /// Output logits for a batch of input windows.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.forward(x, 0.0, None).logits)
    }

    /// Class distributions for a batch of input windows.
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.forward(x, 0.0, None).probs)
    }

    /// Class distribution for one input window.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(x.len())?;
        let batch = x.to_owned().insert_axis(Axis(0));
        Ok(self.forward(&batch, 0.0, None).probs.row(0).to_owned())
    }

    /// Per-frame posteriors of a descriptor sequence, windowed with replicate padding.
    pub fn predict_sequence(&self, seq: &Array2<f64>) -> Result<Array2<f64>> {
        if seq.ncols() != self.frame_dim {
            return Err(Error::DimensionMismatch {
                expected: self.frame_dim,
                got: seq.ncols(),
            });
        }
        let t = seq.nrows();
        let mut x = Array2::zeros((t, self.input_dim()));
        for i in 0..t {
            fill_window(
                seq,
                i,
                self.window,
                x.row_mut(i).as_slice_mut().expect("contiguous"),
            );
        }
        self.predict_batch(&x)
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Mutable references to every parameter layer in a fixed order, paired
    /// with whether it is trainable and whether its weights are decayed.
    fn params_mut(&mut self, tr: Trainable) -> Vec<(&mut Dense, bool)> {
        let n_hidden = self.layers.len() - 1;
        let mut out = Vec::new();
        if let Some(l) = self.lin.as_mut() {
            out.push((l, tr.lin));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((l, if i < n_hidden { tr.hidden } else { tr.output }));
        }
        if let Some(l) = self.lon.as_mut() {
            out.push((l, tr.lon));
        }
        out
    }

    fn params(&self) -> Vec<&Dense> {
        let mut out: Vec<&Dense> = Vec::new();
        out.extend(self.lin.iter());
        out.extend(self.layers.iter());
        out.extend(self.lon.iter());
        out
    }

    /// Mean cross-entropy plus `wd/2` times the squared norm of every
    /// trainable weight matrix, with gradients for all parameter layers
    /// (frozen ones get zero).
    pub fn loss_and_grad(
        &self,
        x: &Array2<f64>,
        y: &[usize],
        weight_decay: f64,
        tr: Trainable,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Dense>)> {
        self.check_input(x.ncols())?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::invalid("batch inputs and labels differ in length"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= self.n_classes()) {
            return Err(Error::invalid(format!(
                "label {bad} outside {} classes",
                self.n_classes()
            )));
        }
        let cache = self.forward(x, dropout, rng);
        let b = y.len() as f64;
        let mut loss = 0.0;
        let mut dz = cache.probs.clone();
        for (i, &c) in y.iter().enumerate() {
            loss -= cache.probs[[i, c]].max(1e-300).ln();
            dz[[i, c]] -= 1.0;
        }
        loss /= b;
        dz /= b;

        let n_hidden = self.layers.len() - 1;
        let mut grads_rev: Vec<Dense> = Vec::new();
        let mut acts = cache.acts;
        if let Some(lon) = &self.lon {
            let z = acts.pop().expect("lon input");
            grads_rev.push(Dense {
                w: z.t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            dz = dz.dot(&lon.w.t());
        }
        for k in (0..=n_hidden).rev() {
            let layer = &self.layers[k];
            let a_in = acts.pop().expect("layer input");
            grads_rev.push(Dense {
                w: a_in.t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            if k == 0 && self.lin.is_none() {
                break;
            }
            let mut dh = dz.dot(&layer.w.t());
            if k > 0 {
                if let Some(m) = &cache.masks[k - 1] {
                    dh *= m;
                }
                let pre = &cache.pre[k - 1];
                dh.zip_mut_with(pre, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            dz = dh;
        }
        if self.lin.is_some() {
            let bsz = x.nrows();
            let xr = cache
                .input
                .to_shape((bsz * self.window, self.frame_dim))
                .expect("contiguous")
                .to_owned();
            let dr = dz
                .to_shape((bsz * self.window, self.frame_dim))
                .expect("contiguous")
                .to_owned();
            grads_rev.push(Dense {
                w: xr.t().dot(&dr),
                b: dr.sum_axis(Axis(0)),
            });
        }
        grads_rev.reverse();

        let mut reg = 0.0;
        let flags = self.trainable_flags(tr);
        for ((p, g), on) in self
            .params()
            .into_iter()
            .zip(grads_rev.iter_mut())
            .zip(flags)
        {
            if on {
                reg += 0.5 * weight_decay * p.w.iter().map(|v| v * v).sum::<f64>();
                g.w.scaled_add(weight_decay, &p.w);
            } else {
                g.w.fill(0.0);
                g.b.fill(0.0);
            }
        }
        Ok((loss + reg, grads_rev))
    }

    fn trainable_flags(&self, tr: Trainable) -> Vec<bool> {
        let n_hidden = self.layers.len() - 1;
        let mut out = Vec::new();
        if self.lin.is_some() {
            out.push(tr.lin);
        }
        out.extend(
            (0..self.layers.len()).map(|i| if i < n_hidden { tr.hidden } else { tr.output }),
        );
        if self.lon.is_some() {
            out.push(tr.lon);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MlpFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MlpFile = serde_json::from_str(text)?;
        f.into_model()
    }
}

/// Copies the window of frames centered on `t` into `out`, replicating the
/// first and last frames beyond the sequence ends.
pub fn fill_window(seq: &Array2<f64>, t: usize, w: usize, out: &mut [f64]) {
    let d = seq.ncols();
    let half = (w / 2) as isize;
    let last = seq.nrows() as isize - 1;
    for k in 0..w {
        let i = (t as isize + k as isize - half).clamp(0, last) as usize;
        let row = seq.row(i);
        let dst = &mut out[k * d..(k + 1) * d];
        match row.as_slice() {
            Some(src) => dst.copy_from_slice(src),
            None => dst.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b),
        }
    }
}

/// Anything that can supply `(input vector, class)` pairs by index.
pub trait Examples: Sync {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Writes example `i` into `out` and returns its class.
    fn fill(&self, i: usize, out: &mut [f64]) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labeled frames of descriptor sequences, windowed on demand. Frames with
/// no label are skipped.
#[derive(Clone, Debug, Default)]
pub struct FrameDataset {
    pub window: usize,
    pub sequences: Vec<Array2<f64>>,
    index: Vec<(u32, u32, u32)>,
}

impl FrameDataset {
    pub fn new(window: usize) -> Self {
        FrameDataset {
            window,
            ..Default::default()
        }
    }

    pub fn push(&mut self, seq: Array2<f64>, labels: &[Option<usize>]) -> Result<()> {
        if seq.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: seq.nrows(),
                got: labels.len(),
            });
        }
        if let Some(first) = self.sequences.first() {
            if first.ncols() != seq.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: first.ncols(),
                    got: seq.ncols(),
                });
            }
        }
        let k = self.sequences.len() as u32;
        for (t, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                self.index.push((k, t as u32, *c as u32));
            }
        }
        self.sequences.push(seq);
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.index.iter().map(|e| e.2 as usize)
    }
}

impl Examples for FrameDataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn input_dim(&self) -> usize {
        self.window * self.sequences.first().map_or(0, |s| s.ncols())
    }

    fn fill(&self, i: usize, out: &mut [f64]) -> usize {
        let (k, t, c) = self.index[i];
        fill_window(&self.sequences[k as usize], t as usize, self.window, out);
        c as usize
    }
}

/// Plain fixed-length examples.
#[derive(Clone, Debug, Default)]
pub struct VectorDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Examples for VectorDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    fn fill(&self, i: usize, out: &mut [f64]) -> usize {
        out.copy_from_slice(&self.inputs[i]);
        self.labels[i]
    }
}

fn gather(data: &dyn Examples, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let d = data.input_dim();
    let mut x = Array2::zeros((idx.len(), d));
    let mut y = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        y.push(data.fill(i, x.row_mut(r).into_slice().expect("contiguous")));
    }
    (x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Fraction of the examples held out to pick the best epoch.
    pub valid_fraction: f64,
    /// Epochs without held-out improvement before the learning rate halves.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 100,
            max_epochs: 10,
            weight_decay: 1e-5,
            dropout: 0.0,
            valid_fraction: 0.1,
            patience: 2,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0
            || self.momentum < 0.0
            || self.weight_decay < 0.0
            || self.batch_size == 0
        {
            return Err(Error::invalid(
                "training rates must be non-negative and the batch size positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::invalid(
                "dropout and validation fraction must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,learning_rate,train_loss,valid_loss,valid_error\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.learning_rate, e.train_loss, e.valid_loss, e.valid_error
            );
        }
        out
    }
}

/// Which held-out statistic picks the retained epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    ErrorRate,
    Loss,
}

/// Mean cross-entropy (no regularizer) and error percentage.
pub fn evaluate(model: &Mlp, data: &dyn Examples, idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::empty("evaluation set"));
    }
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for chunk in idx.chunks(512) {
        let (x, y) = gather(data, chunk);
        let p = model.predict_batch(&x)?;
        for (i, &c) in y.iter().enumerate() {
            let row = p.row(i);
            loss -= row[c].max(1e-300).ln();
            if argmax(row) != c {
                wrong += 1;
            }
        }
    }
    Ok((
        loss / idx.len() as f64,
        100.0 * wrong as f64 / idx.len() as f64,
    ))
}

pub(crate) fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Minibatch SGD with momentum from the model's current parameters.
///
/// `valid` is evaluated after every epoch; the learning rate halves after
/// `patience` epochs without improvement and the best epoch's parameters are
/// returned. Epoch 0 (the starting point) is a candidate.
pub fn sgd(
    mut model: Mlp,
    train: &dyn Examples,
    train_idx: &[usize],
    valid: &dyn Examples,
    valid_idx: &[usize],
    cfg: &TrainConfig,
    tr: Trainable,
    select: Selection,
) -> Result<(Mlp, LearningCurve)> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::empty("training set"));
    }
    if train.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: train.input_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let key = |l: f64, e: f64| match select {
        Selection::ErrorRate => (e, l),
        Selection::Loss => (l, e),
    };
    let (vl, ve) = evaluate(&model, valid, valid_idx)?;
    let mut curve = LearningCurve {
        epochs: vec![EpochRecord {
            epoch: 0,
            learning_rate: cfg.learning_rate,
            train_loss: f64::NAN,
            valid_loss: vl,
            valid_error: ve,
        }],
        best_epoch: 0,
    };
    let mut best = (key(vl, ve), model.clone());
    let mut lr = cfg.learning_rate;
    let mut stale = 0;
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut velocity: Vec<Dense> = model
        .params()
        .iter()
        .map(|p| Dense::zeros(p.w.nrows(), p.w.ncols()))
        .collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = gather(train, batch);
            let (loss, grads) =
                model.loss_and_grad(&x, &y, cfg.weight_decay, tr, cfg.dropout, Some(&mut rng))?;
            total += loss * batch.len() as f64;
            for (((p, on), v), g) in model
                .params_mut(tr)
                .into_iter()
                .zip(velocity.iter_mut())
                .zip(&grads)
            {
                if !on {
                    continue;
                }
                v.w *= cfg.momentum;
                v.w.scaled_add(-lr, &g.w);
                v.b *= cfg.momentum;
                v.b.scaled_add(-lr, &g.b);
                p.w += &v.w;
                p.b += &v.b;
            }
        }
        let (vl, ve) = evaluate(&model, valid, valid_idx)?;
        curve.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: total / order.len() as f64,
            valid_loss: vl,
            valid_error: ve,
        });
        let k = key(vl, ve);
        if k < best.0 {
            best = (k, model.clone());
            curve.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    Ok((best.1, curve))
}

/// Splits `0..n` into shuffled training and held-out index lists.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let k = ((n as f64) * fraction).round() as usize;
    let k = k.min(n.saturating_sub(1));
    let valid = idx[..k].to_vec();
    let train = idx[k..].to_vec();
    (train, valid)
}

/// Trains a freshly initialized network on `data`.
pub fn train_mlp(
    data: &dyn Examples,
    window: usize,
    hidden: &[usize],
    classes: Vec<String>,
    cfg: &TrainConfig,
) -> Result<(Mlp, LearningCurve)> {
    if data.is_empty() {
        return Err(Error::empty("training set"));
    }
    let dim = data.input_dim();
    if dim % window != 0 {
        return Err(Error::invalid("input size is not a multiple of the window"));
    }
    let model = Mlp::new(window, dim / window, hidden, classes, cfg.seed)?;
    let (train, mut valid) = holdout_split(data.len(), cfg.valid_fraction, cfg.seed);
    if valid.is_empty() {
        valid = train.clone();
    }
    sgd(
        model,
        data,
        &train,
        data,
        &valid,
        cfg,
        Trainable::ALL,
        Selection::ErrorRate,
    )
}

/// `100 × (1 − accuracy)` of argmax predictions.
pub fn frame_error_rate(model: &Mlp, data: &dyn Examples) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(evaluate(model, data, &idx)?.1)
}

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DenseFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    schema_version: u32,
    window: usize,
    frame_dim: usize,
    classes: Vec<String>,
    lin: Option<DenseFile>,
    layers: Vec<DenseFile>,
    lon: Option<DenseFile>,
}

impl From<&Dense> for DenseFile {
    fn from(d: &Dense) -> Self {
        DenseFile {
            rows: d.w.nrows(),
            cols: d.w.ncols(),
            weights: d.w.iter().copied().collect(),
            bias: d.b.to_vec(),
        }
    }
}

impl DenseFile {
    fn into_dense(self) -> Result<Dense> {
        if self.bias.len() != self.cols {
            return Err(Error::Format("bias length differs from layer width".into()));
        }
        let w = Array2::from_shape_vec((self.rows, self.cols), self.weights)
            .map_err(|e| Error::Format(format!("layer weights: {e}")))?;
        Ok(Dense {
            w,
            b: Array1::from(self.bias),
        })
    }
}

impl From<&Mlp> for MlpFile {
    fn from(m: &Mlp) -> Self {
        MlpFile {
            schema_version: SCHEMA_VERSION,
            window: m.window,
            frame_dim: m.frame_dim,
            classes: m.classes.clone(),
            lin: m.lin.as_ref().map(DenseFile::from),
            layers: m.layers.iter().map(DenseFile::from).collect(),
            lon: m.lon.as_ref().map(DenseFile::from),
        }
    }
}

impl MlpFile {
    fn into_model(self) -> Result<Mlp> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported model schema {}",
                self.schema_version
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .map(DenseFile::into_dense)
            .collect::<Result<Vec<_>>>()?;
        let m = Mlp {
            window: self.window,
            frame_dim: self.frame_dim,
            lin: self.lin.map(DenseFile::into_dense).transpose()?,
            layers,
            lon: self.lon.map(DenseFile::into_dense).transpose()?,
            classes: self.classes,
        };
        let mut prev = m.input_dim();
        for l in &m.layers {
            if l.w.nrows() != prev {
                return Err(Error::Format("layer sizes do not chain".into()));
            }
            prev = l.w.ncols();
        }
        if prev != m.classes.len() {
            return Err(Error::Format(
                "output width differs from class count".into(),
            ));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{with_adapters, AdaptMode};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn perturbable(m: &mut Mlp) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        if let Some(l) = m.lin.as_mut() {
            out.extend(l.w.iter_mut());
            out.extend(l.b.iter_mut());
        }
        for l in m.layers.iter_mut() {
            out.extend(l.w.iter_mut());
            out.extend(l.b.iter_mut());
        }
        if let Some(l) = m.lon.as_mut() {
            out.extend(l.w.iter_mut());
            out.extend(l.b.iter_mut());
        }
        out
    }

    fn flat_grads(g: &[Dense]) -> Vec<f64> {
        g.iter()
            .flat_map(|d| d.w.iter().chain(d.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = Mlp::new(3, 4, &[6, 5], names(4), 2).unwrap();
        let mut model = with_adapters(&base, AdaptMode::LinLon);
        for p in perturbable(&mut model) {
            *p += rng.random_range(-0.3..0.3);
        }
        let x = Array2::from_shape_simple_fn((5, 12), || rng.random_range(-1.0..1.0));
        let y = vec![0, 3, 1, 2, 3];
        let wd = 1e-3;
        let (_, g) = model
            .loss_and_grad(&x, &y, wd, Trainable::ALL, 0.0, None)
            .unwrap();
        let g = flat_grads(&g);
        let n = g.len();
        for k in 0..25 {
            let i = (k * 7919) % n;
            let h = 1e-5;
            let mut plus = model.clone();
            *perturbable(&mut plus)[i] += h;
            let mut minus = model.clone();
            *perturbable(&mut minus)[i] -= h;
            let lp = plus
                .loss_and_grad(&x, &y, wd, Trainable::ALL, 0.0, None)
                .unwrap()
                .0;
            let lm = minus
                .loss_and_grad(&x, &y, wd, Trainable::ALL, 0.0, None)
                .unwrap()
                .0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut m = Mlp::new(1, 3, &[4], names(28), 0).unwrap();
        for l in m.layers.iter_mut() {
            l.w.fill(0.0);
        }
        let p = m.predict(ArrayView1::from(&[0.3, -1.0, 2.0])).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 28.0).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_shift_is_invisible() {
        let m = Mlp::new(1, 3, &[4], names(5), 4).unwrap();
        let mut shifted = m.clone();
        shifted.layers.last_mut().unwrap().b += 3.25;
        let x = [0.1, 0.7, -0.4];
        let a = m.predict(ArrayView1::from(&x)).unwrap();
        let b = shifted.predict(ArrayView1::from(&x)).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adapter_identity_is_bitwise() {
        let m = Mlp::new(3, 4, &[8, 8], names(6), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((20, 12), || rng.random_range(-2.0..2.0));
        let base = m.logits(&x).unwrap();
        for mode in [AdaptMode::LinUp, AdaptMode::LinLon] {
            let a = with_adapters(&m, mode);
            assert_eq!(a.logits(&x).unwrap(), base);
        }
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let mut data = VectorDataset::default();
        for i in 0..10 {
            data.inputs.push(vec![i as f64, 1.0]);
            data.labels.push(usize::from(i >= 5));
        }
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let (m, _) = train_mlp(&data, 1, &[3], names(2), &cfg).unwrap();
        assert_eq!(m, Mlp::new(1, 2, &[3], names(2), cfg.seed).unwrap());
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        // two clusters split by the line x0 + x1 = 0
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = VectorDataset::default();
        while data.inputs.len() < 20 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + b).abs() < 0.2 {
                continue;
            }
            data.inputs.push(vec![a, b]);
            data.labels.push(usize::from(a + b > 0.0));
        }
        let cfg = TrainConfig {
            max_epochs: 50,
            batch_size: 5,
            learning_rate: 0.1,
            valid_fraction: 0.0,
            ..Default::default()
        };
        let (m, _) = train_mlp(&data, 1, &[8], names(2), &cfg).unwrap();
        assert_eq!(frame_error_rate(&m, &data).unwrap(), 0.0);
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let mut data = FrameDataset::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..4 {
            let seq = Array2::from_shape_simple_fn((12, 2), || rng.random_range(-1.0..1.0));
            let labels: Vec<Option<usize>> = (0..12).map(|t| Some(t % 3)).collect();
            data.push(seq, &labels).unwrap();
        }
        let cfg = TrainConfig {
            max_epochs: 3,
            dropout: 0.2,
            ..Default::default()
        };
        let (a, ca) = train_mlp(&data, 3, &[5], names(3), &cfg).unwrap();
        let (b, cb) = train_mlp(&data, 3, &[5], names(3), &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ca.to_csv(), cb.to_csv());
        assert_eq!(Mlp::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn window_replicates_edges() {
        let seq = Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let mut out = [0.0; 3];
        fill_window(&seq, 0, 3, &mut out);
        assert_eq!(out, [1.0, 1.0, 2.0]);
        let mut one = [0.0; 1];
        fill_window(&seq, 1, 1, &mut one);
        assert_eq!(one, [2.0]);
    }
}
