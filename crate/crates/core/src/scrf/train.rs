//! Conditional log-likelihood training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureContext, SparseVec};
use super::model::{group_by_labels, SegmentalModel};
use crate::error::{Error, Result};
use crate::metrics::align_tokens;
use crate::semimarkov::{self, logsumexp, ScoreTable, Segmentation};

/// One training sequence.
#[derive(Clone, Debug)]
pub enum Example {
    /// Sum over every admissible segmentation; the reference is a label
    /// sequence whose segmentation is latent.
    Full {
        ctx: FeatureContext,
        labels: Vec<usize>,
    },
    /// Sum restricted to lattice candidates with precomputed features.
    Lattice(LatticeExample),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeExample {
    pub features: Vec<SparseVec>,
    /// Whether each candidate carries the reference label sequence.
    pub is_reference: Vec<bool>,
}

/// What to do when no lattice candidate carries the reference labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingReference {
    AddForcedAlignment,
    #[default]
    AddGroundTruth,
    UseBestMatch,
    DropExample,
    Fail,
}

/// Builds a lattice training example, applying `policy` when the reference
/// label sequence is absent. Returns `Ok(None)` for a dropped example.
pub fn lattice_example(
    model: &SegmentalModel,
    ctx: &FeatureContext,
    candidates: &[Segmentation],
    reference: &Segmentation,
    forced_alignment: Option<&Segmentation>,
    policy: MissingReference,
) -> Result<Option<LatticeExample>> {
    if candidates.is_empty() {
        return Err(Error::empty("lattice"));
    }
    let mut cands: Vec<Segmentation> = candidates.to_vec();
    let mut target = reference.labels();
    if !cands.iter().any(|c| c.labels() == target) {
        match policy {
            MissingReference::AddGroundTruth => cands.push(reference.clone()),
            MissingReference::AddForcedAlignment => {
                let fa = forced_alignment.ok_or_else(|| {
                    Error::invalid("policy needs a forced alignment of the reference")
                })?;
                if fa.labels() != target {
                    return Err(Error::invalid("forced alignment carries different labels"));
                }
                cands.push(fa.clone());
            }
            MissingReference::UseBestMatch => {
                let as_str = |l: &[usize]| l.iter().map(|x| x.to_string()).collect::<Vec<_>>();
                let r = as_str(&target);
                let best = group_by_labels(&cands)
                    .into_iter()
                    .map(|(labels, _)| (align_tokens(&r, &as_str(&labels)).errors(), labels))
                    .min_by_key(|x| x.0)
                    .expect("non-empty lattice");
                target = best.1;
            }
            MissingReference::DropExample => return Ok(None),
            MissingReference::Fail => return Err(Error::ReferenceNotInLattice),
        }
    }
    let features = cands
        .iter()
        .map(|c| model.segmentation_features(ctx, c))
        .collect::<Result<Vec<_>>>()?;
    let is_reference = cands.iter().map(|c| c.labels() == target).collect();
    Ok(Some(LatticeExample {
        features,
        is_reference,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub step: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l1: f64,
    pub l2: f64,
    pub seed: u64,
    /// Evaluate the exact objective after every epoch.
    pub log_objective: bool,
    /// Per-coordinate AdaGrad steps `step / sqrt(Σ g²)` instead of the
    /// decaying global step.
    pub adagrad: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            step: 0.1,
            epochs: 10,
            batch_size: 8,
            l1: 0.0,
            l2: 1e-4,
            seed: 1,
            log_objective: true,
            adagrad: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularized mean objective after each epoch (index 0 is the start).
    pub objective: Vec<f64>,
    /// Examples whose reference admits no segmentation.
    pub skipped: usize,
}

/// `log p(reference | O)` and its gradient for one example, or `None` when
/// the reference is unreachable.
pub fn example_gradient(model: &SegmentalModel, ex: &Example) -> Result<Option<(f64, Vec<f64>)>> {
    match ex {
        Example::Full { ctx, labels } => {
            let table = model.score_table(ctx)?;
            let chain = model.chain(labels, ctx.frames)?;
            let num = match semimarkov::marginals(&chain, &table) {
                Ok(m) => m,
                Err(Error::NoPath(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let full = semimarkov::marginals(&model.graph(ctx.frames), &table)?;
            let mut counts = num.span;
            counts.add_scaled(&full.span, -1.0);
            let grad = table_gradient(model, ctx, &counts)?;
            Ok(Some((num.log_z - full.log_z, grad)))
        }
        Example::Lattice(lat) => {
            let scores: Vec<f64> = lat.features.iter().map(|f| model.dot(f)).collect();
            let num: Vec<f64> = scores
                .iter()
                .zip(&lat.is_reference)
                .filter(|x| *x.1)
                .map(|x| *x.0)
                .collect();
            if num.is_empty() {
                return Ok(None);
            }
            let lz_num = logsumexp(&num);
            let lz = logsumexp(&scores);
            let mut grad = vec![0.0; model.dim()];
            for ((f, &s), &r) in lat.features.iter().zip(&scores).zip(&lat.is_reference) {
                let mut c = -(s - lz).exp();
                if r {
                    c += (s - lz_num).exp();
                }
                for &(i, v) in f {
                    grad[i] += c * v;
                }
            }
            Ok(Some((lz_num - lz, grad)))
        }
    }
}

/// Gradient contribution `Σ counts · f` over spans and label pairs.
fn table_gradient(
    model: &SegmentalModel,
    ctx: &FeatureContext,
    counts: &ScoreTable,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; model.dim()];
    let mut buf = SparseVec::new();
    for (f, off) in model.features.iter().zip(model.offsets()) {
        let dim = f.dim(model.n_labels);
        f.add_span_grad(ctx, counts, &mut grad[off..off + dim])?;
        if f.has_pair_part() {
            for prev in std::iter::once(None).chain((0..model.n_labels).map(Some)) {
                for y in 0..model.n_labels {
                    let c = counts.pair(prev, y);
                    if c == 0.0 {
                        continue;
                    }
                    buf.clear();
                    f.pair_into(ctx, prev, y, off, &mut buf);
                    for &(i, v) in &buf {
                        grad[i] += c * v;
                    }
                }
            }
        }
    }
    Ok(grad)
}

fn per_example(
    model: &SegmentalModel,
    data: &[Example],
    idx: &[usize],
) -> Result<Vec<Option<(f64, Vec<f64>)>>> {
    idx.par_iter()
        .map(|&i| example_gradient(model, &data[i]))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Mean log-likelihood minus `l2‖λ‖² + l1‖λ‖₁`, with its (sub)gradient.
pub fn objective_and_gradient(
    model: &SegmentalModel,
    data: &[Example],
    l1: f64,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let results = per_example(model, data, &idx)?;
    let used = results.iter().filter(|r| r.is_some()).count();
    if used == 0 {
        return Err(Error::empty(
            "no training example has a reachable reference",
        ));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; model.dim()];
    for (ll, g) in results.into_iter().flatten() {
        total += ll;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = used as f64;
    let mut obj = total / n;
    for (g, &w) in grad.iter_mut().zip(&model.weights) {
        *g = *g / n - 2.0 * l2 * w - l1 * w.signum() * f64::from(u8::from(w != 0.0));
        obj -= l2 * w * w + l1 * w.abs();
    }
    Ok((obj, grad))
}

/// Stochastic gradient ascent with step `step / (1 + epoch)`, or AdaGrad
/// steps when `opts.adagrad` is set. The L1 term is applied as a shrink
/// toward zero that never crosses it.
pub fn train(
    model: &mut SegmentalModel,
    data: &[Example],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::empty("training set"));
    }
    if opts.batch_size == 0 || opts.step < 0.0 || opts.l1 < 0.0 || opts.l2 < 0.0 {
        return Err(Error::invalid(
            "training options must be non-negative with a positive batch size",
        ));
    }
    let mut report = TrainReport::default();
    let log = |m: &SegmentalModel, r: &mut TrainReport| -> Result<()> {
        if opts.log_objective {
            r.objective
                .push(objective_and_gradient(m, data, opts.l1, opts.l2)?.0);
        }
        Ok(())
    };
    log(model, &mut report)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut skipped = vec![false; data.len()];
    let mut sq = vec![0.0; model.dim()];
    for epoch in 0..opts.epochs {
        let eta = opts.step / (1.0 + epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            let results = per_example(model, data, batch)?;
            let mut grad = vec![0.0; model.dim()];
            let mut used = 0;
            for (&i, r) in batch.iter().zip(results) {
                match r {
                    Some((_, g)) => {
                        used += 1;
                        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    None => skipped[i] = true,
                }
            }
            if used == 0 {
                continue;
            }
            let n = used as f64;
            for ((w, g), q) in model.weights.iter_mut().zip(&grad).zip(&mut sq) {
                let d = g / n - 2.0 * opts.l2 * *w;
                let rate = if opts.adagrad {
                    *q += d * d;
                    if *q == 0.0 {
                        continue;
                    }
                    opts.step / q.sqrt()
                } else {
                    eta
                };
                let mut v = *w + rate * d;
                if opts.l1 > 0.0 {
                    let shrunk = v.abs() - rate * opts.l1;
                    v = if shrunk > 0.0 {
                        v.signum() * shrunk
                    } else {
                        0.0
                    };
                }
                *w = v;
            }
        }
        log(model, &mut report)?;
    }
    report.skipped = skipped.iter().filter(|&&s| s).count();
    Ok(report)
}
