use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureContext, SparseVec};
use crate::alphabet::{BOS, EOS};
use crate::error::{Error, Result};
use crate::semimarkov::{self, Graph, ScoreTable, Segmentation};

/// Which label sequences a model may produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Any sequence over the labels.
    Free,
    /// Optional `<s>`, one or more letters, optional `</s>`; boundary labels
    /// appear only at the ends and are exempt from the duration bound.
    Word,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentalModel {
    pub n_labels: usize,
    pub topology: Topology,
    /// Longest non-silence segment.
    pub max_dur: usize,
    /// Shortest non-silence segment.
    pub min_dur: usize,
    /// Whether a label may follow itself.
    pub allow_repeats: bool,
    pub features: Vec<Feature>,
    pub weights: Vec<f64>,
}

/// A decoded label sequence with its segmentation and score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub labels: Vec<usize>,
    pub segmentation: Segmentation,
    pub score: f64,
}

/// How the scores of segmentations sharing a label sequence are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Log-sum-exp, treating the segmentation as latent.
    Sum,
    /// Best single segmentation.
    Max,
}

impl SegmentalModel {
    pub fn new(
        n_labels: usize,
        topology: Topology,
        max_dur: usize,
        min_dur: usize,
        allow_repeats: bool,
        features: Vec<Feature>,
    ) -> Result<Self> {
        if max_dur == 0 || min_dur == 0 || min_dur > max_dur {
            return Err(Error::invalid("segment durations need 1 <= min <= max"));
        }
        if topology == Topology::Word && n_labels <= EOS {
            return Err(Error::invalid("word topology needs the boundary labels"));
        }
        if features.is_empty() {
            return Err(Error::invalid("a model needs at least one feature"));
        }
        let dim = features.iter().map(|f| f.dim(n_labels)).sum();
        Ok(SegmentalModel {
            n_labels,
            topology,
            max_dur,
            min_dur,
            allow_repeats,
            features,
            weights: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Start offset of each feature's weight block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.features.len());
        let mut o = 0;
        for f in &self.features {
            out.push(o);
            o += f.dim(self.n_labels);
        }
        out
    }

    /// Feature names and dimensions, stored alongside the weights.
    pub fn manifest(&self) -> Vec<(String, usize)> {
        self.features
            .iter()
            .map(|f| (f.name(), f.dim(self.n_labels)))
            .collect()
    }

    pub fn is_silence(&self, label: usize) -> bool {
        self.topology == Topology::Word && (label == BOS || label == EOS)
    }

    fn durations(&self, frames: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n_labels)
            .map(|y| {
                if self.is_silence(y) {
                    (1, frames.max(1))
                } else {
                    (self.min_dur, self.max_dur)
                }
            })
            .unzip()
    }

    pub fn allowed(&self, prev: usize, next: usize) -> bool {
        if prev == next && !self.allow_repeats {
            return false;
        }
        match self.topology {
            Topology::Free => true,
            Topology::Word => prev != EOS && next != BOS && !(prev == BOS && next == EOS),
        }
    }

    fn may_start(&self, y: usize) -> bool {
        self.topology == Topology::Free || y != EOS
    }

    fn may_end(&self, y: usize) -> bool {
        self.topology == Topology::Free || y != BOS
    }

    pub fn graph(&self, frames: usize) -> Graph {
        let (min, max) = self.durations(frames);
        Graph::full(
            self.n_labels,
            &min,
            &max,
            |y| self.may_start(y),
            |y| self.may_end(y),
            |a, b| self.allowed(a, b),
        )
    }

    /// Chain graph visiting exactly `labels`.
    pub fn chain(&self, labels: &[usize], frames: usize) -> Result<Graph> {
        self.check_labels(labels)?;
        let (min, max) = self.durations(frames);
        Ok(Graph::chain(labels, &vec![false; labels.len()], &min, &max))
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::empty("label sequence"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_labels) {
            return Err(Error::UnknownSymbol(format!("#{bad}")));
        }
        if !self.may_start(labels[0]) || !self.may_end(labels[labels.len() - 1]) {
            return Err(Error::invalid("label sequence violates the model topology"));
        }
        if labels.windows(2).any(|w| !self.allowed(w[0], w[1])) {
            return Err(Error::invalid("label sequence violates the model topology"));
        }
        Ok(())
    }

    /// Span, transition and final scores of every admissible segment.
    pub fn score_table(&self, ctx: &FeatureContext) -> Result<ScoreTable> {
        let frames = ctx.frames;
        if frames == 0 {
            return Err(Error::empty("zero-length sequence"));
        }
        let (_, max) = self.durations(frames);
        let mut table = ScoreTable::new(frames, &max);
        let mut buf = SparseVec::new();
        for (f, off) in self.features.iter().zip(self.offsets()) {
            let w = &self.weights[off..off + f.dim(self.n_labels)];
            f.add_span_scores(ctx, w, &mut table)?;
            if f.has_pair_part() {
                for prev in std::iter::once(None).chain((0..self.n_labels).map(Some)) {
                    for y in 0..self.n_labels {
                        buf.clear();
                        f.pair_into(ctx, prev, y, 0, &mut buf);
                        *table.pair_mut(prev, y) += buf.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
                    }
                }
            }
        }
        Ok(table)
    }

    fn check_segmentation(&self, seg: &Segmentation, frames: usize) -> Result<()> {
        seg.validate(frames)?;
        self.check_labels(&seg.labels())?;
        for s in seg.segments() {
            if !self.is_silence(s.label) && (s.len() > self.max_dur || s.len() < self.min_dur) {
                return Err(Error::InvalidSegmentation(format!(
                    "segment of {} frames outside {}..={}",
                    s.len(),
                    self.min_dur,
                    self.max_dur
                )));
            }
        }
        Ok(())
    }

    /// Summed feature vector of a segmentation, sorted by index.
    pub fn segmentation_features(
        &self,
        ctx: &FeatureContext,
        seg: &Segmentation,
    ) -> Result<SparseVec> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut buf = SparseVec::new();
        let offsets = self.offsets();
        let mut prev = None;
        for s in seg.segments() {
            buf.clear();
            for (f, &off) in self.features.iter().zip(&offsets) {
                f.span_into(ctx, s.label, s.start, s.end, off, &mut buf)?;
                f.pair_into(ctx, prev, s.label, off, &mut buf);
            }
            for &(i, v) in &buf {
                *acc.entry(i).or_insert(0.0) += v;
            }
            prev = Some(s.label);
        }
        Ok(acc.into_iter().collect())
    }

    pub fn dot(&self, f: &SparseVec) -> f64 {
        f.iter().map(|&(i, v)| self.weights[i] * v).sum()
    }

    /// `Σ_edges λ · f(edge)` for a valid segmentation.
    pub fn score(&self, seg: &Segmentation, ctx: &FeatureContext) -> Result<f64> {
        self.check_segmentation(seg, ctx.frames)?;
        Ok(self.dot(&self.segmentation_features(ctx, seg)?))
    }

    pub fn log_partition(&self, ctx: &FeatureContext) -> Result<f64> {
        let table = self.score_table(ctx)?;
        semimarkov::log_partition(&self.graph(ctx.frames), &table)
    }

    /// Log of the summed score of every segmentation carrying `labels`.
    pub fn log_partition_labels(&self, ctx: &FeatureContext, labels: &[usize]) -> Result<f64> {
        let table = self.score_table(ctx)?;
        semimarkov::log_partition(&self.chain(labels, ctx.frames)?, &table)
    }

    pub fn viterbi(&self, ctx: &FeatureContext) -> Result<Decoded> {
        Ok(self.kbest(ctx, 1)?.remove(0))
    }

    /// The `k` best (label sequence, segmentation) pairs.
    pub fn kbest(&self, ctx: &FeatureContext, k: usize) -> Result<Vec<Decoded>> {
        let table = self.score_table(ctx)?;
        kbest_from_table(&self.graph(ctx.frames), &table, k)
    }

    /// Best segmentation of a known label sequence.
    pub fn forced_align(&self, ctx: &FeatureContext, labels: &[usize]) -> Result<Decoded> {
        let table = self.score_table(ctx)?;
        let path = semimarkov::viterbi(&self.chain(labels, ctx.frames)?, &table)?;
        Ok(Decoded {
            labels: labels.to_vec(),
            score: path.score,
            segmentation: path.segmentation,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            manifest: self.manifest(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        let expect = f.model.manifest();
        if expect != f.manifest {
            return Err(Error::ManifestMismatch(format!(
                "stored {:?}, features give {:?}",
                f.manifest, expect
            )));
        }
        if f.model.weights.len()
            != f.model
                .features
                .iter()
                .map(|x| x.dim(f.model.n_labels))
                .sum::<usize>()
        {
            return Err(Error::ManifestMismatch(
                "weight count differs from feature dimensions".into(),
            ));
        }
        Ok(f.model)
    }
}

pub(crate) fn kbest_from_table(
    graph: &Graph,
    table: &ScoreTable,
    k: usize,
) -> Result<Vec<Decoded>> {
    Ok(semimarkov::kbest(graph, table, k)?
        .into_iter()
        .map(|p| Decoded {
            labels: p.segmentation.labels(),
            score: p.score,
            segmentation: p.segmentation,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    manifest: Vec<(String, usize)>,
    model: SegmentalModel,
}

/// Candidate segmentations grouped by label sequence, in first-seen order.
pub fn group_by_labels(candidates: &[Segmentation]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let labels = c.labels();
        match groups.iter_mut().find(|g| g.0 == labels) {
            Some(g) => g.1.push(i),
            None => groups.push((labels, vec![i])),
        }
    }
    groups
}

/// Best label sequence among lattice candidates; ties go to the earliest.
pub fn rescore(
    model: &SegmentalModel,
    candidates: &[Segmentation],
    ctx: &FeatureContext,
    agg: Aggregation,
) -> Result<Decoded> {
    if candidates.is_empty() {
        return Err(Error::empty("lattice"));
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| Ok(model.dot(&model.segmentation_features(ctx, c)?)))
        .collect::<Result<_>>()?;
    let mut best: Option<Decoded> = None;
    for (labels, members) in group_by_labels(candidates) {
        let s: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
        let total = match agg {
            Aggregation::Sum => semimarkov::logsumexp(&s),
            Aggregation::Max => s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        if best.as_ref().is_none_or(|b| total > b.score) {
            let top =
                members
                    .iter()
                    .copied()
                    .fold(members[0], |a, i| if scores[i] > scores[a] { i } else { a });
            best = Some(Decoded {
                labels,
                segmentation: candidates[top].clone(),
                score: total,
            });
        }
    }
    Ok(best.expect("non-empty lattice"))
}

/// Drops boundary labels from a label sequence.
pub fn strip_boundaries(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .copied()
        .filter(|&l| l != BOS && l != EOS)
        .collect()
}
