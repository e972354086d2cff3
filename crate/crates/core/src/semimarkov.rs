//! Log-space semi-Markov dynamic programming shared by the segmental CRF and
//! the segment-level HMM decoder.
//!
//! A [`Graph`] is a set of states, each emitting one label for a contiguous
//! run of frames. Scores come from a [`ScoreTable`]: a span score per
//! `(label, start, end)`, a transition score per `(previous label, label)`
//! and an optional final score per label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled run of frames `start..end` (end exclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(label: usize, start: usize, end: usize) -> Self {
        Segment { label, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Last frame covered (inclusive).
    pub fn last(&self) -> usize {
        self.end - 1
    }
}

/// An ordered tiling of `0..T` by labeled segments.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation(pub Vec<Segment>);

impl Segmentation {
    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.0.last().map_or(0, |s| s.end)
    }

    /// Checks that the segments tile `0..t` without gaps or overlaps.
    pub fn validate(&self, t: usize) -> Result<()> {
        let mut pos = 0;
        for (k, s) in self.0.iter().enumerate() {
            if s.start != pos {
                return Err(Error::InvalidSegmentation(format!(
                    "segment {k} starts at {} but previous ended at {pos}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::InvalidSegmentation(format!("segment {k} is empty")));
            }
            pos = s.end;
        }
        if pos != t {
            return Err(Error::InvalidSegmentation(format!(
                "segments cover {pos} of {t} frames"
            )));
        }
        Ok(())
    }

    /// Per-frame label sequence.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.frames());
        for s in &self.0 {
            out.extend(std::iter::repeat_n(s.label, s.len()));
        }
        out
    }

    /// Collapses a frame labeling into maximal constant runs.
    pub fn from_frame_labels(labels: &[usize]) -> Self {
        let mut out: Vec<Segment> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match out.last_mut() {
                Some(s) if s.label == l => s.end = i + 1,
                _ => out.push(Segment::new(l, i, i + 1)),
            }
        }
        Segmentation(out)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Dense score tables over `T` frames.
///
/// Spans of label `y` are stored for durations `1..=max_dur(y)`; longer spans
/// are implicitly `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    frames: usize,
    n_labels: usize,
    max_dur: Vec<usize>,
    offset: Vec<usize>,
    span: Vec<f64>,
    /// `[(prev + 1) * n + label]`, row 0 is the sequence start.
    pair: Vec<f64>,
    finish: Vec<f64>,
}

impl ScoreTable {
    pub fn new(frames: usize, max_dur: &[usize]) -> Self {
        let n = max_dur.len();
        let max_dur: Vec<usize> = max_dur.iter().map(|&d| d.min(frames).max(1)).collect();
        let mut offset = Vec::with_capacity(n);
        let mut total = 0;
        for &d in &max_dur {
            offset.push(total);
            total += frames * d;
        }
        ScoreTable {
            frames,
            n_labels: n,
            max_dur,
            offset,
            span: vec![0.0; total],
            pair: vec![0.0; (n + 1) * n],
            finish: vec![0.0; n],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn max_dur(&self, label: usize) -> usize {
        self.max_dur[label]
    }

    #[inline]
    fn idx(&self, label: usize, end: usize, dur: usize) -> usize {
        debug_assert!(dur >= 1 && dur <= self.max_dur[label] && end >= dur && end <= self.frames);
        self.offset[label] + (end - 1) * self.max_dur[label] + dur - 1
    }

    /// Score of `label` spanning `end - dur .. end`.
    #[inline]
    pub fn span(&self, label: usize, end: usize, dur: usize) -> f64 {
        if dur > self.max_dur[label] {
            return f64::NEG_INFINITY;
        }
        self.span[self.idx(label, end, dur)]
    }

    #[inline]
    pub fn span_mut(&mut self, label: usize, end: usize, dur: usize) -> &mut f64 {
        let i = self.idx(label, end, dur);
        &mut self.span[i]
    }

    /// Raw span storage of one label, laid out `[(end - 1) * max_dur + dur - 1]`.
    pub fn label_spans_mut(&mut self, label: usize) -> &mut [f64] {
        let a = self.offset[label];
        let b = a + self.frames * self.max_dur[label];
        &mut self.span[a..b]
    }

    pub fn label_spans(&self, label: usize) -> &[f64] {
        let a = self.offset[label];
        &self.span[a..a + self.frames * self.max_dur[label]]
    }

    #[inline]
    pub fn pair(&self, prev: Option<usize>, label: usize) -> f64 {
        self.pair[prev.map_or(0, |p| p + 1) * self.n_labels + label]
    }

    pub fn pair_mut(&mut self, prev: Option<usize>, label: usize) -> &mut f64 {
        let n = self.n_labels;
        &mut self.pair[prev.map_or(0, |p| p + 1) * n + label]
    }

    pub fn finish(&self, label: usize) -> f64 {
        self.finish[label]
    }

    pub fn finish_mut(&mut self, label: usize) -> &mut f64 {
        &mut self.finish[label]
    }

    pub fn fill(&mut self, v: f64) {
        self.span.iter_mut().for_each(|x| *x = v);
        self.pair.iter_mut().for_each(|x| *x = v);
        self.finish.iter_mut().for_each(|x| *x = v);
    }

    /// `self += a * other` over every entry; layouts must agree.
    pub fn add_scaled(&mut self, other: &ScoreTable, a: f64) {
        assert_eq!(self.offset, other.offset, "score tables differ in layout");
        for (x, y) in self.span.iter_mut().zip(&other.span) {
            *x += a * y;
        }
        for (x, y) in self.pair.iter_mut().zip(&other.pair) {
            *x += a * y;
        }
        for (x, y) in self.finish.iter_mut().zip(&other.finish) {
            *x += a * y;
        }
    }

    /// Total score of a segmentation, `-inf` if any part is disallowed.
    pub fn path_score(&self, seg: &Segmentation) -> f64 {
        let mut prev = None;
        let mut total = 0.0;
        for s in seg.segments() {
            total += self.pair(prev, s.label) + self.span(s.label, s.end, s.len());
            prev = Some(s.label);
        }
        match prev {
            Some(l) => total + self.finish(l),
            None => f64::NEG_INFINITY,
        }
    }
}

/// Segment-level state graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    pub label: Vec<usize>,
    pub min_dur: Vec<usize>,
    pub max_dur: Vec<usize>,
    pub start: Vec<bool>,
    pub end: Vec<bool>,
    pub preds: Vec<Vec<usize>>,
}

impl Graph {
    pub fn n_states(&self) -> usize {
        self.label.len()
    }

    /// One state per label; `allowed(prev, next)` decides every transition.
    pub fn full(
        n_labels: usize,
        min_dur: &[usize],
        max_dur: &[usize],
        start: impl Fn(usize) -> bool,
        end: impl Fn(usize) -> bool,
        allowed: impl Fn(usize, usize) -> bool,
    ) -> Self {
        Graph {
            label: (0..n_labels).collect(),
            min_dur: min_dur.to_vec(),
            max_dur: max_dur.to_vec(),
            start: (0..n_labels).map(&start).collect(),
            end: (0..n_labels).map(&end).collect(),
            preds: (0..n_labels)
                .map(|k| (0..n_labels).filter(|&j| allowed(j, k)).collect())
                .collect(),
        }
    }

    /// A linear chain that visits `labels` in order. States flagged in
    /// `optional` may be skipped.
    pub fn chain(
        labels: &[usize],
        optional: &[bool],
        min_dur: &[usize],
        max_dur: &[usize],
    ) -> Self {
        let n = labels.len();
        let mut start = vec![false; n];
        let mut end = vec![false; n];
        let mut preds = vec![Vec::new(); n];
        for k in 0..n {
            // earliest reachable start: every state before k is optional
            start[k] = (0..k).all(|j| optional[j]);
            end[k] = (k + 1..n).all(|j| optional[j]);
            let mut j = k;
            while j > 0 {
                j -= 1;
                preds[k].push(j);
                if !optional[j] {
                    break;
                }
            }
            preds[k].reverse();
        }
        Graph {
            label: labels.to_vec(),
            min_dur: labels.iter().map(|&l| min_dur[l]).collect(),
            max_dur: labels.iter().map(|&l| max_dur[l]).collect(),
            start,
            end,
            preds,
        }
    }

    fn check(&self, table: &ScoreTable) -> Result<()> {
        if self.label.iter().any(|&l| l >= table.n_labels()) {
            return Err(Error::invalid("graph label outside the score table"));
        }
        if table.frames() == 0 {
            return Err(Error::empty("zero-length sequence"));
        }
        Ok(())
    }

    #[inline]
    fn dur_range(
        &self,
        k: usize,
        table: &ScoreTable,
        end: usize,
    ) -> std::ops::RangeInclusive<usize> {
        let hi = self.max_dur[k].min(table.max_dur(self.label[k])).min(end);
        self.min_dur[k].max(1)..=hi
    }
}

/// Forward-backward quantities and expected counts.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub log_z: f64,
    /// Expected span counts, same layout as the score table.
    pub span: ScoreTable,
}

struct Lattice {
    n: usize,
    /// `alpha[t * n + k]`: paths whose last segment is state k and ends at t.
    alpha: Vec<f64>,
    /// `enter[s * n + k]`: log weight of entering state k at frame s.
    enter: Vec<f64>,
}

fn forward_pass(graph: &Graph, table: &ScoreTable) -> Lattice {
    let t_len = table.frames();
    let n = graph.n_states();
    let mut alpha = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    let mut enter = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    let mut buf = Vec::new();
    for s in 0..t_len {
        for k in 0..n {
            let y = graph.label[k];
            enter[s * n + k] = if s == 0 {
                if graph.start[k] {
                    table.pair(None, y)
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                buf.clear();
                for &j in &graph.preds[k] {
                    let a = alpha[s * n + j];
                    if a > f64::NEG_INFINITY {
                        buf.push(a + table.pair(Some(graph.label[j]), y));
                    }
                }
                logsumexp(&buf)
            };
        }
        let e = s + 1;
        for k in 0..n {
            let y = graph.label[k];
            buf.clear();
            for d in graph.dur_range(k, table, e) {
                let p = enter[(e - d) * n + k];
                if p > f64::NEG_INFINITY {
                    buf.push(p + table.span(y, e, d));
                }
            }
            alpha[e * n + k] = logsumexp(&buf);
        }
    }
    Lattice { n, alpha, enter }
}

fn final_log_z(graph: &Graph, table: &ScoreTable, lat: &Lattice) -> f64 {
    let t_len = table.frames();
    let terms: Vec<f64> = (0..lat.n)
        .filter(|&k| graph.end[k])
        .map(|k| lat.alpha[t_len * lat.n + k] + table.finish(graph.label[k]))
        .collect();
    logsumexp(&terms)
}

/// Log of the summed exponentiated score over every path through the graph.
pub fn log_partition(graph: &Graph, table: &ScoreTable) -> Result<f64> {
    graph.check(table)?;
    let lat = forward_pass(graph, table);
    Ok(final_log_z(graph, table, &lat))
}

/// Expected span and transition counts under the path distribution.
///
/// Returns `Err(NoPath)` if the graph admits no path of the table's length.
pub fn marginals(graph: &Graph, table: &ScoreTable) -> Result<Marginals> {
    graph.check(table)?;
    let t_len = table.frames();
    let n = graph.n_states();
    let lat = forward_pass(graph, table);
    let log_z = final_log_z(graph, table, &lat);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::NoPath("no admissible segmentation".into()));
    }

    // beta[t * n + k]: completions after a segment of state k ends at t.
    // leave[s * n + k]: completions from entering state k at frame s.
    let mut beta = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    let mut leave = vec![f64::NEG_INFINITY; (t_len + 1) * n];
    for k in 0..n {
        if graph.end[k] {
            beta[t_len * n + k] = table.finish(graph.label[k]);
        }
    }
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, ps) in graph.preds.iter().enumerate() {
        for &j in ps {
            succs[j].push(k);
        }
    }
    let mut buf = Vec::new();
    for s in (0..t_len).rev() {
        for k in 0..n {
            let y = graph.label[k];
            buf.clear();
            let hi = graph.max_dur[k].min(table.max_dur(y)).min(t_len - s);
            for d in graph.min_dur[k].max(1)..=hi {
                let b = beta[(s + d) * n + k];
                if b > f64::NEG_INFINITY {
                    buf.push(table.span(y, s + d, d) + b);
                }
            }
            leave[s * n + k] = logsumexp(&buf);
        }
        if s == 0 {
            break;
        }
        for j in 0..n {
            buf.clear();
            for &k in &succs[j] {
                let l = leave[s * n + k];
                if l > f64::NEG_INFINITY {
                    buf.push(table.pair(Some(graph.label[j]), graph.label[k]) + l);
                }
            }
            beta[s * n + j] = logsumexp(&buf);
        }
    }

    let mut span = ScoreTable::new(t_len, &table.max_dur);
    span.fill(0.0);
    for k in 0..n {
        let y = graph.label[k];
        for e in 1..=t_len {
            let b = beta[e * n + k];
            if b == f64::NEG_INFINITY {
                continue;
            }
            for d in graph.dur_range(k, table, e) {
                let p = lat.enter[(e - d) * n + k];
                if p > f64::NEG_INFINITY {
                    *span.span_mut(y, e, d) += (p + table.span(y, e, d) + b - log_z).exp();
                }
            }
        }
        if graph.start[k] {
            *span.pair_mut(None, y) += (table.pair(None, y) + leave[k] - log_z).exp();
        }
        if graph.end[k] {
            *span.finish_mut(y) += (lat.alpha[t_len * n + k] + table.finish(y) - log_z).exp();
        }
        for s in 1..t_len {
            let l = leave[s * n + k];
            if l == f64::NEG_INFINITY {
                continue;
            }
            for &j in &graph.preds[k] {
                let a = lat.alpha[s * n + j];
                if a > f64::NEG_INFINITY {
                    let yj = graph.label[j];
                    *span.pair_mut(Some(yj), y) += (a + table.pair(Some(yj), y) + l - log_z).exp();
                }
            }
        }
    }
    Ok(Marginals { log_z, span })
}

/// A scored path through the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub score: f64,
    pub segmentation: Segmentation,
    /// Graph state visited by each segment.
    pub states: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    score: f64,
    nseg: usize,
    /// (segment start, previous state, rank in its list); `None` for the first segment.
    back: Option<(usize, usize, usize)>,
}

/// Keeps the `k` best entries, stable with respect to insertion order.
fn top_k(cands: &mut Vec<Entry>, k: usize) {
    cands.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.nseg.cmp(&b.nseg))
    });
    cands.truncate(k);
}

/// The `k` highest-scoring distinct paths, best first.
///
/// Ties are broken toward fewer segments, then lower state index, then an
/// earlier segment start.
pub fn kbest(graph: &Graph, table: &ScoreTable, k: usize) -> Result<Vec<Path>> {
    graph.check(table)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let t_len = table.frames();
    let n = graph.n_states();
    // lists[t * n + s]: best partial paths whose last segment is state s ending at t
    let mut lists: Vec<Vec<Entry>> = vec![Vec::new(); (t_len + 1) * n];
    // entry lists per (start frame, state): best ways to enter
    let mut enter: Vec<Vec<Entry>> = vec![Vec::new(); n];
    let mut enters_at: Vec<Vec<Vec<Entry>>> = Vec::with_capacity(t_len);
    let mut cands = Vec::new();
    for s in 0..t_len {
        for st in 0..n {
            let y = graph.label[st];
            cands.clear();
            if s == 0 {
                if graph.start[st] {
                    cands.push(Entry {
                        score: table.pair(None, y),
                        nseg: 0,
                        back: None,
                    });
                }
            } else {
                for &j in &graph.preds[st] {
                    let tr = table.pair(Some(graph.label[j]), y);
                    for (r, e) in lists[s * n + j].iter().enumerate() {
                        cands.push(Entry {
                            score: e.score + tr,
                            nseg: e.nseg,
                            back: Some((s, j, r)),
                        });
                    }
                }
                top_k(&mut cands, k);
            }
            enter[st] = cands.clone();
        }
        enters_at.push(std::mem::take(&mut enter));
        enter = vec![Vec::new(); n];

        let e = s + 1;
        for st in 0..n {
            let y = graph.label[st];
            cands.clear();
            for d in graph.dur_range(st, table, e) {
                let sp = table.span(y, e, d);
                if sp == f64::NEG_INFINITY {
                    continue;
                }
                for en in &enters_at[e - d][st] {
                    // segment start is recorded so the backtrace can recover it
                    let back = match en.back {
                        None => Some((e - d, usize::MAX, 0)),
                        Some(b) => Some(b),
                    };
                    cands.push(Entry {
                        score: en.score + sp,
                        nseg: en.nseg + 1,
                        back,
                    });
                }
            }
            top_k(&mut cands, k);
            lists[e * n + st] = cands.clone();
        }
    }

    let mut finals = Vec::new();
    for st in 0..n {
        if !graph.end[st] {
            continue;
        }
        let fin = table.finish(graph.label[st]);
        for (r, e) in lists[t_len * n + st].iter().enumerate() {
            finals.push((
                Entry {
                    score: e.score + fin,
                    nseg: e.nseg,
                    back: None,
                },
                st,
                r,
            ));
        }
    }
    finals.sort_by(|a, b| {
        b.0.score
            .partial_cmp(&a.0.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.nseg.cmp(&b.0.nseg))
    });
    finals.truncate(k);
    if finals.is_empty() {
        return Err(Error::NoPath("no admissible segmentation".into()));
    }

    let out = finals
        .into_iter()
        .map(|(fe, st, r)| {
            let mut segs = Vec::new();
            let mut states = Vec::new();
            let (mut t, mut s, mut rank) = (t_len, st, r);
            loop {
                let entry = lists[t * n + s][rank];
                let (start, prev, prank) = entry.back.expect("segment entries carry a backpointer");
                segs.push(Segment::new(graph.label[s], start, t));
                states.push(s);
                if prev == usize::MAX {
                    break;
                }
                // entries for a segment at `start` point at the predecessor's list at `start`
                t = start;
                s = prev;
                rank = prank;
            }
            segs.reverse();
            states.reverse();
            Path {
                score: fe.score,
                segmentation: Segmentation(segs),
                states,
            }
        })
        .collect();
    Ok(out)
}

/// Single best path.
pub fn viterbi(graph: &Graph, table: &ScoreTable) -> Result<Path> {
    Ok(kbest(graph, table, 1)?.remove(0))
}
