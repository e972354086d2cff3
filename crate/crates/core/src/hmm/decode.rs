use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::LetterHmm;
use crate::alphabet::{LetterAlphabet, BOS, EOS};
use crate::error::{Error, Result};
use crate::lm::BigramLm;
use crate::semimarkov::{self, Graph, ScoreTable, Segment, Segmentation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Scale on the LM log-probability of each label transition.
    pub lm_weight: f64,
    /// Subtracted once per hypothesized letter.
    pub insertion_penalty: f64,
    /// Hypotheses kept by [`nbest`].
    pub nbest: usize,
    /// Letters the decoder may output; all of them when `None`.
    pub vocabulary: Option<Vec<usize>>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            lm_weight: 1.0,
            insertion_penalty: 0.0,
            nbest: 10,
            vocabulary: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Labels including any boundary silences.
    pub labels: Vec<usize>,
    pub segmentation: Segmentation,
    pub score: f64,
}

impl Hypothesis {
    pub fn letters(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != BOS && l != EOS)
            .collect()
    }
}

/// N-best hypotheses, best first, with the 1-best frame labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLattice {
    pub hypotheses: Vec<Hypothesis>,
    pub baseline: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    labels: Vec<String>,
    spans: Vec<(usize, usize)>,
    score: f64,
}

impl CandidateLattice {
    pub fn segmentations(&self) -> Vec<Segmentation> {
        self.hypotheses
            .iter()
            .map(|h| h.segmentation.clone())
            .collect()
    }

    /// One JSON object per hypothesis: labels, `[start, end)` spans and score.
    pub fn to_jsonl(&self, alphabet: &LetterAlphabet) -> Result<String> {
        let mut out = String::new();
        for h in &self.hypotheses {
            let line = Line {
                labels: h
                    .labels
                    .iter()
                    .map(|&l| alphabet.symbol(l))
                    .collect::<Result<_>>()?,
                spans: h
                    .segmentation
                    .segments()
                    .iter()
                    .map(|s| (s.start, s.end))
                    .collect(),
                score: h.score,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, alphabet: &LetterAlphabet) -> Result<Self> {
        let mut hypotheses = Vec::new();
        for raw in text.lines().filter(|l| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw)?;
            if line.labels.len() != line.spans.len() {
                return Err(Error::Format("label and span counts differ".into()));
            }
            let labels: Vec<usize> = line
                .labels
                .iter()
                .map(|s| alphabet.letter_index(s))
                .collect::<Result<_>>()?;
            let segmentation = Segmentation(
                labels
                    .iter()
                    .zip(&line.spans)
                    .map(|(&l, &(s, e))| Segment::new(l, s, e))
                    .collect(),
            );
            segmentation.validate(segmentation.frames())?;
            hypotheses.push(Hypothesis {
                labels,
                segmentation,
                score: line.score,
            });
        }
        let first = hypotheses.first().ok_or_else(|| Error::empty("lattice"))?;
        let t = first.segmentation.frames();
        if hypotheses.iter().any(|h| h.segmentation.frames() != t) {
            return Err(Error::Format(
                "hypotheses cover different frame counts".into(),
            ));
        }
        let baseline = first.segmentation.frame_labels();
        Ok(CandidateLattice {
            hypotheses,
            baseline,
        })
    }
}

/// Best-path score of `label` over every span, emissions and transitions
/// included (the last state's exit too). Spans shorter than the label's
/// state count are `-inf`; transition and final scores are zero.
pub fn span_scores(hmm: &LetterHmm, x: &Array2<f64>) -> Result<ScoreTable> {
    let t_len = x.nrows();
    if t_len == 0 {
        return Err(Error::empty("zero-length sequence"));
    }
    let (emit, offsets) = hmm.emission_table(x)?;
    let total: usize = hmm.models.iter().map(|m| m.states.len()).sum();
    let max: Vec<usize> = (0..hmm.n_labels())
        .map(|y| max_frames(hmm, y, t_len))
        .collect();
    let mut table = ScoreTable::new(t_len, &max);
    table.fill(f64::NEG_INFINITY);
    for y in 0..hmm.n_labels() {
        *table.finish_mut(y) = 0.0;
        *table.pair_mut(None, y) = 0.0;
        for p in 0..hmm.n_labels() {
            *table.pair_mut(Some(p), y) = 0.0;
        }
    }
    let ninf = f64::NEG_INFINITY;
    for (y, m) in hmm.models.iter().enumerate() {
        let s = m.states.len();
        let ls: Vec<f64> = (0..s).map(|i| m.log_self(i)).collect();
        let ln: Vec<f64> = (0..s).map(|i| m.log_next(i)).collect();
        let maxd = table.max_dur(y);
        let mut delta = vec![ninf; s];
        let mut next = vec![ninf; s];
        for start in 0..t_len {
            delta.iter_mut().for_each(|d| *d = ninf);
            delta[0] = emit[start * total + offsets[y]];
            for d in 1..=maxd.min(t_len - start) {
                let t = start + d - 1;
                if d > 1 {
                    for i in 0..s {
                        let mut v = delta[i] + ls[i];
                        if i > 0 {
                            v = v.max(delta[i - 1] + ln[i - 1]);
                        }
                        next[i] = v + emit[t * total + offsets[y] + i];
                    }
                    std::mem::swap(&mut delta, &mut next);
                }
                if d >= s {
                    *table.span_mut(y, t + 1, d) = delta[s - 1] + ln[s - 1];
                }
            }
        }
    }
    Ok(table)
}

fn max_frames(hmm: &LetterHmm, label: usize, t_len: usize) -> usize {
    if label == BOS || label == EOS {
        t_len
    } else {
        hmm.config.max_letter_frames.min(t_len)
    }
}

fn allowed(prev: usize, next: usize) -> bool {
    prev != next && prev != EOS && next != BOS && !(prev == BOS && next == EOS)
}

fn decoding_graph(hmm: &LetterHmm, t_len: usize, cfg: &DecodeConfig) -> Result<Graph> {
    let n = hmm.n_labels();
    let mut active = vec![true; n];
    if let Some(v) = &cfg.vocabulary {
        if v.is_empty() {
            return Err(Error::empty("vocabulary"));
        }
        active = vec![false; n];
        active[BOS] = true;
        active[EOS] = true;
        for &l in v {
            if l >= n || l == BOS || l == EOS {
                return Err(Error::UnknownSymbol(format!("#{l}")));
            }
            active[l] = true;
        }
    }
    let min: Vec<usize> = (0..n).map(|y| hmm.states(y)).collect();
    let max: Vec<usize> = (0..n).map(|y| max_frames(hmm, y, t_len)).collect();
    Ok(Graph::full(
        n,
        &min,
        &max,
        |y| active[y] && y != EOS,
        |y| active[y] && y != BOS,
        |a, b| active[a] && active[b] && allowed(a, b),
    ))
}

/// Adds LM-weighted transition scores and the per-letter penalty.
fn add_transitions(table: &mut ScoreTable, lm: &BigramLm, cfg: &DecodeConfig) -> Result<()> {
    let n = table.n_labels();
    if lm.alphabet().class_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lm.alphabet().class_count(),
        });
    }
    let w = cfg.lm_weight;
    let lp = |a: usize, b: usize| -> Result<f64> {
        Ok(if w == 0.0 { 0.0 } else { w * lm.logprob(a, b)? })
    };
    let ninf = f64::NEG_INFINITY;
    for y in 0..n {
        let pen = if y == BOS || y == EOS {
            0.0
        } else {
            cfg.insertion_penalty
        };
        *table.pair_mut(None, y) = match y {
            BOS => 0.0,
            EOS => ninf,
            _ => lp(BOS, y)? - pen,
        };
        for p in 0..n {
            *table.pair_mut(Some(p), y) = if allowed(p, y) { lp(p, y)? - pen } else { ninf };
        }
        *table.finish_mut(y) = match y {
            BOS => ninf,
            EOS => 0.0,
            _ => lp(y, EOS)?,
        };
    }
    Ok(())
}

fn to_hypothesis(p: semimarkov::Path) -> Hypothesis {
    Hypothesis {
        labels: p.segmentation.labels(),
        score: p.score,
        segmentation: p.segmentation,
    }
}

/// Jointly best label sequence and segmentation under the composite
/// silence-letters-silence graph. Either silence may be skipped.
pub fn viterbi_decode(
    hmm: &LetterHmm,
    lm: &BigramLm,
    x: &Array2<f64>,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let mut one = cfg.clone();
    one.nbest = 1;
    Ok(nbest(hmm, lm, x, &one)?.hypotheses.remove(0))
}

/// The `cfg.nbest` best distinct (label sequence, segmentation) pairs.
pub fn nbest(
    hmm: &LetterHmm,
    lm: &BigramLm,
    x: &Array2<f64>,
    cfg: &DecodeConfig,
) -> Result<CandidateLattice> {
    if cfg.nbest == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let mut table = span_scores(hmm, x)?;
    add_transitions(&mut table, lm, cfg)?;
    let graph = decoding_graph(hmm, x.nrows(), cfg)?;
    let hypotheses: Vec<Hypothesis> = semimarkov::kbest(&graph, &table, cfg.nbest)?
        .into_iter()
        .map(to_hypothesis)
        .collect();
    let baseline = hypotheses[0].segmentation.frame_labels();
    Ok(CandidateLattice {
        hypotheses,
        baseline,
    })
}

/// Best segmentation of a known letter sequence, with optional boundary
/// silences. No LM is applied.
pub fn forced_align(hmm: &LetterHmm, x: &Array2<f64>, letters: &[usize]) -> Result<Hypothesis> {
    if letters.is_empty() {
        return Err(Error::empty("letter sequence"));
    }
    let n = hmm.n_labels();
    if let Some(&bad) = letters.iter().find(|&&l| l >= n || l == BOS || l == EOS) {
        return Err(Error::UnknownSymbol(format!("#{bad}")));
    }
    let t_len = x.nrows();
    let need: usize = letters.iter().map(|&l| hmm.states(l)).sum();
    if t_len < need {
        return Err(Error::NoPath(format!(
            "{t_len} frames cannot hold {need} letter states"
        )));
    }
    let table = span_scores(hmm, x)?;
    let mut labels = vec![BOS];
    labels.extend_from_slice(letters);
    labels.push(EOS);
    let mut optional = vec![false; labels.len()];
    optional[0] = true;
    optional[labels.len() - 1] = true;
    let min: Vec<usize> = (0..n).map(|y| hmm.states(y)).collect();
    let max: Vec<usize> = (0..n).map(|y| max_frames(hmm, y, t_len)).collect();
    let graph = Graph::chain(&labels, &optional, &min, &max);
    Ok(to_hypothesis(semimarkov::viterbi(&graph, &table)?))
}
