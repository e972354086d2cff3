use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{DiagGmm, GmmStats};
use crate::alphabet::{BOS, EOS};
use crate::error::{Error, Result};
use crate::semimarkov::{log_add, Segmentation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub letter_states: usize,
    pub silence_states: usize,
    pub components: usize,
    pub var_floor: f64,
    /// Longest letter span considered while decoding.
    pub max_letter_frames: usize,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            letter_states: 3,
            silence_states: 9,
            components: 2,
            var_floor: 1e-4,
            max_letter_frames: 80,
        }
    }
}

impl HmmConfig {
    fn check(&self) -> Result<()> {
        if self.letter_states == 0 || self.silence_states == 0 || self.components == 0 {
            return Err(Error::invalid(
                "state and component counts must be positive",
            ));
        }
        if self.var_floor <= 0.0 || self.max_letter_frames < self.letter_states {
            return Err(Error::invalid(
                "variance floor must be positive and letters must fit their states",
            ));
        }
        Ok(())
    }
}

/// Left-to-right chain of emitting states for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub states: Vec<DiagGmm>,
    /// Self-loop probability of each state; the rest advances (or exits from
    /// the last state).
    pub self_loop: Vec<f64>,
}

impl LabelModel {
    pub fn log_self(&self, i: usize) -> f64 {
        self.self_loop[i].ln()
    }

    pub fn log_next(&self, i: usize) -> f64 {
        (1.0 - self.self_loop[i]).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterHmm {
    pub config: HmmConfig,
    pub dim: usize,
    /// Indexed by label; `<s>` and `</s>` carry the silence topology.
    pub models: Vec<LabelModel>,
}

/// Whether ground-truth spans are available during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Each label model is trained on its own spans.
    Segmented,
    /// Embedded training over whole-word composite models.
    FlatStart,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    /// Total log-likelihood before each iteration and after the last.
    pub log_likelihood: Vec<f64>,
    /// Training units too short for their state chain.
    pub skipped: usize,
}

fn states_for(cfg: &HmmConfig, label: usize) -> usize {
    if label == BOS || label == EOS {
        cfg.silence_states
    } else {
        cfg.letter_states
    }
}

fn global_moments(sequences: &[Array2<f64>], floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = sequences
        .first()
        .ok_or_else(|| Error::empty("training sequences"))?
        .ncols();
    let mut stats = GmmStats::new(1, dim);
    for s in sequences {
        if s.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.ncols(),
            });
        }
        for row in s.rows() {
            stats.add(0, row.as_slice().expect("standard layout"), 1.0);
        }
    }
    if stats.occ[0] == 0.0 {
        return Err(Error::empty("training frames"));
    }
    let mut g = DiagGmm::single(vec![0.0; dim], vec![1.0; dim]);
    stats.update(&mut g, floor);
    Ok((g.means.remove(0), g.vars.remove(0)))
}

impl LetterHmm {
    pub fn n_labels(&self) -> usize {
        self.models.len()
    }

    pub fn states(&self, label: usize) -> usize {
        self.models[label].states.len()
    }

    /// Every state shares the global mean and variance, split into
    /// `components`; transitions are uniform.
    pub fn flat_start(n_labels: usize, sequences: &[Array2<f64>], cfg: &HmmConfig) -> Result<Self> {
        cfg.check()?;
        if n_labels <= EOS {
            return Err(Error::invalid("label set must include the boundary labels"));
        }
        let (mean, var) = global_moments(sequences, cfg.var_floor)?;
        let g = DiagGmm::single(mean.clone(), var).mix_up(cfg.components);
        let models = (0..n_labels)
            .map(|y| {
                let n = states_for(cfg, y);
                LabelModel {
                    states: vec![g.clone(); n],
                    self_loop: vec![0.5; n],
                }
            })
            .collect();
        Ok(LetterHmm {
            config: *cfg,
            dim: mean.len(),
            models,
        })
    }

    /// Splits each labeled span uniformly over its label's states (frame `i`
    /// of `n` goes to state `i * S / n`) and fits one Gaussian per state,
    /// then mixes up to `components`. States that receive no frames keep the
    /// flat-start values.
    pub fn segmented_init(
        n_labels: usize,
        sequences: &[Array2<f64>],
        segmentations: &[Segmentation],
        cfg: &HmmConfig,
    ) -> Result<Self> {
        let mut hmm = LetterHmm::flat_start(n_labels, sequences, cfg)?;
        let dim = hmm.dim;
        let mut stats: Vec<Vec<GmmStats>> = (0..n_labels)
            .map(|y| vec![GmmStats::new(1, dim); states_for(cfg, y)])
            .collect();
        let mut stay: Vec<Vec<f64>> = stats.iter().map(|s| vec![0.0; s.len()]).collect();
        for (x, seg) in sequences.iter().zip(segmentations) {
            for s in seg.segments() {
                let n_states = states_for(cfg, s.label);
                let n = s.len();
                if n < n_states {
                    continue;
                }
                for i in 0..n {
                    let k = i * n_states / n;
                    let row = x.row(s.start + i);
                    stats[s.label][k].add(0, row.as_slice().expect("standard layout"), 1.0);
                }
                for k in 0..n_states {
                    let frames = (0..n).filter(|i| i * n_states / n == k).count();
                    stay[s.label][k] += frames as f64 - 1.0;
                }
            }
        }
        for y in 0..n_labels {
            for k in 0..stats[y].len() {
                let occ = stats[y][k].occ[0];
                if occ == 0.0 {
                    continue;
                }
                let mut g = DiagGmm::single(vec![0.0; dim], vec![1.0; dim]);
                stats[y][k].update(&mut g, cfg.var_floor);
                hmm.models[y].states[k] = g.mix_up(cfg.components);
                hmm.models[y].self_loop[k] = stay[y][k] / occ;
            }
        }
        Ok(hmm)
    }

    /// Log emission density of every state at every frame, laid out
    /// `[t * total + offset(label) + state]`.
    pub fn emission_table(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Vec<usize>)> {
        if x.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        let mut offsets = Vec::with_capacity(self.n_labels());
        let mut total = 0;
        for m in &self.models {
            offsets.push(total);
            total += m.states.len();
        }
        let mut out = vec![0.0; x.nrows() * total];
        out.par_chunks_mut(total.max(1))
            .enumerate()
            .for_each(|(t, row)| {
                let obs = x.row(t).to_vec();
                let mut i = 0;
                for m in &self.models {
                    for g in &m.states {
                        row[i] = g.log_density(&obs);
                        i += 1;
                    }
                }
            });
        Ok((out, offsets))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hmm: LetterHmm = serde_json::from_str(text)?;
        hmm.validate()?;
        Ok(hmm)
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.models {
            if m.states.len() != m.self_loop.len() || m.states.is_empty() {
                return Err(Error::Format("state count mismatch".into()));
            }
            if m.self_loop.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Format(
                    "transition probability outside [0, 1]".into(),
                ));
            }
            for g in &m.states {
                let w: f64 = g.weights.iter().sum();
                if (w - 1.0).abs() > 1e-9
                    || g.means.iter().chain(&g.vars).any(|v| v.len() != self.dim)
                {
                    return Err(Error::Format("malformed mixture".into()));
                }
                if g.vars.iter().flatten().any(|&v| v < self.config.var_floor) {
                    return Err(Error::Format("variance below floor".into()));
                }
            }
        }
        Ok(())
    }
}

/// One training unit: frames `start..end` of a sequence explained by the
/// concatenated state chains of `labels`.
struct Unit {
    seq: usize,
    start: usize,
    end: usize,
    labels: Vec<usize>,
}

struct UnitStats {
    ll: f64,
    /// Per chain position: (label, state, stats, self count, advance count).
    states: Vec<(usize, usize, GmmStats, f64, f64)>,
}

/// Forward-backward over a left-to-right chain that must start in its first
/// state and exit from its last. Returns the log-likelihood, state
/// posteriors `[t * s + i]` and expected self/advance counts.
pub(crate) fn chain_posteriors(
    emit: &[f64],
    log_self: &[f64],
    log_next: &[f64],
) -> Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let s = log_self.len();
    let t_len = emit.len() / s;
    if t_len < s {
        return None;
    }
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s];
    alpha[0] = emit[0];
    for t in 1..t_len {
        for i in 0..s {
            let mut a = alpha[(t - 1) * s + i] + log_self[i];
            if i > 0 {
                a = log_add(a, alpha[(t - 1) * s + i - 1] + log_next[i - 1]);
            }
            alpha[t * s + i] = a + emit[t * s + i];
        }
    }
    let ll = alpha[(t_len - 1) * s + s - 1] + log_next[s - 1];
    if !ll.is_finite() {
        return None;
    }
    let mut beta = vec![ninf; t_len * s];
    beta[(t_len - 1) * s + s - 1] = log_next[s - 1];
    for t in (0..t_len - 1).rev() {
        for i in 0..s {
            let mut b = log_self[i] + emit[(t + 1) * s + i] + beta[(t + 1) * s + i];
            if i + 1 < s {
                b = log_add(
                    b,
                    log_next[i] + emit[(t + 1) * s + i + 1] + beta[(t + 1) * s + i + 1],
                );
            }
            beta[t * s + i] = b;
        }
    }
    let gamma: Vec<f64> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a + b - ll).exp())
        .collect();
    let mut stay = vec![0.0; s];
    let mut go = vec![0.0; s];
    for t in 0..t_len - 1 {
        for i in 0..s {
            let a = alpha[t * s + i];
            if a == ninf {
                continue;
            }
            stay[i] += (a + log_self[i] + emit[(t + 1) * s + i] + beta[(t + 1) * s + i] - ll).exp();
            if i + 1 < s {
                go[i] += (a + log_next[i] + emit[(t + 1) * s + i + 1] + beta[(t + 1) * s + i + 1]
                    - ll)
                    .exp();
            }
        }
    }
    go[s - 1] += 1.0;
    Some((ll, gamma, stay, go))
}

fn unit_stats(hmm: &LetterHmm, x: &Array2<f64>, unit: &Unit) -> Option<UnitStats> {
    let chain: Vec<(usize, usize)> = unit
        .labels
        .iter()
        .flat_map(|&y| (0..hmm.states(y)).map(move |k| (y, k)))
        .collect();
    let s = chain.len();
    let t_len = unit.end - unit.start;
    let mut emit = vec![0.0; t_len * s];
    for t in 0..t_len {
        let obs = x.row(unit.start + t).to_vec();
        for (i, &(y, k)) in chain.iter().enumerate() {
            emit[t * s + i] = hmm.models[y].states[k].log_density(&obs);
        }
    }
    let log_self: Vec<f64> = chain
        .iter()
        .map(|&(y, k)| hmm.models[y].log_self(k))
        .collect();
    let log_next: Vec<f64> = chain
        .iter()
        .map(|&(y, k)| hmm.models[y].log_next(k))
        .collect();
    let (ll, gamma, stay, go) = chain_posteriors(&emit, &log_self, &log_next)?;
    let mut states: Vec<(usize, usize, GmmStats, f64, f64)> = chain
        .iter()
        .enumerate()
        .map(|(i, &(y, k))| {
            (
                y,
                k,
                GmmStats::new(hmm.config.components, hmm.dim),
                stay[i],
                go[i],
            )
        })
        .collect();
    let mut buf = Vec::new();
    for t in 0..t_len {
        let row = x.row(unit.start + t);
        let obs = row.as_slice().expect("standard layout");
        for (i, st) in states.iter_mut().enumerate() {
            let g = gamma[t * s + i];
            st.2.accumulate(&hmm.models[st.0].states[st.1], obs, g, &mut buf);
        }
    }
    Some(UnitStats { ll, states })
}

fn build_units(
    hmm: &LetterHmm,
    sequences: &[Array2<f64>],
    transcriptions: &[Vec<usize>],
    segmentations: Option<&[Segmentation]>,
) -> Result<Vec<Unit>> {
    let mut units = Vec::new();
    match segmentations {
        Some(segs) => {
            if segs.len() != sequences.len() {
                return Err(Error::DimensionMismatch {
                    expected: sequences.len(),
                    got: segs.len(),
                });
            }
            for (i, (x, seg)) in sequences.iter().zip(segs).enumerate() {
                seg.validate(x.nrows())?;
                for s in seg.segments() {
                    if s.label >= hmm.n_labels() {
                        return Err(Error::UnknownSymbol(format!("#{}", s.label)));
                    }
                    units.push(Unit {
                        seq: i,
                        start: s.start,
                        end: s.end,
                        labels: vec![s.label],
                    });
                }
            }
        }
        None => {
            for (i, (x, letters)) in sequences.iter().zip(transcriptions).enumerate() {
                if letters.is_empty() {
                    return Err(Error::empty("transcription"));
                }
                if let Some(&bad) = letters
                    .iter()
                    .find(|&&l| l >= hmm.n_labels() || l == BOS || l == EOS)
                {
                    return Err(Error::UnknownSymbol(format!("#{bad}")));
                }
                let mut labels = vec![BOS];
                labels.extend_from_slice(letters);
                labels.push(EOS);
                units.push(Unit {
                    seq: i,
                    start: 0,
                    end: x.nrows(),
                    labels,
                });
            }
        }
    }
    Ok(units)
}

/// One E-step. Returns the total log-likelihood, the number of units
/// without a path and the accumulated statistics.
fn expectation(
    hmm: &LetterHmm,
    sequences: &[Array2<f64>],
    units: &[Unit],
) -> (f64, usize, Vec<Vec<(GmmStats, f64, f64)>>) {
    let per_unit: Vec<Option<UnitStats>> = units
        .par_iter()
        .map(|u| unit_stats(hmm, &sequences[u.seq], u))
        .collect();
    let mut acc: Vec<Vec<(GmmStats, f64, f64)>> = hmm
        .models
        .iter()
        .map(|m| {
            m.states
                .iter()
                .map(|_| (GmmStats::new(hmm.config.components, hmm.dim), 0.0, 0.0))
                .collect()
        })
        .collect();
    let mut ll = 0.0;
    let mut skipped = 0;
    for u in per_unit {
        match u {
            Some(u) => {
                ll += u.ll;
                for (y, k, st, stay, go) in u.states {
                    let a = &mut acc[y][k];
                    a.0.merge(&st);
                    a.1 += stay;
                    a.2 += go;
                }
            }
            None => skipped += 1,
        }
    }
    (ll, skipped, acc)
}

fn maximization(hmm: &mut LetterHmm, acc: &[Vec<(GmmStats, f64, f64)>]) {
    let floor = hmm.config.var_floor;
    for (m, a) in hmm.models.iter_mut().zip(acc) {
        for (k, (stats, stay, go)) in a.iter().enumerate() {
            stats.update(&mut m.states[k], floor);
            if stay + go > 0.0 {
                m.self_loop[k] = stay / (stay + go);
            }
        }
    }
}

/// Baum-Welch training. Segmented mode starts from [`LetterHmm::segmented_init`]
/// and trains each label on its spans; flat-start mode runs embedded
/// re-estimation over `<s> letters </s>` composites.
pub fn train_em(
    sequences: &[Array2<f64>],
    transcriptions: &[Vec<usize>],
    segmentations: Option<&[Segmentation]>,
    n_labels: usize,
    cfg: &HmmConfig,
    iters: usize,
) -> Result<(LetterHmm, EmReport)> {
    if sequences.is_empty() {
        return Err(Error::empty("training sequences"));
    }
    if transcriptions.len() != sequences.len() {
        return Err(Error::DimensionMismatch {
            expected: sequences.len(),
            got: transcriptions.len(),
        });
    }
    let mut hmm = match segmentations {
        Some(segs) => LetterHmm::segmented_init(n_labels, sequences, segs, cfg)?,
        None => LetterHmm::flat_start(n_labels, sequences, cfg)?,
    };
    let units = build_units(&hmm, sequences, transcriptions, segmentations)?;
    let mut report = EmReport::default();
    for it in 0..=iters {
        let (ll, skipped, acc) = expectation(&hmm, sequences, &units);
        if skipped == units.len() {
            return Err(Error::NoPath(
                "no training unit fits its state chain".into(),
            ));
        }
        report.log_likelihood.push(ll);
        report.skipped = skipped;
        if it < iters {
            maximization(&mut hmm, &acc);
        }
    }
    Ok((hmm, report))
}
