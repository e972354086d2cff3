//! The recognition protocol on a synthetic corpus: signer-dependent,
//! signer-independent and adapted recognizers, iterated forced-alignment
//! adaptation and a two-pass segmental cascade.
//!
//! The recognizer is an MLP letter classifier over windows of descriptors
//! feeding a first-pass segmental CRF with a bigram letter LM. Adaptation
//! only touches the classifier; the segmental model stays signer-independent.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::{LetterAlphabet, NUM_LETTERS};
use crate::classifier::{
    adapt, holdout_split, sgd, AdaptMode, Examples, FrameDataset, LearningCurve, Mlp, Selection,
    TrainConfig, Trainable, VectorDataset,
};
use crate::error::{Error, Result};
use crate::lm::{default_lexicon, BigramLm};
use crate::metrics::{score_corpus, CorpusScore};
use crate::scrf::{
    self, lattice_example, rescore, strip_boundaries, thirds_summary, Aggregation, Decoded,
    Example, Feature, FeatureContext, MissingReference, SegmentalModel, Topology, TrainOptions,
};
use crate::semimarkov::{Segment, Segmentation};
use crate::synthgen::{
    derive_seed, generate_corpus, make_signers, Corpus, SignerSpec, SynthConfig,
};

/// Frame classes: the 26 letters plus `<s>` and `</s>`.
pub const FRAME_CLASSES: usize = NUM_LETTERS + 2;

/// Frame class of a model label; doubled tokens map to their letter.
pub fn frame_class(alphabet: &LetterAlphabet, label: usize) -> usize {
    alphabet.base_letter(label).unwrap_or(label)
}

pub fn frame_class_names() -> Vec<String> {
    let plain = LetterAlphabet::new();
    (0..FRAME_CLASSES)
        .map(|c| plain.symbol(c).expect("plain alphabet symbol"))
        .collect()
}

/// Segmentation whose boundaries sit midway between consecutive peaks. A
/// frame exactly halfway belongs to the earlier segment.
pub fn peak_segmentation(labels: &[usize], peaks: &[usize], frames: usize) -> Result<Segmentation> {
    if labels.is_empty() || labels.len() != peaks.len() {
        return Err(Error::invalid("need one peak per label"));
    }
    if peaks.windows(2).any(|p| p[0] >= p[1]) || peaks[peaks.len() - 1] >= frames {
        return Err(Error::invalid("peaks must increase inside the sequence"));
    }
    let mut segs = Vec::with_capacity(labels.len());
    let mut start = 0;
    for (i, &l) in labels.iter().enumerate() {
        let end = match peaks.get(i + 1) {
            Some(&next) => (peaks[i] + next) / 2 + 1,
            None => frames,
        };
        segs.push(Segment::new(l, start, end));
        start = end;
    }
    Ok(Segmentation(segs))
}

/// One recorded word with its ground truth.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub signer: usize,
    pub word: String,
    /// Labels with the boundary silences.
    pub labels: Vec<usize>,
    pub peaks: Vec<usize>,
    pub truth: Segmentation,
    pub descriptors: Array2<f64>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn gt_segmentation(&self) -> Result<Segmentation> {
        peak_segmentation(&self.labels, &self.peaks, self.frames())
    }
}

pub fn utterances(corpus: &Corpus) -> Vec<Utterance> {
    corpus
        .items
        .iter()
        .zip(&corpus.manifest.entries)
        .map(|(w, e)| Utterance {
            signer: e.signer,
            word: w.word.clone(),
            labels: w.labels.clone(),
            peaks: w.peaks.clone(),
            truth: w.segmentation.clone(),
            descriptors: w.descriptors.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Frames per input window (odd).
    pub window: usize,
    pub hidden: Vec<usize>,
    /// Every n-th frame is a training example.
    pub frame_stride: usize,
    pub train: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            window: 9,
            hidden: vec![96],
            frame_stride: 2,
            train: TrainConfig {
                max_epochs: 8,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrfConfig {
    pub max_dur: usize,
    pub min_dur: usize,
    /// LM feature as a log-probability rather than a probability.
    pub lm_log: bool,
    pub train: TrainOptions,
}

impl Default for ScrfConfig {
    fn default() -> Self {
        ScrfConfig {
            max_dur: 40,
            min_dur: 2,
            lm_log: true,
            train: TrainOptions {
                step: 0.5,
                epochs: 2,
                log_objective: false,
                adagrad: true,
                ..Default::default()
            },
        }
    }
}

/// Where adaptation frame labels come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Midpoints between ground-truth peaks.
    GroundTruth,
    /// Forced alignment with the current recognizer.
    ForcedAlignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Share of the test signer's words used for adaptation.
    pub fraction: f64,
    pub mode: AdaptMode,
    pub frame_stride: usize,
    pub train: TrainConfig,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            fraction: 0.2,
            mode: AdaptMode::FineTune,
            frame_stride: 1,
            train: TrainConfig {
                learning_rate: 0.01,
                max_epochs: 8,
                valid_fraction: 0.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Lattice size from the first pass.
    pub nbest: usize,
    pub segment_hidden: Vec<usize>,
    pub segment_train: TrainConfig,
    pub train: TrainOptions,
    pub aggregation: Aggregation,
    pub missing_reference: MissingReference,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            nbest: 10,
            segment_hidden: vec![64],
            segment_train: TrainConfig {
                max_epochs: 20,
                batch_size: 50,
                ..Default::default()
            },
            train: TrainOptions {
                step: 0.2,
                epochs: 5,
                log_objective: false,
                adagrad: true,
                ..Default::default()
            },
            aggregation: Aggregation::Sum,
            missing_reference: MissingReference::AddGroundTruth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub signers: usize,
    pub words: usize,
    pub repetitions: usize,
    pub synth: SynthConfig,
    pub signer_spec: SignerSpec,
    pub folds: usize,
    /// Folds whose test results are pooled into the dependent row.
    pub reported_folds: usize,
    pub classifier: ClassifierConfig,
    pub scrf: ScrfConfig,
    pub adaptation: AdaptationConfig,
    /// Forced-alignment adaptation rounds; the first is the FA row.
    pub realign_iterations: usize,
    pub cascade: CascadeConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            seed: 1,
            signers: 4,
            words: 100,
            repetitions: 2,
            synth: SynthConfig::default(),
            signer_spec: SignerSpec::default(),
            folds: 10,
            reported_folds: 8,
            classifier: ClassifierConfig::default(),
            scrf: ScrfConfig::default(),
            adaptation: AdaptationConfig::default(),
            realign_iterations: 2,
            cascade: CascadeConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.signers < 2 {
            return Err(Error::invalid(
                "leave-one-signer-out needs at least two signers",
            ));
        }
        if self.folds < 3 || self.reported_folds == 0 || self.reported_folds > self.folds {
            return Err(Error::invalid(
                "need at least 3 folds and 1..=folds reported",
            ));
        }
        if !(self.adaptation.fraction > 0.0 && self.adaptation.fraction < 1.0) {
            return Err(Error::invalid("adaptation fraction must lie in (0, 1)"));
        }
        if self.words == 0 || self.repetitions == 0 || self.realign_iterations == 0 {
            return Err(Error::invalid(
                "words, repetitions and realign iterations must be positive",
            ));
        }
        if self.classifier.window % 2 == 0
            || self.classifier.frame_stride == 0
            || self.adaptation.frame_stride == 0
        {
            return Err(Error::invalid(
                "classifier window must be odd and strides positive",
            ));
        }
        Ok(())
    }
}

/// `n` words of `lexicon` picked by `seed`, in lexicon order.
pub fn select_words(lexicon: &[String], n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 || n > lexicon.len() {
        return Err(Error::invalid(format!(
            "cannot pick {n} of {} words",
            lexicon.len()
        )));
    }
    let mut idx: Vec<usize> = (0..lexicon.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pick = idx[..n].to_vec();
    pick.sort_unstable();
    Ok(pick.into_iter().map(|i| lexicon[i].clone()).collect())
}

/// Classifier and first-pass segmental model sharing one LM.
#[derive(Clone, Debug)]
pub struct Recognizer {
    pub classifier: Mlp,
    pub scrf: SegmentalModel,
    pub lm: Arc<BigramLm>,
}

impl Recognizer {
    pub fn context(&self, x: &Array2<f64>) -> Result<FeatureContext> {
        let post = self.classifier.predict_sequence(x)?;
        Ok(FeatureContext::new(x.nrows())
            .with_letter_posteriors(post)?
            .with_lm(self.lm.clone()))
    }

    pub fn decode(&self, x: &Array2<f64>) -> Result<Decoded> {
        self.scrf.viterbi(&self.context(x)?)
    }

    /// Best segmentation of `labels`, boundary silences included.
    pub fn align(&self, x: &Array2<f64>, labels: &[usize]) -> Result<Segmentation> {
        Ok(self
            .scrf
            .forced_align(&self.context(x)?, labels)?
            .segmentation)
    }

    pub fn with_classifier(&self, classifier: Mlp) -> Recognizer {
        Recognizer {
            classifier,
            ..self.clone()
        }
    }
}

pub fn first_pass_model(alphabet: &LetterAlphabet, cfg: &ScrfConfig) -> Result<SegmentalModel> {
    SegmentalModel::new(
        alphabet.class_count(),
        Topology::Word,
        cfg.max_dur,
        cfg.min_dur,
        false,
        vec![
            Feature::FirstPass {
                classes: FRAME_CLASSES,
                max_dur: cfg.max_dur,
            },
            Feature::Lm { log: cfg.lm_log },
        ],
    )
}

fn frame_dataset(
    alphabet: &LetterAlphabet,
    items: &[(&Utterance, &Segmentation)],
    window: usize,
    stride: usize,
) -> Result<FrameDataset> {
    let mut ds = FrameDataset::new(window);
    for (u, seg) in items {
        let labels: Vec<Option<usize>> = seg
            .frame_labels()
            .into_iter()
            .enumerate()
            .map(|(t, l)| (t % stride == 0).then(|| frame_class(alphabet, l)))
            .collect();
        ds.push(u.descriptors.clone(), &labels)?;
    }
    Ok(ds)
}

/// Trains the frame classifier on ground-truth frame labels. `valid` picks
/// the best epoch; without it a tenth of `train` is held out.
pub fn train_classifier(
    alphabet: &LetterAlphabet,
    train: &[&Utterance],
    valid: &[&Utterance],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(Mlp, LearningCurve)> {
    let (train, valid): (Vec<&Utterance>, Vec<&Utterance>) = if valid.is_empty() {
        let (a, b) = holdout_split(train.len(), 0.1, seed);
        (
            a.iter().map(|&i| train[i]).collect(),
            b.iter().map(|&i| train[i]).collect(),
        )
    } else {
        (train.to_vec(), valid.to_vec())
    };
    if train.is_empty() || valid.is_empty() {
        return Err(Error::empty("classifier training or validation set"));
    }
    let gt = |us: &[&Utterance]| -> Result<Vec<Segmentation>> {
        us.iter().map(|u| u.gt_segmentation()).collect()
    };
    let (tseg, vseg) = (gt(&train)?, gt(&valid)?);
    let tpairs: Vec<_> = train.iter().copied().zip(&tseg).collect();
    let vpairs: Vec<_> = valid.iter().copied().zip(&vseg).collect();
    let tds = frame_dataset(alphabet, &tpairs, cfg.window, cfg.frame_stride)?;
    let vds = frame_dataset(alphabet, &vpairs, cfg.window, cfg.frame_stride)?;
    let dim = train[0].descriptors.ncols();
    let model = Mlp::new(cfg.window, dim, &cfg.hidden, frame_class_names(), seed)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let train_idx: Vec<usize> = (0..tds.len()).collect();
    let valid_idx: Vec<usize> = (0..vds.len()).collect();
    sgd(
        model,
        &tds,
        &train_idx,
        &vds,
        &valid_idx,
        &tcfg,
        Trainable::ALL,
        Selection::ErrorRate,
    )
}

/// Trains the first-pass segmental model on a classifier's outputs.
pub fn train_first_pass(
    alphabet: &LetterAlphabet,
    classifier: &Mlp,
    lm: &Arc<BigramLm>,
    train: &[&Utterance],
    cfg: &ScrfConfig,
    seed: u64,
) -> Result<SegmentalModel> {
    let mut model = first_pass_model(alphabet, cfg)?;
    let data = train
        .par_iter()
        .map(|u| {
            let ctx = FeatureContext::new(u.frames())
                .with_letter_posteriors(classifier.predict_sequence(&u.descriptors)?)?
                .with_lm(lm.clone());
            Ok(Example::Full {
                ctx,
                labels: u.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = TrainOptions { seed, ..cfg.train };
    scrf::train(&mut model, &data, &opts)?;
    Ok(model)
}

pub fn train_recognizer(
    alphabet: &LetterAlphabet,
    lm: &Arc<BigramLm>,
    train: &[&Utterance],
    valid: &[&Utterance],
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<Recognizer> {
    let (classifier, _) = train_classifier(alphabet, train, valid, &cfg.classifier, seed)?;
    let scrf = train_first_pass(
        alphabet,
        &classifier,
        lm,
        train,
        &cfg.scrf,
        derive_seed(seed, &[1]),
    )?;
    Ok(Recognizer {
        classifier,
        scrf,
        lm: lm.clone(),
    })
}

/// Adapts the recognizer's classifier to labeled utterances of a new signer.
pub fn adapt_recognizer(
    base: &Recognizer,
    alphabet: &LetterAlphabet,
    items: &[(&Utterance, &Segmentation)],
    cfg: &AdaptationConfig,
    seed: u64,
) -> Result<Recognizer> {
    let ds = frame_dataset(alphabet, items, base.classifier.window, cfg.frame_stride)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (mlp, _) = adapt(&base.classifier, &ds, cfg.mode, &tcfg)?;
    Ok(base.with_classifier(mlp))
}

/// Adaptation labels for `adapt_set` from the chosen source.
pub fn adaptation_labels(
    recognizer: &Recognizer,
    adapt_set: &[&Utterance],
    source: LabelSource,
) -> Result<Vec<Segmentation>> {
    adapt_set
        .par_iter()
        .map(|u| match source {
            LabelSource::GroundTruth => u.gt_segmentation(),
            LabelSource::ForcedAlignment => recognizer.align(&u.descriptors, &u.labels),
        })
        .collect()
}

/// The hypothesis string of a decoded label sequence.
pub fn hypothesis(alphabet: &LetterAlphabet, d: &Decoded) -> String {
    alphabet.render(&strip_boundaries(&d.labels))
}

/// Decodes and scores a test set; hypotheses keep the input order.
pub fn evaluate(
    recognizer: &Recognizer,
    alphabet: &LetterAlphabet,
    test: &[&Utterance],
) -> Result<Vec<(String, String)>> {
    test.par_iter()
        .map(|u| {
            Ok((
                u.word.clone(),
                hypothesis(alphabet, &recognizer.decode(&u.descriptors)?),
            ))
        })
        .collect()
}

/// Segment classifier over thirds summaries of true segments.
pub fn train_segment_classifier(
    alphabet: &LetterAlphabet,
    items: &[&Utterance],
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<Mlp> {
    let mut data = VectorDataset::default();
    for u in items {
        for s in u.truth.segments() {
            data.inputs
                .push(thirds_summary(&u.descriptors, s.start, s.end));
            data.labels.push(s.label);
        }
    }
    if data.inputs.is_empty() {
        return Err(Error::empty("segment classifier training set"));
    }
    let names = (0..alphabet.class_count())
        .map(|l| alphabet.symbol(l))
        .collect::<Result<Vec<_>>>()?;
    let dim = data.inputs[0].len();
    let model = Mlp::new(1, dim, &cfg.segment_hidden, names, seed)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.segment_train.clone()
    };
    let (train, mut valid) = holdout_split(data.inputs.len(), tcfg.valid_fraction, seed);
    if valid.is_empty() {
        valid = train.clone();
    }
    Ok(sgd(
        model,
        &data,
        &train,
        &data,
        &valid,
        &tcfg,
        Trainable::ALL,
        Selection::ErrorRate,
    )?
    .0)
}

/// Second pass over first-pass N-best lattices.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub first: Recognizer,
    pub second: SegmentalModel,
    pub segment_classifier: Arc<Mlp>,
    pub nbest: usize,
    pub aggregation: Aggregation,
}

/// A first-pass lattice and the context the second pass reads.
pub struct Lattice {
    pub first_best: Decoded,
    pub candidates: Vec<Segmentation>,
    pub ctx: FeatureContext,
}

pub fn second_pass_model(first: &SegmentalModel) -> Result<SegmentalModel> {
    let mut m = SegmentalModel::new(
        first.n_labels,
        first.topology,
        first.max_dur,
        first.min_dur,
        first.allow_repeats,
        vec![
            Feature::FirstPassScore,
            Feature::SegmentClassifier { log: true },
            Feature::Peak,
        ],
    )?;
    m.weights[0] = 1.0;
    Ok(m)
}

impl Cascade {
    pub fn lattice(&self, x: &Array2<f64>) -> Result<Lattice> {
        let ctx1 = self.first.context(x)?;
        let table = self.first.scrf.score_table(&ctx1)?;
        let nbest = self.first.scrf.kbest(&ctx1, self.nbest)?;
        let ctx = FeatureContext::new(x.nrows())
            .with_descriptors(x.clone())?
            .with_first_pass(Arc::new(table))?
            .with_segment_classifier(self.segment_classifier.clone());
        Ok(Lattice {
            first_best: nbest[0].clone(),
            candidates: nbest.into_iter().map(|d| d.segmentation).collect(),
            ctx,
        })
    }

    /// First-pass and second-pass hypotheses.
    pub fn decode(&self, x: &Array2<f64>) -> Result<(Decoded, Decoded)> {
        let lat = self.lattice(x)?;
        let second = rescore(&self.second, &lat.candidates, &lat.ctx, self.aggregation)?;
        Ok((lat.first_best, second))
    }
}

/// Builds the cascade on top of `first` and trains the second pass on
/// lattices of `train`.
pub fn train_cascade(
    first: &Recognizer,
    alphabet: &LetterAlphabet,
    segment_data: &[&Utterance],
    train: &[&Utterance],
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<Cascade> {
    let seg_mlp = train_segment_classifier(alphabet, segment_data, cfg, seed)?;
    let mut cascade = Cascade {
        first: first.clone(),
        second: second_pass_model(&first.scrf)?,
        segment_classifier: Arc::new(seg_mlp),
        nbest: cfg.nbest,
        aggregation: cfg.aggregation,
    };
    let examples: Vec<Example> = train
        .par_iter()
        .map(|u| {
            let lat = cascade.lattice(&u.descriptors)?;
            let fa = match cfg.missing_reference {
                MissingReference::AddForcedAlignment => {
                    Some(first.align(&u.descriptors, &u.labels)?)
                }
                _ => None,
            };
            lattice_example(
                &cascade.second,
                &lat.ctx,
                &lat.candidates,
                &u.truth,
                fa.as_ref(),
                cfg.missing_reference,
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(Example::Lattice)
        .collect();
    if !examples.is_empty() {
        let opts = TrainOptions { seed, ..cfg.train };
        scrf::train(&mut cascade.second, &examples, &opts)?;
    }
    Ok(cascade)
}

/// Pooled error summary of one test condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ler: f64,
    pub deletion_rate: f64,
    pub substitution_rate: f64,
    pub insertion_rate: f64,
    pub reference_len: usize,
}

impl From<&CorpusScore> for Summary {
    fn from(s: &CorpusScore) -> Self {
        Summary {
            ler: s.ler,
            deletion_rate: s.deletion_rate,
            substitution_rate: s.substitution_rate,
            insertion_rate: s.insertion_rate,
            reference_len: s.reference_len,
        }
    }
}

fn summarize(pairs: &[(String, String)]) -> Result<Summary> {
    Ok(Summary::from(&score_corpus(pairs)?))
}

/// One row of the results table: a condition scored per test signer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub per_signer: Vec<Summary>,
    /// Unweighted mean of the per-signer LERs.
    pub mean: f64,
    /// Pooled over every signer's test words.
    pub pooled: Summary,
}

impl Row {
    fn new(name: &str, per_signer: Vec<(Summary, Vec<(String, String)>)>) -> Result<Row> {
        let mean = per_signer.iter().map(|s| s.0.ler).sum::<f64>() / per_signer.len() as f64;
        let all: Vec<(String, String)> = per_signer
            .iter()
            .flat_map(|s| s.1.iter().cloned())
            .collect();
        Ok(Row {
            name: name.to_string(),
            per_signer: per_signer.into_iter().map(|s| s.0).collect(),
            mean,
            pooled: summarize(&all)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub seed: u64,
    pub signers: Vec<String>,
    pub words: Vec<String>,
    /// Independent, FA-adapted, GT-adapted and dependent, in that order.
    pub rows: Vec<Row>,
    /// FA adaptation after each realignment round.
    pub realign: Vec<Row>,
    /// First and second pass of the cascade on the GT-adapted recognizer.
    pub cascade: Vec<Row>,
}

impl ProtocolReport {
    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows
            .iter()
            .chain(&self.realign)
            .chain(&self.cascade)
            .find(|r| r.name == name)
    }

    fn table(out: &mut String, signers: &[String], rows: &[Row]) {
        let _ = write!(out, "{:<14}", "");
        for s in signers {
            let _ = write!(out, "{s:>8}");
        }
        let _ = writeln!(out, "{:>8}", "mean");
        for r in rows {
            let _ = write!(out, "{:<14}", r.name);
            for s in &r.per_signer {
                let _ = write!(out, "{:>8.1}", s.ler);
            }
            let _ = writeln!(out, "{:>8.1}", r.mean);
        }
    }

    /// LER tables followed by the pooled error decomposition.
    pub fn to_text(&self) -> String {
        let mut out = String::from("Letter error rate (%)\n");
        Self::table(&mut out, &self.signers, &self.rows);
        out.push_str("\nForced-alignment adaptation by realignment round\n");
        Self::table(&mut out, &self.signers, &self.realign);
        out.push_str("\nCascade (GT-adapted)\n");
        Self::table(&mut out, &self.signers, &self.cascade);
        let _ = writeln!(
            out,
            "\n{:<14}{:>8}{:>8}{:>8}{:>8}",
            "pooled", "D", "S", "I", "LER"
        );
        for r in self.rows.iter().chain(&self.realign).chain(&self.cascade) {
            let p = &r.pooled;
            let _ = writeln!(
                out,
                "{:<14}{:>8.1}{:>8.1}{:>8.1}{:>8.1}",
                r.name, p.deletion_rate, p.substitution_rate, p.insertion_rate, p.ler
            );
        }
        out
    }
}

/// The protocol's corpus, alphabet and LM.
pub struct ProtocolData {
    pub corpus: Corpus,
    pub utterances: Vec<Utterance>,
    pub lm: Arc<BigramLm>,
}

/// The configured words spelled by the configured signers.
pub fn protocol_corpus(cfg: &ProtocolConfig) -> Result<Corpus> {
    cfg.validate()?;
    let words = select_words(
        &default_lexicon(),
        cfg.words,
        derive_seed(cfg.seed, &[TAG_WORDS]),
    )?;
    let signers = make_signers(cfg.signers, cfg.synth.dim, &cfg.signer_spec, cfg.seed)?;
    generate_corpus(&words, &signers, cfg.repetitions, &cfg.synth, cfg.seed)
}

pub fn protocol_data(cfg: &ProtocolConfig) -> Result<ProtocolData> {
    let corpus = protocol_corpus(cfg)?;
    let lm = Arc::new(BigramLm::train(&default_lexicon(), &corpus.alphabet)?);
    let utterances = utterances(&corpus);
    Ok(ProtocolData {
        corpus,
        utterances,
        lm,
    })
}

const TAG_WORDS: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_DEPENDENT: u64 = 3;
const TAG_INDEPENDENT: u64 = 4;
const TAG_ADAPT_SPLIT: u64 = 5;
const TAG_ADAPT: u64 = 6;
const TAG_CASCADE: u64 = 7;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Fold `k` of `folds` over a seeded permutation: `(train, dev, test)`.
pub fn fold_split(
    n: usize,
    folds: usize,
    k: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let order = shuffled(n, seed);
    let fold_of = |pos: usize| pos * folds / n;
    let dev_fold = (k + 1) % folds;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (pos, &i) in order.iter().enumerate() {
        match fold_of(pos) {
            f if f == k => test.push(i),
            f if f == dev_fold => dev.push(i),
            _ => train.push(i),
        }
    }
    (train, dev, test)
}

/// Seeded split of a signer's words into adaptation and evaluation sets.
pub fn adaptation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let order = shuffled(n, seed);
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let (mut a, mut e) = (order[..k].to_vec(), order[k..].to_vec());
    a.sort_unstable();
    e.sort_unstable();
    (a, e)
}

/// Fold `k` of signer `s`'s `n` words: `(train, dev, test)` positions.
pub fn dependent_split(
    cfg: &ProtocolConfig,
    s: usize,
    n: usize,
    k: usize,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    fold_split(
        n,
        cfg.folds,
        k,
        derive_seed(cfg.seed, &[TAG_FOLDS, s as u64]),
    )
}

/// Signer `s`'s `n` words split into `(adaptation, evaluation)` positions.
pub fn adaptation_sets(cfg: &ProtocolConfig, s: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    adaptation_split(
        n,
        cfg.adaptation.fraction,
        derive_seed(cfg.seed, &[TAG_ADAPT_SPLIT, s as u64]),
    )
}

type Scored = (Summary, Vec<(String, String)>);

fn scored(pairs: Vec<(String, String)>) -> Result<Scored> {
    Ok((summarize(&pairs)?, pairs))
}

struct HeldOut {
    independent: Scored,
    realign: Vec<Scored>,
    gt: Scored,
    cascade: (Scored, Scored),
}

fn dependent(data: &ProtocolData, cfg: &ProtocolConfig, s: usize) -> Result<Scored> {
    let mine: Vec<&Utterance> = data.utterances.iter().filter(|u| u.signer == s).collect();
    let alphabet = &data.corpus.alphabet;
    let per_fold = (0..cfg.reported_folds)
        .map(|k| {
            let (tr, dev, te) = dependent_split(cfg, s, mine.len(), k);
            let pick = |ix: &[usize]| ix.iter().map(|&i| mine[i]).collect::<Vec<_>>();
            let seed = derive_seed(cfg.seed, &[TAG_DEPENDENT, s as u64, k as u64]);
            let rec = train_recognizer(alphabet, &data.lm, &pick(&tr), &pick(&dev), cfg, seed)?;
            evaluate(&rec, alphabet, &pick(&te))
        })
        .collect::<Result<Vec<_>>>()?;
    scored(per_fold.into_iter().flatten().collect())
}

fn held_out(data: &ProtocolData, cfg: &ProtocolConfig, s: usize) -> Result<HeldOut> {
    let alphabet = &data.corpus.alphabet;
    let others: Vec<&Utterance> = data.utterances.iter().filter(|u| u.signer != s).collect();
    let mine: Vec<&Utterance> = data.utterances.iter().filter(|u| u.signer == s).collect();
    let (a_idx, e_idx) = adaptation_sets(cfg, s, mine.len());
    let adapt_set: Vec<&Utterance> = a_idx.iter().map(|&i| mine[i]).collect();
    let eval_set: Vec<&Utterance> = e_idx.iter().map(|&i| mine[i]).collect();

    let si = train_recognizer(
        alphabet,
        &data.lm,
        &others,
        &[],
        cfg,
        derive_seed(cfg.seed, &[TAG_INDEPENDENT, s as u64]),
    )?;
    let independent = scored(evaluate(&si, alphabet, &eval_set)?)?;

    let adapt_with =
        |aligner: &Recognizer, source: LabelSource, round: u64| -> Result<Recognizer> {
            let labels = adaptation_labels(aligner, &adapt_set, source)?;
            let items: Vec<(&Utterance, &Segmentation)> =
                adapt_set.iter().copied().zip(labels.iter()).collect();
            let seed = derive_seed(cfg.seed, &[TAG_ADAPT, s as u64, round]);
            adapt_recognizer(&si, alphabet, &items, &cfg.adaptation, seed)
        };

    let gt_rec = adapt_with(&si, LabelSource::GroundTruth, 0)?;
    let gt = scored(evaluate(&gt_rec, alphabet, &eval_set)?)?;

    let mut realign = Vec::with_capacity(cfg.realign_iterations);
    let mut aligner = si.clone();
    for round in 1..=cfg.realign_iterations {
        let rec = adapt_with(&aligner, LabelSource::ForcedAlignment, round as u64)?;
        realign.push(scored(evaluate(&rec, alphabet, &eval_set)?)?);
        aligner = rec;
    }

    let mut seg_data = others.clone();
    seg_data.extend(adapt_set.iter().copied());
    let cascade = train_cascade(
        &gt_rec,
        alphabet,
        &seg_data,
        &adapt_set,
        &cfg.cascade,
        derive_seed(cfg.seed, &[TAG_CASCADE, s as u64]),
    )?;
    let decoded = eval_set
        .par_iter()
        .map(|u| {
            let (a, b) = cascade.decode(&u.descriptors)?;
            Ok((
                (u.word.clone(), hypothesis(alphabet, &a)),
                (u.word.clone(), hypothesis(alphabet, &b)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (first, second): (Vec<_>, Vec<_>) = decoded.into_iter().unzip();
    Ok(HeldOut {
        independent,
        realign,
        gt,
        cascade: (scored(first)?, scored(second)?),
    })
}

/// Runs every condition of the protocol on the configured synthetic corpus.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    let data = protocol_data(cfg)?;
    run_protocol_on(&data, cfg)
}

pub fn run_protocol_on(data: &ProtocolData, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    cfg.validate()?;
    let n = data.corpus.manifest.signers.len();
    if n < 2 {
        return Err(Error::invalid(
            "leave-one-signer-out needs at least two signers",
        ));
    }
    let held: Vec<HeldOut> = (0..n)
        .into_par_iter()
        .map(|s| held_out(data, cfg, s))
        .collect::<Result<_>>()?;
    let dep: Vec<Scored> = (0..n)
        .into_par_iter()
        .map(|s| dependent(data, cfg, s))
        .collect::<Result<_>>()?;

    let mut independent = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    let mut rounds: Vec<Vec<Scored>> = vec![Vec::with_capacity(n); cfg.realign_iterations];
    let (mut first, mut second) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for h in held {
        independent.push(h.independent);
        gt.push(h.gt);
        rounds
            .iter_mut()
            .zip(h.realign)
            .for_each(|(r, x)| r.push(x));
        first.push(h.cascade.0);
        second.push(h.cascade.1);
    }
    let realign: Vec<Row> = rounds
        .into_iter()
        .enumerate()
        .map(|(r, col)| Row::new(&format!("fa_round{}", r + 1), col))
        .collect::<Result<_>>()?;
    let fa = realign[0].clone();

    Ok(ProtocolReport {
        seed: cfg.seed,
        signers: data
            .corpus
            .manifest
            .signers
            .iter()
            .map(|s| s.id.clone())
            .collect(),
        words: data.corpus.manifest.words.clone(),
        rows: vec![
            Row::new("independent", independent)?,
            Row {
                name: "adapted_fa".into(),
                ..fa
            },
            Row::new("adapted_gt", gt)?,
            Row::new("dependent", dep)?,
        ],
        realign,
        cascade: vec![
            Row::new("first_pass", first)?,
            Row::new("second_pass", second)?,
        ],
    })
}
