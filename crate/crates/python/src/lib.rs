//! Python bindings: alphabet, LM, corpus generation, recognizers, scoring
//! and the HOG front end.

use std::fmt::Display;
use std::sync::Arc;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use segspell_core::alphabet::LetterAlphabet;
use segspell_core::classifier::Mlp;
use segspell_core::experiment::{self, LabelSource, ProtocolConfig, Utterance};
use segspell_core::lm::{default_lexicon, BigramLm};
use segspell_core::metrics;
use segspell_core::scrf::{FeatureContext, SegmentalModel};
use segspell_core::semimarkov::Segmentation;
use segspell_core::synthgen::{generate_corpus, make_signers};
use segspell_core::vision::{hog_descriptor, HogConfig, Mask};

fn err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(err("rows differ in length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(err)
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn spans(seg: &Segmentation) -> Vec<(usize, usize, usize)> {
    seg.segments()
        .iter()
        .map(|s| (s.label, s.start, s.end))
        .collect()
}

fn protocol_config(json: Option<&str>) -> PyResult<ProtocolConfig> {
    let cfg: ProtocolConfig = match json {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => ProtocolConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Letters, doubled-letter tokens and the boundary labels `<s>` and `</s>`.
#[pyclass(module = "segspell", name = "Alphabet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyAlphabet(LetterAlphabet);

#[pymethods]
impl PyAlphabet {
    #[new]
    #[pyo3(signature = (doubled = Vec::new()))]
    fn new(doubled: Vec<String>) -> PyResult<Self> {
        Ok(PyAlphabet(
            LetterAlphabet::with_doubled(&doubled).map_err(err)?,
        ))
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    #[getter]
    fn doubled(&self) -> Vec<String> {
        self.0.doubled().to_vec()
    }

    fn tokenize(&self, word: &str) -> PyResult<Vec<usize>> {
        self.0.tokenize(word).map_err(err)
    }

    fn render(&self, labels: Vec<usize>) -> String {
        self.0.render(&labels)
    }

    fn symbol(&self, index: usize) -> PyResult<String> {
        self.0.symbol(index).map_err(err)
    }

    fn index(&self, symbol: &str) -> PyResult<usize> {
        self.0.letter_index(symbol).map_err(err)
    }
}

/// Letter bigram LM with `<s>`/`</s>` boundaries.
#[pyclass(module = "segspell", name = "BigramLm", frozen)]
struct PyBigramLm(Arc<BigramLm>);

#[pymethods]
impl PyBigramLm {
    /// Trains on `words`, the built-in word lists when omitted.
    #[staticmethod]
    #[pyo3(signature = (alphabet, words = None))]
    fn train(alphabet: &PyAlphabet, words: Option<Vec<String>>) -> PyResult<Self> {
        let words = words.unwrap_or_else(default_lexicon);
        Ok(PyBigramLm(Arc::new(
            BigramLm::train(&words, &alphabet.0).map_err(err)?,
        )))
    }

    #[staticmethod]
    fn from_arpa(text: &str, alphabet: &PyAlphabet) -> PyResult<Self> {
        Ok(PyBigramLm(Arc::new(
            BigramLm::from_arpa(text, &alphabet.0).map_err(err)?,
        )))
    }

    fn to_arpa(&self) -> String {
        self.0.to_arpa()
    }

    /// Natural-log probability of `next` after `prev`, by symbol.
    fn logprob(&self, prev: &str, next: &str) -> PyResult<f64> {
        self.0.logprob_symbols(prev, next).map_err(err)
    }

    /// Log-probability of a spelled word, boundaries included.
    fn word_logprob(&self, word: &str) -> PyResult<f64> {
        let labels = self.0.alphabet().tokenize(word).map_err(err)?;
        self.0.word_logprob(&labels).map_err(err)
    }
}

/// Frame classifier over windows of descriptors.
#[pyclass(module = "segspell", name = "Classifier", frozen)]
struct PyClassifier(Mlp);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyClassifier(Mlp::from_json(text).map_err(err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn window(&self) -> usize {
        self.0.window
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes.clone()
    }

    /// Per-frame class posteriors of a descriptor sequence.
    fn predict(&self, descriptors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(
            &self
                .0
                .predict_sequence(&to_array(descriptors)?)
                .map_err(err)?,
        ))
    }
}

/// Semi-Markov CRF over labeled segments.
#[pyclass(module = "segspell", name = "SegmentalModel", frozen)]
struct PySegmentalModel(SegmentalModel);

#[pymethods]
impl PySegmentalModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySegmentalModel(
            SegmentalModel::from_json(text).map_err(err)?,
        ))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Best `(labels, [(label, start, end)], score)` given frame posteriors.
    fn viterbi(
        &self,
        posteriors: Vec<Vec<f64>>,
        lm: &PyBigramLm,
    ) -> PyResult<(Vec<usize>, Vec<(usize, usize, usize)>, f64)> {
        let p = to_array(posteriors)?;
        let ctx = FeatureContext::new(p.nrows())
            .with_letter_posteriors(p)
            .map_err(err)?
            .with_lm(lm.0.clone());
        let d = self.0.viterbi(&ctx).map_err(err)?;
        Ok((d.labels, spans(&d.segmentation), d.score))
    }
}

/// Synthetic fingerspelled words with exact segmentations.
#[pyclass(module = "segspell", name = "Corpus", frozen)]
struct PyCorpus {
    alphabet: LetterAlphabet,
    signers: Vec<String>,
    utterances: Vec<Utterance>,
}

#[pymethods]
impl PyCorpus {
    /// `words` spelled `repetitions` times by `signers` synthetic signers.
    #[staticmethod]
    #[pyo3(signature = (words, signers = 2, repetitions = 1, seed = 1))]
    fn generate(
        words: Vec<String>,
        signers: usize,
        repetitions: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ProtocolConfig::default();
        let s = make_signers(signers, cfg.synth.dim, &cfg.signer_spec, seed).map_err(err)?;
        let corpus = generate_corpus(&words, &s, repetitions, &cfg.synth, seed).map_err(err)?;
        Ok(PyCorpus {
            signers: corpus
                .manifest
                .signers
                .iter()
                .map(|s| s.id.clone())
                .collect(),
            utterances: experiment::utterances(&corpus),
            alphabet: corpus.alphabet,
        })
    }

    /// The corpus the recognition protocol runs on.
    #[staticmethod]
    #[pyo3(signature = (config_json = None))]
    fn protocol(config_json: Option<&str>) -> PyResult<Self> {
        let corpus = experiment::protocol_corpus(&protocol_config(config_json)?).map_err(err)?;
        Ok(PyCorpus {
            signers: corpus
                .manifest
                .signers
                .iter()
                .map(|s| s.id.clone())
                .collect(),
            utterances: experiment::utterances(&corpus),
            alphabet: corpus.alphabet,
        })
    }

    fn __len__(&self) -> usize {
        self.utterances.len()
    }

    #[getter]
    fn alphabet(&self) -> PyAlphabet {
        PyAlphabet(self.alphabet.clone())
    }

    #[getter]
    fn signers(&self) -> Vec<String> {
        self.signers.clone()
    }

    fn word(&self, i: usize) -> PyResult<String> {
        Ok(self.get(i)?.word.clone())
    }

    /// Index of the signer of word token `i`.
    fn signer(&self, i: usize) -> PyResult<usize> {
        Ok(self.get(i)?.signer)
    }

    fn descriptors(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.get(i)?.descriptors))
    }

    /// Ground-truth `(label, start, end)` segments, boundaries included.
    fn segments(&self, i: usize) -> PyResult<Vec<(usize, usize, usize)>> {
        Ok(spans(&self.get(i)?.truth))
    }
}

impl PyCorpus {
    fn get(&self, i: usize) -> PyResult<&Utterance> {
        self.utterances.get(i).ok_or_else(|| {
            err(format!(
                "index {i} out of range for {} words",
                self.utterances.len()
            ))
        })
    }

    fn pick(&self, idx: &[usize]) -> PyResult<Vec<&Utterance>> {
        idx.iter().map(|&i| self.get(i)).collect()
    }
}

/// Frame classifier plus first-pass segmental model.
#[pyclass(module = "segspell", name = "Recognizer", frozen)]
struct PyRecognizer {
    inner: experiment::Recognizer,
    alphabet: LetterAlphabet,
    config: ProtocolConfig,
}

#[pymethods]
impl PyRecognizer {
    /// Trains on the word tokens `train` of `corpus`.
    #[staticmethod]
    #[pyo3(signature = (corpus, train, seed = 1, config_json = None))]
    fn train(
        corpus: &PyCorpus,
        train: Vec<usize>,
        seed: u64,
        config_json: Option<&str>,
    ) -> PyResult<Self> {
        let config = protocol_config(config_json)?;
        let lm = Arc::new(BigramLm::train(&default_lexicon(), &corpus.alphabet).map_err(err)?);
        let inner = experiment::train_recognizer(
            &corpus.alphabet,
            &lm,
            &corpus.pick(&train)?,
            &[],
            &config,
            seed,
        )
        .map_err(err)?;
        Ok(PyRecognizer {
            inner,
            alphabet: corpus.alphabet.clone(),
            config,
        })
    }

    /// Spelled hypothesis of a descriptor sequence.
    fn decode(&self, descriptors: Vec<Vec<f64>>) -> PyResult<String> {
        let d = self.inner.decode(&to_array(descriptors)?).map_err(err)?;
        Ok(experiment::hypothesis(&self.alphabet, &d))
    }

    /// Forced alignment of `word`, boundary silences included.
    fn align(
        &self,
        descriptors: Vec<Vec<f64>>,
        word: &str,
    ) -> PyResult<Vec<(usize, usize, usize)>> {
        let mut labels = vec![segspell_core::alphabet::BOS];
        labels.extend(self.alphabet.tokenize(word).map_err(err)?);
        labels.push(segspell_core::alphabet::EOS);
        Ok(spans(
            &self
                .inner
                .align(&to_array(descriptors)?, &labels)
                .map_err(err)?,
        ))
    }

    /// A copy whose classifier is adapted to the word tokens `items`, with
    /// frame labels from `"gt"` or forced alignment (`"fa"`).
    #[pyo3(signature = (corpus, items, source = "gt", seed = 1))]
    fn adapt(
        &self,
        corpus: &PyCorpus,
        items: Vec<usize>,
        source: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let source = match source {
            "gt" => LabelSource::GroundTruth,
            "fa" => LabelSource::ForcedAlignment,
            s => {
                return Err(err(format!(
                    "label source {s:?} is neither \"gt\" nor \"fa\""
                )))
            }
        };
        let set = corpus.pick(&items)?;
        let labels = experiment::adaptation_labels(&self.inner, &set, source).map_err(err)?;
        let pairs: Vec<(&Utterance, &Segmentation)> = set.iter().copied().zip(&labels).collect();
        let inner = experiment::adapt_recognizer(
            &self.inner,
            &self.alphabet,
            &pairs,
            &self.config.adaptation,
            seed,
        )
        .map_err(err)?;
        Ok(PyRecognizer {
            inner,
            alphabet: self.alphabet.clone(),
            config: self.config.clone(),
        })
    }

    #[getter]
    fn classifier(&self) -> PyClassifier {
        PyClassifier(self.inner.classifier.clone())
    }

    #[getter]
    fn segmental_model(&self) -> PySegmentalModel {
        PySegmentalModel(self.inner.scrf.clone())
    }
}

/// `(deletions, substitutions, insertions, reference length)` of the
/// minimum-edit alignment.
#[pyfunction]
fn align(reference: &str, hypothesis: &str) -> (usize, usize, usize, usize) {
    let d = metrics::align(reference, hypothesis);
    (d.deletions, d.substitutions, d.insertions, d.reference_len)
}

/// Letter error rate in percent of one word.
#[pyfunction]
fn ler(reference: &str, hypothesis: &str) -> PyResult<f64> {
    metrics::ler(&metrics::align(reference, hypothesis)).map_err(err)
}

/// Pooled corpus score of `(reference, hypothesis)` pairs.
#[pyfunction]
fn score<'py>(py: Python<'py>, pairs: Vec<(String, String)>) -> PyResult<Bound<'py, PyDict>> {
    let s = metrics::score_corpus(&pairs).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("ler", s.ler)?;
    d.set_item("deletions", s.deletions)?;
    d.set_item("substitutions", s.substitutions)?;
    d.set_item("insertions", s.insertions)?;
    d.set_item("reference_len", s.reference_len)?;
    Ok(d)
}

/// HOG pyramid of a gray image (rows of intensities in `[0, 1]`) inside a
/// hand mask of the same shape.
#[pyfunction]
fn hog(gray: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> PyResult<Vec<f64>> {
    let g = to_array(gray)?;
    let (h, w) = g.dim();
    if mask.len() != h || mask.iter().any(|r| r.len() != w) {
        return Err(err("mask shape differs from the image"));
    }
    let mut m = Mask::new(w, h);
    for (y, row) in mask.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            m.set(x, y, v);
        }
    }
    hog_descriptor(&g, &m, &HogConfig::default()).map_err(err)
}

/// Runs the full recognition protocol and returns its report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn run_protocol(py: Python<'_>, config_json: Option<&str>) -> PyResult<String> {
    let cfg = protocol_config(config_json)?;
    let report = py.detach(|| experiment::run_protocol(&cfg)).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pymodule]
fn segspell(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAlphabet>()?;
    m.add_class::<PyBigramLm>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PySegmentalModel>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyRecognizer>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(ler, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(hog, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add("HOG_DIM", HogConfig::default().dim())?;
    Ok(())
}
