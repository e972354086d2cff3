use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use segspell_core::alphabet::LetterAlphabet;
use segspell_core::classifier::{classifier_block, Mlp, TandemBuilder, TandemMode};
use segspell_core::experiment::{
    self, adapt_recognizer, adaptation_labels, hypothesis, protocol_corpus, train_first_pass,
    Cascade, LabelSource, Recognizer, Summary, Utterance, FRAME_CLASSES,
};
use segspell_core::hmm::{self, train_em, CandidateLattice, EmReport, LetterHmm, TrainingMode};
use segspell_core::lm::{default_lexicon, BigramLm};
use segspell_core::metrics::score_corpus;
use segspell_core::scrf::{
    self, lattice_example, rescore, strip_boundaries, Aggregation, Example, Feature,
    FeatureContext, MissingReference, Pool, SegmentalModel, Source as FeatureSource, Topology,
};
use segspell_core::semimarkov::Segmentation;
use segspell_core::synthgen::{derive_seed, render_frames};
use segspell_core::vision::io::{load_gray, load_mask, load_rgb, save_mask, write_matrix};
use segspell_core::vision::{
    fit_hand_color_model, fit_pca, gray_plane, hog_descriptor, segment_hand, PcaModel,
};

use crate::config::{config_error, ScrfMode};
use crate::corpus::{self, select, subset, DiskCorpus, Subset};
use crate::store::{write_atomic, Run};
use crate::{AlignModel, DecodeModel, Source};

const TAG_CLASSIFIER: u64 = 11;
const TAG_SCRF: u64 = 12;
const TAG_ADAPT: u64 = 13;
const TAG_CASCADE: u64 = 14;
const TAG_RESCORE: u64 = 15;

/// Seed of one training step for the configured test signer and fold.
fn seed(run: &Run, tag: u64) -> u64 {
    let d = &run.cfg.data;
    derive_seed(run.cfg.seed, &[tag, d.test_signer as u64, d.fold as u64])
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_json<T: Serialize>(run: &mut Run, name: &str, value: &T) -> Result<()> {
    let path = run.path(name);
    run.write(&path, &json_bytes(value)?)
}

fn read_json<T: DeserializeOwned>(run: &mut Run, name: &str, producer: &'static str) -> Result<T> {
    let path = run.path(name);
    let text = run.read_string(&path, producer)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_classifier(run: &mut Run, adapted: bool) -> Result<Mlp> {
    let (name, producer) = if adapted {
        ("classifier.adapted.json", "adapt")
    } else {
        ("classifier.json", "train-classifier")
    };
    let path = run.path(name);
    let text = run.read_string(&path, producer)?;
    Mlp::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_scrf(run: &mut Run, name: &str) -> Result<SegmentalModel> {
    let path = run.path(name);
    let text = run.read_string(&path, "train-scrf")?;
    SegmentalModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_lm(run: &mut Run, alphabet: &LetterAlphabet) -> Result<Arc<BigramLm>> {
    let path = run.path("lm.arpa");
    let text = run.read_string(&path, "train-lm")?;
    Ok(Arc::new(
        BigramLm::from_arpa(&text, alphabet)
            .with_context(|| format!("parsing {}", path.display()))?,
    ))
}

fn load_recognizer(run: &mut Run, alphabet: &LetterAlphabet, adapted: bool) -> Result<Recognizer> {
    let scrf = load_scrf(run, "scrf.json")?;
    Ok(Recognizer {
        classifier: load_classifier(run, adapted)?,
        scrf,
        lm: load_lm(run, alphabet)?,
    })
}

fn nonempty(idx: Vec<usize>, what: &str) -> Result<Vec<usize>> {
    if idx.is_empty() {
        return Err(config_error(format!(
            "the configured split has no {what} words"
        )));
    }
    Ok(idx)
}

fn render_items(corpus: &DiskCorpus, idx: &[usize], hyps: &[String]) -> (String, String) {
    let (mut r, mut h) = (String::new(), String::new());
    for (&i, hyp) in idx.iter().zip(hyps) {
        let _ = writeln!(r, "{}\t{}", corpus.ids[i], corpus.utterances[i].word);
        let _ = writeln!(h, "{}\t{}", corpus.ids[i], hyp);
    }
    (r, h)
}

/// Writes `decode/<name>.ref.txt` and `.hyp.txt` and prints the score.
fn write_hypotheses(
    run: &mut Run,
    corpus: &DiskCorpus,
    idx: &[usize],
    name: &str,
    hyps: &[String],
) -> Result<Summary> {
    let (r, h) = render_items(corpus, idx, hyps);
    let rp = run.path(&format!("decode/{name}.ref.txt"));
    let hp = run.path(&format!("decode/{name}.hyp.txt"));
    run.write(&rp, r.as_bytes())?;
    run.write(&hp, h.as_bytes())?;
    let pairs: Vec<(&str, &str)> = idx
        .iter()
        .zip(hyps)
        .map(|(&i, h)| (corpus.utterances[i].word.as_str(), h.as_str()))
        .collect();
    let s = Summary::from(&score_corpus(&pairs)?);
    println!(
        "{name}: LER {:.2}% (D {:.2}% S {:.2}% I {:.2}%) over {} words",
        s.ler,
        s.deletion_rate,
        s.substitution_rate,
        s.insertion_rate,
        idx.len()
    );
    Ok(s)
}

pub fn gen_data(run: &mut Run, render: Option<usize>) -> Result<()> {
    let cfg = run.cfg.protocol();
    let corpus = protocol_corpus(&cfg)?;
    let mut manifest = corpus.manifest.clone();
    for i in 0..manifest.entries.len() {
        let id = corpus::entry_id(&manifest, i);
        let item = &corpus.items[i];
        let (d, t) = (format!("desc/{id}.sgmx"), format!("truth/{id}.json"));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &item.descriptors)?;
        run.write(&run.path(&format!("corpus/{d}")), &buf)?;
        run.write(&run.path(&format!("corpus/{t}")), &json_bytes(item)?)?;
        manifest.entries[i].descriptors = Some(d);
        manifest.entries[i].truth = Some(t);
    }
    write_json(run, "corpus/manifest.json", &manifest)?;
    let n = render.unwrap_or(0).min(corpus.items.len());
    (0..n).into_par_iter().try_for_each(|i| -> Result<()> {
        let id = corpus::entry_id(&manifest, i);
        let item = &corpus.items[i];
        let r = render_frames(
            item,
            &manifest.signers[manifest.entries[i].signer],
            &manifest.config.image,
        )?;
        let fdir = run.path(&format!("corpus/frames/{id}"));
        let mdir = run.path(&format!("corpus/masks/{id}"));
        std::fs::create_dir_all(&fdir)?;
        std::fs::create_dir_all(&mdir)?;
        for (f, (img, mask)) in r.frames.iter().zip(&r.masks).enumerate() {
            let tmp = fdir.join(format!(".tmp{f:04}.png"));
            img.save(&tmp)
                .with_context(|| format!("writing {}", tmp.display()))?;
            std::fs::rename(&tmp, fdir.join(format!("{f:04}.png")))?;
            let tmp = mdir.join(format!(".tmp{f:04}.png"));
            save_mask(&tmp, mask)?;
            std::fs::rename(&tmp, mdir.join(format!("{f:04}.png")))?;
        }
        Ok(())
    })?;
    println!(
        "{} words from {} signers, {} labels; {n} rendered",
        manifest.entries.len(),
        manifest.signers.len(),
        corpus.alphabet.class_count()
    );
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            let hidden = p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'));
            !hidden && matches!(ext.to_ascii_lowercase().as_str(), "png" | "ppm")
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn extract_features(
    run: &mut Run,
    frames_dir: &Path,
    rois_dir: &Path,
    exclusion: Option<&Path>,
    out: &Path,
    pca: Option<&Path>,
    fit_pca_out: Option<&Path>,
) -> Result<()> {
    let files = image_files(frames_dir)?;
    if files.is_empty() {
        bail!("no PNG or PPM frames in {}", frames_dir.display());
    }
    let frames = files
        .iter()
        .map(|p| load_rgb(p))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut train, mut rois) = (Vec::new(), Vec::new());
    for (p, f) in files.iter().zip(&frames) {
        let roi = rois_dir.join(p.file_name().expect("file"));
        if roi.exists() {
            rois.push(load_mask(&roi)?);
            train.push(f.clone());
        }
    }
    if rois.is_empty() {
        bail!("no ROI in {} matches a frame name", rois_dir.display());
    }
    let excl = exclusion.map(load_mask).transpose()?;
    let fe = &run.cfg.frontend;
    let model = fit_hand_color_model(&train, &rois, &fe.color)?;
    let descs = files
        .par_iter()
        .zip(&frames)
        .map(|(p, f)| -> Result<Option<Vec<f64>>> {
            let hand = segment_hand(f, &model, excl.as_ref(), None)?;
            if hand.empty {
                return Ok(None);
            }
            let gray = gray_plane(&load_gray(p)?);
            Ok(Some(hog_descriptor(&gray, &hand.mask, &fe.hog)?))
        })
        .collect::<Result<Vec<_>>>()?;
    // an empty frame repeats the previous descriptor (zeros at the start)
    let dim = fe.hog.dim();
    let mut hog = Array2::zeros((descs.len(), dim));
    let mut empty = 0;
    for (t, d) in descs.iter().enumerate() {
        match d {
            Some(v) => hog.row_mut(t).assign(&ndarray::ArrayView1::from(v)),
            None => {
                empty += 1;
                if t > 0 {
                    let prev = hog.row(t - 1).to_owned();
                    hog.row_mut(t).assign(&prev);
                }
            }
        }
    }
    let m = if let Some(p) = pca {
        let text = run.read_string(p, "extract-features --fit-pca")?;
        let model: PcaModel =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        model.apply_rows(&hog)?
    } else if let Some(p) = fit_pca_out {
        let k = fe.pca_dim.min(hog.nrows().saturating_sub(1)).min(dim);
        let model = fit_pca(&hog, k)?;
        run.write(p, &json_bytes(&model)?)?;
        model.apply_rows(&hog)?
    } else {
        hog
    };
    let mut buf = Vec::new();
    write_matrix(&mut buf, &m)?;
    run.write(out, &buf)?;
    println!(
        "{} frames, {} dims, {empty} without a hand",
        m.nrows(),
        m.ncols()
    );
    Ok(())
}

pub fn train_lm(run: &mut Run) -> Result<()> {
    let corpus = corpus::load(run)?;
    let words: Vec<String> = match run.cfg.lm.lexicon.clone() {
        Some(p) => run
            .read_string(&p, "train-lm")?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => default_lexicon(),
    };
    let lm = BigramLm::train(&words, &corpus.alphabet)?;
    let path = run.path("lm.arpa");
    run.write(&path, lm.to_arpa().as_bytes())?;
    println!("bigram LM over {} words", words.len());
    Ok(())
}

pub fn train_classifier(run: &mut Run) -> Result<()> {
    let corpus = corpus::load(run)?;
    let tr = nonempty(subset(&run.cfg, &corpus, Subset::Train)?, "training")?;
    let dev = subset(&run.cfg, &corpus, Subset::Dev)?;
    let (mlp, curve) = experiment::train_classifier(
        &corpus.alphabet,
        &select(&corpus, &tr),
        &select(&corpus, &dev),
        &run.cfg.classifier,
        seed(run, TAG_CLASSIFIER),
    )?;
    let (cp, lp) = (
        run.path("classifier.json"),
        run.path("classifier.curve.csv"),
    );
    run.write(&cp, mlp.to_json()?.as_bytes())?;
    run.write(&lp, curve.to_csv().as_bytes())?;
    println!("classifier trained on {} words", tr.len());
    Ok(())
}

fn label_source(run: &Run, source: Option<Source>) -> LabelSource {
    match source {
        Some(Source::Gt) => LabelSource::GroundTruth,
        Some(Source::Fa) => LabelSource::ForcedAlignment,
        None => run.cfg.adaptation.label_source,
    }
}

pub fn adapt(run: &mut Run, source: Option<Source>) -> Result<()> {
    let corpus = corpus::load(run)?;
    let idx = nonempty(subset(&run.cfg, &corpus, Subset::Adapt)?, "adaptation")?;
    let set = select(&corpus, &idx);
    let source = label_source(run, source);
    let base = match source {
        LabelSource::GroundTruth => Recognizer {
            classifier: load_classifier(run, false)?,
            scrf: experiment::first_pass_model(&corpus.alphabet, &run.cfg.scrf.first_pass())?,
            lm: Arc::new(BigramLm::train(&default_lexicon(), &corpus.alphabet)?),
        },
        LabelSource::ForcedAlignment => load_recognizer(run, &corpus.alphabet, false)?,
    };
    let labels = adaptation_labels(&base, &set, source)?;
    let items: Vec<(&Utterance, &Segmentation)> = set.iter().copied().zip(&labels).collect();
    let rec = adapt_recognizer(
        &base,
        &corpus.alphabet,
        &items,
        &run.cfg.adaptation.core(),
        seed(run, TAG_ADAPT),
    )?;
    let path = run.path("classifier.adapted.json");
    run.write(&path, rec.classifier.to_json()?.as_bytes())?;
    println!("adapted on {} words ({source:?} labels)", idx.len());
    Ok(())
}

/// Tandem projection and the HMM trained on its observations.
#[derive(Serialize, Deserialize)]
struct HmmArtifact {
    tandem: TandemBuilder,
    hmm: LetterHmm,
    em: EmReport,
}

fn tandem_blocks(mlp: &Mlp, x: &Array2<f64>) -> Result<Array2<f64>> {
    let post = mlp.predict_sequence(x)?;
    let mut out = Array2::zeros(post.dim());
    for (t, row) in post.rows().into_iter().enumerate() {
        let b = classifier_block(&[row], TandemMode::Letter)?;
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&b));
    }
    Ok(out)
}

fn observations(art: &HmmArtifact, mlp: &Mlp, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(art.tandem.sequence(&tandem_blocks(mlp, x)?, x)?)
}

pub fn train_hmm(run: &mut Run) -> Result<()> {
    let h = run.cfg.hmm.clone();
    if h.tandem != TandemMode::Letter {
        return Err(config_error(
            "hmm.tandem: only the letter classifier is trained by train-classifier, use \"letter\"",
        ));
    }
    let corpus = corpus::load(run)?;
    let mlp = load_classifier(run, false)?;
    let tr = nonempty(subset(&run.cfg, &corpus, Subset::Train)?, "training")?;
    let set = select(&corpus, &tr);
    let blocks = set
        .par_iter()
        .map(|u| tandem_blocks(&mlp, &u.descriptors))
        .collect::<Result<Vec<_>>>()?;
    let stack = |ms: Vec<ndarray::ArrayView2<f64>>| ndarray::concatenate(ndarray::Axis(0), &ms);
    let all_blocks = stack(blocks.iter().map(|b| b.view()).collect())?;
    let all_images = stack(set.iter().map(|u| u.descriptors.view()).collect())?;
    let tandem = TandemBuilder::fit(
        &all_blocks,
        &all_images,
        h.classifier_dims.min(FRAME_CLASSES),
        h.image_dims.min(all_images.ncols()),
        h.tandem,
        h.transform,
    )?;
    let obs = set
        .par_iter()
        .zip(&blocks)
        .map(|(u, b)| Ok(tandem.sequence(b, &u.descriptors)?))
        .collect::<Result<Vec<_>>>()?;
    let letters: Vec<Vec<usize>> = set.iter().map(|u| strip_boundaries(&u.labels)).collect();
    let segs: Vec<Segmentation> = set.iter().map(|u| u.truth.clone()).collect();
    let segs = (h.mode == TrainingMode::Segmented).then_some(segs.as_slice());
    let (hmm, em) = train_em(
        &obs,
        &letters,
        segs,
        corpus.alphabet.class_count(),
        &h.model,
        h.iterations,
    )?;
    if let Some(ll) = em.log_likelihood.last() {
        println!("HMM trained on {} words, log-likelihood {ll:.1}", tr.len());
    }
    write_json(run, "hmm.json", &HmmArtifact { tandem, hmm, em })
}

fn load_hmm(run: &mut Run) -> Result<HmmArtifact> {
    read_json(run, "hmm.json", "train-hmm")
}

#[derive(Serialize)]
struct AlignmentLine<'a> {
    id: &'a str,
    labels: Vec<String>,
    spans: Vec<(usize, usize)>,
}

pub fn align(run: &mut Run, model: AlignModel, set: Subset) -> Result<()> {
    let corpus = corpus::load(run)?;
    let idx = subset(&run.cfg, &corpus, set)?;
    let segs: Vec<Segmentation> = match model {
        AlignModel::Scrf => {
            let rec = load_recognizer(run, &corpus.alphabet, false)?;
            idx.par_iter()
                .map(|&i| {
                    let u = &corpus.utterances[i];
                    Ok(rec.align(&u.descriptors, &u.labels)?)
                })
                .collect::<Result<_>>()?
        }
        AlignModel::Hmm => {
            let art = load_hmm(run)?;
            let mlp = load_classifier(run, false)?;
            idx.par_iter()
                .map(|&i| {
                    let u = &corpus.utterances[i];
                    let x = observations(&art, &mlp, &u.descriptors)?;
                    Ok(hmm::forced_align(&art.hmm, &x, &strip_boundaries(&u.labels))?.segmentation)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = String::new();
    for (&i, seg) in idx.iter().zip(&segs) {
        let line = AlignmentLine {
            id: &corpus.ids[i],
            labels: seg
                .segments()
                .iter()
                .map(|s| corpus.alphabet.symbol(s.label))
                .collect::<Result<_, _>>()?,
            spans: seg.segments().iter().map(|s| (s.start, s.end)).collect(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    let name = match model {
        AlignModel::Hmm => "hmm",
        AlignModel::Scrf => "scrf",
    };
    let path = run.path(&format!("alignments/{name}.jsonl"));
    run.write(&path, out.as_bytes())?;
    println!("aligned {} words", idx.len());
    Ok(())
}

pub fn nbest(run: &mut Run, set: Subset) -> Result<()> {
    let corpus = corpus::load(run)?;
    let idx = subset(&run.cfg, &corpus, set)?;
    let art = load_hmm(run)?;
    let mlp = load_classifier(run, false)?;
    let lm = load_lm(run, &corpus.alphabet)?;
    let dcfg = run.cfg.hmm.decode.clone();
    let lattices = idx
        .par_iter()
        .map(|&i| {
            let x = observations(&art, &mlp, &corpus.utterances[i].descriptors)?;
            hmm::nbest(&art.hmm, &lm, &x, &dcfg)?
                .to_jsonl(&corpus.alphabet)
                .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    for (&i, text) in idx.iter().zip(&lattices) {
        let path = run.path(&format!("lattices/{}.jsonl", corpus.ids[i]));
        run.write(&path, text.as_bytes())?;
    }
    println!("{}-best lattices for {} words", dcfg.nbest, idx.len());
    Ok(())
}

fn load_lattices(
    run: &mut Run,
    corpus: &DiskCorpus,
    idx: &[usize],
) -> Result<Vec<CandidateLattice>> {
    let mut files = Vec::with_capacity(idx.len());
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let path = run.path(&format!("lattices/{}.jsonl", corpus.ids[i]));
        run.require(&path, "nbest")?;
        let bytes = std::fs::read(&path)?;
        let text = String::from_utf8(bytes.clone())
            .with_context(|| format!("{} is not UTF-8", path.display()))?;
        let lat = CandidateLattice::from_jsonl(&text, &corpus.alphabet)
            .with_context(|| format!("{}", path.display()))?;
        if lat.baseline.len() != corpus.utterances[i].frames() {
            bail!(
                "{} covers {} frames, the word has {}",
                path.display(),
                lat.baseline.len(),
                corpus.utterances[i].frames()
            );
        }
        out.push(lat);
        files.push((corpus.ids[i].clone(), bytes));
    }
    let key = run.path("lattices/*");
    run.record_inputs(&key, &files);
    Ok(out)
}

fn rescore_model(run: &Run, alphabet: &LetterAlphabet) -> Result<SegmentalModel> {
    let s = &run.cfg.scrf;
    Ok(SegmentalModel::new(
        alphabet.class_count(),
        Topology::Word,
        s.max_dur.max(run.cfg.hmm.model.max_letter_frames),
        1,
        false,
        vec![
            Feature::Baseline,
            Feature::Classifier {
                source: FeatureSource::Letters,
                pool: Pool::DivS,
                classes: FRAME_CLASSES,
            },
            Feature::Lm { log: s.lm_log },
            Feature::Peak,
        ],
    )?)
}

fn rescore_context(
    mlp: &Mlp,
    lm: &Arc<BigramLm>,
    u: &Utterance,
    lat: &CandidateLattice,
) -> Result<FeatureContext> {
    Ok(FeatureContext::new(u.frames())
        .with_letter_posteriors(mlp.predict_sequence(&u.descriptors)?)?
        .with_descriptors(u.descriptors.clone())?
        .with_lm(lm.clone())
        .with_baseline(lat.baseline.clone())?)
}

pub fn train_scrf(run: &mut Run) -> Result<()> {
    let corpus = corpus::load(run)?;
    let tr = nonempty(subset(&run.cfg, &corpus, Subset::Train)?, "training")?;
    let set = select(&corpus, &tr);
    let mlp = load_classifier(run, false)?;
    let lm = load_lm(run, &corpus.alphabet)?;
    match run.cfg.scrf.mode {
        ScrfMode::FirstPass => {
            let model = train_first_pass(
                &corpus.alphabet,
                &mlp,
                &lm,
                &set,
                &run.cfg.scrf.first_pass(),
                seed(run, TAG_SCRF),
            )?;
            let path = run.path("scrf.json");
            run.write(&path, model.to_json()?.as_bytes())?;
        }
        ScrfMode::Rescore => {
            let lats = load_lattices(run, &corpus, &tr)?;
            let policy = run.cfg.scrf.missing_reference;
            let hmm_art = if policy == MissingReference::AddForcedAlignment {
                Some(load_hmm(run)?)
            } else {
                None
            };
            let mut model = rescore_model(run, &corpus.alphabet)?;
            let examples: Vec<Example> = set
                .par_iter()
                .zip(&lats)
                .map(|(u, lat)| {
                    let ctx = rescore_context(&mlp, &lm, u, lat)?;
                    let fa = match &hmm_art {
                        Some(a) => {
                            let x = observations(a, &mlp, &u.descriptors)?;
                            Some(
                                hmm::forced_align(&a.hmm, &x, &strip_boundaries(&u.labels))?
                                    .segmentation,
                            )
                        }
                        None => None,
                    };
                    Ok(lattice_example(
                        &model,
                        &ctx,
                        &lat.segmentations(),
                        &u.truth,
                        fa.as_ref(),
                        policy,
                    )?)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .map(Example::Lattice)
                .collect();
            if examples.is_empty() {
                bail!("no usable lattice training examples");
            }
            let opts = scrf::TrainOptions {
                seed: seed(run, TAG_RESCORE),
                ..run.cfg.scrf.train
            };
            scrf::train(&mut model, &examples, &opts)?;
            let path = run.path("scrf.rescore.json");
            run.write(&path, model.to_json()?.as_bytes())?;
        }
    }
    println!("segmental model trained on {} words", tr.len());
    Ok(())
}

pub fn decode(run: &mut Run, model: DecodeModel, adapted: bool, set: Subset) -> Result<()> {
    let (file, producer) = match model {
        DecodeModel::Hmm => ("hmm.json", "train-hmm"),
        DecodeModel::Scrf => ("scrf.json", "train-scrf"),
        DecodeModel::Rescore => ("scrf.rescore.json", "train-scrf"),
    };
    run.require(&run.path(file), producer)?;
    let corpus = corpus::load(run)?;
    let idx = nonempty(subset(&run.cfg, &corpus, set)?, set.name())?;
    let alphabet = &corpus.alphabet;
    let hyps: Vec<String> = match model {
        DecodeModel::Scrf => {
            let rec = load_recognizer(run, alphabet, adapted)?;
            idx.par_iter()
                .map(|&i| {
                    Ok(hypothesis(
                        alphabet,
                        &rec.decode(&corpus.utterances[i].descriptors)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
        DecodeModel::Hmm => {
            let art = load_hmm(run)?;
            let mlp = load_classifier(run, adapted)?;
            let lm = load_lm(run, alphabet)?;
            let dcfg = run.cfg.hmm.decode.clone();
            idx.par_iter()
                .map(|&i| {
                    let x = observations(&art, &mlp, &corpus.utterances[i].descriptors)?;
                    Ok(alphabet.render(&hmm::viterbi_decode(&art.hmm, &lm, &x, &dcfg)?.letters()))
                })
                .collect::<Result<_>>()?
        }
        DecodeModel::Rescore => {
            let m = load_scrf(run, "scrf.rescore.json")?;
            let mlp = load_classifier(run, adapted)?;
            let lm = load_lm(run, alphabet)?;
            let lats = load_lattices(run, &corpus, &idx)?;
            idx.par_iter()
                .zip(&lats)
                .map(|(&i, lat)| {
                    let ctx = rescore_context(&mlp, &lm, &corpus.utterances[i], lat)?;
                    let d = rescore(&m, &lat.segmentations(), &ctx, Aggregation::Sum)?;
                    Ok(hypothesis(alphabet, &d))
                })
                .collect::<Result<_>>()?
        }
    };
    let name = match model {
        DecodeModel::Hmm => "hmm",
        DecodeModel::Scrf => "scrf",
        DecodeModel::Rescore => "rescore",
    };
    let name = if adapted {
        format!("{name}.adapted")
    } else {
        name.to_string()
    };
    write_hypotheses(run, &corpus, &idx, &name, &hyps)?;
    Ok(())
}

#[derive(Serialize)]
struct CascadeArtifact<'a> {
    second: &'a SegmentalModel,
    segment_classifier: serde_json::Value,
    nbest: usize,
    aggregation: Aggregation,
}

pub fn cascade(run: &mut Run, adapted: bool) -> Result<()> {
    let corpus = corpus::load(run)?;
    let first = load_recognizer(run, &corpus.alphabet, adapted)?;
    let tr = subset(&run.cfg, &corpus, Subset::Train)?;
    let adapt = subset(&run.cfg, &corpus, Subset::Adapt)?;
    // the second pass trains on words the first pass has not seen
    let pass_train = if adapt.is_empty() {
        subset(&run.cfg, &corpus, Subset::Dev)?
    } else {
        adapt.clone()
    };
    let pass_train = nonempty(pass_train, "adaptation or development")?;
    let mut seg_idx = tr;
    seg_idx.extend(&adapt);
    let test = nonempty(subset(&run.cfg, &corpus, Subset::Test)?, "test")?;
    let c: Cascade = experiment::train_cascade(
        &first,
        &corpus.alphabet,
        &select(&corpus, &seg_idx),
        &select(&corpus, &pass_train),
        &run.cfg.cascade,
        seed(run, TAG_CASCADE),
    )?;
    write_json(
        run,
        "cascade.json",
        &CascadeArtifact {
            second: &c.second,
            segment_classifier: serde_json::from_str(&c.segment_classifier.to_json()?)?,
            nbest: c.nbest,
            aggregation: c.aggregation,
        },
    )?;
    let decoded = test
        .par_iter()
        .map(|&i| {
            c.decode(&corpus.utterances[i].descriptors)
                .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let (a, b): (Vec<String>, Vec<String>) = decoded
        .iter()
        .map(|(x, y)| {
            (
                hypothesis(&corpus.alphabet, x),
                hypothesis(&corpus.alphabet, y),
            )
        })
        .unzip();
    write_hypotheses(run, &corpus, &test, "cascade.first", &a)?;
    write_hypotheses(run, &corpus, &test, "cascade.second", &b)?;
    Ok(())
}

#[derive(Serialize)]
struct RealignRound {
    round: usize,
    summary: Summary,
}

pub fn realign_adapt(run: &mut Run, iters: Option<usize>) -> Result<()> {
    let iters = iters.unwrap_or(run.cfg.adaptation.realign_iterations);
    if iters == 0 {
        return Err(config_error("realign-adapt needs at least one iteration"));
    }
    let corpus = corpus::load(run)?;
    let alphabet = &corpus.alphabet;
    let a_idx = nonempty(subset(&run.cfg, &corpus, Subset::Adapt)?, "adaptation")?;
    let test = nonempty(subset(&run.cfg, &corpus, Subset::Test)?, "test")?;
    let (adapt_set, test_set) = (select(&corpus, &a_idx), select(&corpus, &test));
    let base = load_recognizer(run, alphabet, false)?;
    let acfg = run.cfg.adaptation.core();
    let score = |rec: &Recognizer| -> Result<Summary> {
        Ok(Summary::from(&score_corpus(&experiment::evaluate(
            rec, alphabet, &test_set,
        )?)?))
    };
    let mut rounds = vec![RealignRound {
        round: 0,
        summary: score(&base)?,
    }];
    let mut aligner = base.clone();
    for r in 1..=iters {
        let labels = adaptation_labels(&aligner, &adapt_set, LabelSource::ForcedAlignment)?;
        let items: Vec<(&Utterance, &Segmentation)> =
            adapt_set.iter().copied().zip(&labels).collect();
        let rec = adapt_recognizer(
            &base,
            alphabet,
            &items,
            &acfg,
            derive_seed(seed(run, TAG_ADAPT), &[r as u64]),
        )?;
        rounds.push(RealignRound {
            round: r,
            summary: score(&rec)?,
        });
        aligner = rec;
    }
    let mut text = format!("{:<8}{:>8}{:>8}{:>8}{:>8}\n", "round", "LER", "D", "S", "I");
    for r in &rounds {
        let s = &r.summary;
        let _ = writeln!(
            text,
            "{:<8}{:>8.1}{:>8.1}{:>8.1}{:>8.1}",
            if r.round == 0 {
                "none".to_string()
            } else {
                r.round.to_string()
            },
            s.ler,
            s.deletion_rate,
            s.substitution_rate,
            s.insertion_rate
        );
    }
    print!("{text}");
    write_json(run, "realign.json", &rounds)?;
    let path = run.path("realign.txt");
    run.write(&path, text.as_bytes())?;
    let path = run.path("classifier.realigned.json");
    run.write(&path, aligner.classifier.to_json()?.as_bytes())
}

/// Lines of a reference or hypothesis file, keyed by id when every line
/// carries one.
fn read_lines(
    run: &mut Run,
    path: &Path,
) -> Result<(Vec<String>, Option<BTreeMap<String, String>>)> {
    let text = run.read_string(path, "decode")?;
    let lines: Vec<&str> = text.lines().collect();
    let keyed = !lines.is_empty() && lines.iter().all(|l| l.contains('\t'));
    let texts = lines
        .iter()
        .map(|l| l.split_once('\t').map_or(*l, |x| x.1).trim().to_string())
        .collect();
    let map = keyed.then(|| {
        lines
            .iter()
            .filter_map(|l| l.split_once('\t'))
            .map(|(k, v)| (k.to_string(), v.trim().to_string()))
            .collect()
    });
    Ok((texts, map))
}

pub fn score(run: &mut Run, reference: &Path, hyp: &Path, out: Option<&Path>) -> Result<()> {
    let (refs, rmap) = read_lines(run, reference)?;
    let (hyps, hmap) = read_lines(run, hyp)?;
    let pairs: Vec<(String, String)> = match (rmap, hmap) {
        (Some(r), Some(h)) => r
            .into_iter()
            .map(|(k, v)| {
                let hv = h
                    .get(&k)
                    .with_context(|| format!("no hypothesis for {k}"))?;
                Ok((v, hv.clone()))
            })
            .collect::<Result<_>>()?,
        _ => {
            if refs.len() != hyps.len() {
                bail!("{} references but {} hypotheses", refs.len(), hyps.len());
            }
            refs.into_iter().zip(hyps).collect()
        }
    };
    let s = score_corpus(&pairs)?;
    println!(
        "LER {:.1}%  (D {:.1}%  S {:.1}%  I {:.1}%)  N={}",
        s.ler, s.deletion_rate, s.substitution_rate, s.insertion_rate, s.reference_len
    );
    let json = json_bytes(&s)?;
    match out {
        Some(p) => {
            run.write(p, &json)?;
            let tp = p.with_extension("txt");
            run.write(&tp, s.to_text().as_bytes())
        }
        None => {
            let (jp, tp) = (run.path("score.json"), run.path("score.txt"));
            run.write(&jp, &json)?;
            run.write(&tp, s.to_text().as_bytes())
        }
    }
}

pub fn protocol(run: &mut Run) -> Result<()> {
    let report = experiment::run_protocol(&run.cfg.protocol())?;
    let text = report.to_text();
    print!("{text}");
    write_json(run, "protocol.json", &report)?;
    let path = run.path("protocol.txt");
    run.write(&path, text.as_bytes())?;
    write_atomic(&run.path("protocol.config.json"), &json_bytes(&run.cfg)?)
}
