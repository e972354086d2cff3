//! The corpus on disk: a JSON manifest, one descriptor matrix and one
//! ground-truth file per word token.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use segspell_core::alphabet::LetterAlphabet;
use segspell_core::experiment::{adaptation_sets, dependent_split, Utterance};
use segspell_core::synthgen::{CorpusManifest, SyntheticWord};
use segspell_core::vision::io::read_matrix;

use crate::config::{config_error, ExperimentConfig, Split};
use crate::store::Run;

pub fn entry_id(manifest: &CorpusManifest, i: usize) -> String {
    let e = &manifest.entries[i];
    format!(
        "{}_{:03}_{}",
        manifest.signers[e.signer].id, e.word_index, e.rep
    )
}

pub fn manifest_path(run: &Run) -> PathBuf {
    run.cfg
        .data
        .manifest
        .clone()
        .unwrap_or_else(|| run.path("corpus/manifest.json"))
}

/// Loaded corpus with stable word-token ids.
pub struct DiskCorpus {
    pub manifest: CorpusManifest,
    pub alphabet: LetterAlphabet,
    pub ids: Vec<String>,
    pub utterances: Vec<Utterance>,
}

pub fn load(run: &mut Run) -> Result<DiskCorpus> {
    let path = manifest_path(run);
    let text = run.read_string(&path, "gen-data")?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let alphabet = manifest.alphabet()?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut files = Vec::with_capacity(2 * manifest.entries.len());
    let mut utterances = Vec::with_capacity(manifest.entries.len());
    let mut ids = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let (Some(d), Some(t)) = (&e.descriptors, &e.truth) else {
            bail!("manifest entry {i} lacks descriptor or ground-truth paths");
        };
        let (dp, tp) = (dir.join(d), dir.join(t));
        run.require(&dp, "gen-data")?;
        run.require(&tp, "gen-data")?;
        let dbytes = std::fs::read(&dp).with_context(|| format!("reading {}", dp.display()))?;
        let tbytes = std::fs::read(&tp).with_context(|| format!("reading {}", tp.display()))?;
        let descriptors =
            read_matrix(dbytes.as_slice()).with_context(|| format!("{}", dp.display()))?;
        let truth: SyntheticWord =
            serde_json::from_slice(&tbytes).with_context(|| format!("parsing {}", tp.display()))?;
        truth.segmentation.validate(descriptors.nrows())?;
        utterances.push(Utterance {
            signer: e.signer,
            word: truth.word.clone(),
            labels: truth.labels.clone(),
            peaks: truth.peaks.clone(),
            truth: truth.segmentation.clone(),
            descriptors,
        });
        ids.push(entry_id(&manifest, i));
        files.push((d.clone(), dbytes));
        files.push((t.clone(), tbytes));
    }
    run.record_inputs(&dir.join("*"), &files);
    Ok(DiskCorpus {
        manifest,
        alphabet,
        ids,
        utterances,
    })
}

/// Which words a subcommand works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Dev,
    Adapt,
    Test,
    All,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Adapt => "adapt",
            Subset::Test => "test",
            Subset::All => "all",
        }
    }
}

/// Indices of a subset under the configured split.
pub fn subset(cfg: &ExperimentConfig, corpus: &DiskCorpus, which: Subset) -> Result<Vec<usize>> {
    let s = cfg.data.test_signer;
    if s >= corpus.manifest.signers.len() {
        return Err(config_error(format!(
            "test_signer {s} but the corpus has {} signers",
            corpus.manifest.signers.len()
        )));
    }
    if which == Subset::All {
        return Ok((0..corpus.utterances.len()).collect());
    }
    let mine: Vec<usize> = (0..corpus.utterances.len())
        .filter(|&i| corpus.utterances[i].signer == s)
        .collect();
    let protocol = cfg.protocol();
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| mine[i]).collect::<Vec<_>>();
    Ok(match cfg.data.split {
        Split::Independent => {
            let (adapt, test) = adaptation_sets(&protocol, s, mine.len());
            match which {
                Subset::Train => (0..corpus.utterances.len())
                    .filter(|&i| corpus.utterances[i].signer != s)
                    .collect(),
                Subset::Dev => Vec::new(),
                Subset::Adapt => pick(adapt),
                _ => pick(test),
            }
        }
        Split::Dependent => {
            let (train, dev, test) = dependent_split(&protocol, s, mine.len(), cfg.data.fold);
            match which {
                Subset::Train => pick(train),
                Subset::Dev => pick(dev),
                Subset::Adapt => Vec::new(),
                _ => pick(test),
            }
        }
    })
}

pub fn select<'a>(corpus: &'a DiskCorpus, idx: &[usize]) -> Vec<&'a Utterance> {
    idx.iter().map(|&i| &corpus.utterances[i]).collect()
}
