use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod corpus;
mod store;

use config::{ConfigError, ExperimentConfig};
use corpus::Subset;
use store::Run;

/// Fingerspelling recognition pipelines over synthetic or extracted
/// hand-shape descriptors.
///
/// Every subcommand reads its inputs from and writes its artifacts to the
/// work directory, plus a run record under `runs/`. Exit codes: 0 on
/// success, 2 on a configuration error, 3 on a data error or missing
/// upstream artifact.
#[derive(Parser, Debug)]
#[command(name = "segspell", version)]
struct Cli {
    /// Work directory holding every artifact.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Gt,
    Fa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlignModel {
    Hmm,
    Scrf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecodeModel {
    Hmm,
    Scrf,
    Rescore,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus: descriptors, ground truth, manifest.
    GenData {
        /// Also render frames and hand masks of the first N words.
        #[arg(long, value_name = "N")]
        render: Option<usize>,
    },
    /// Turn a directory of video frames into a descriptor matrix.
    ExtractFeatures {
        /// Frame images (PNG or PPM), processed in file-name order.
        #[arg(long)]
        frames: PathBuf,
        /// Hand ROI masks named like the frames they annotate.
        #[arg(long)]
        rois: PathBuf,
        /// Mask of pixels never treated as hand.
        #[arg(long)]
        exclusion: Option<PathBuf>,
        /// Output descriptor matrix.
        #[arg(long)]
        out: PathBuf,
        /// Project with this PCA model.
        #[arg(long, conflicts_with = "fit_pca")]
        pca: Option<PathBuf>,
        /// Fit a PCA model on these frames, save it here and project.
        #[arg(long)]
        fit_pca: Option<PathBuf>,
    },
    /// Train the letter bigram LM (`lm.arpa`).
    TrainLm,
    /// Train the frame classifier (`classifier.json`).
    TrainClassifier,
    /// Adapt the classifier to the test signer (`classifier.adapted.json`).
    Adapt {
        /// Frame labels from ground truth or forced alignment; the config's
        /// label source by default.
        #[arg(long)]
        source: Option<Source>,
    },
    /// Train the tandem HMM (`hmm.json`).
    TrainHmm,
    /// Force-align reference spellings (`alignments/<model>.jsonl`).
    Align {
        #[arg(long, value_enum, default_value = "scrf")]
        model: AlignModel,
        #[arg(long, value_enum, default_value = "test")]
        set: Subset,
    },
    /// Write HMM N-best lattices (`lattices/<id>.jsonl`).
    Nbest {
        #[arg(long, value_enum, default_value = "all")]
        set: Subset,
    },
    /// Train the segmental CRF (`scrf.json` or `scrf.rescore.json`).
    TrainScrf,
    /// Decode a word set (`decode/<model>.hyp.txt` and `.ref.txt`).
    Decode {
        #[arg(long, value_enum, default_value = "scrf")]
        model: DecodeModel,
        /// Use the adapted classifier.
        #[arg(long)]
        adapted: bool,
        #[arg(long, value_enum, default_value = "test")]
        set: Subset,
    },
    /// Train and run the two-pass cascade (`cascade.json`).
    Cascade {
        /// Build on the adapted classifier.
        #[arg(long)]
        adapted: bool,
    },
    /// Iterated forced-alignment adaptation (`realign.json`, `realign.txt`).
    RealignAdapt {
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Letter error rate of hypotheses against references, one word per
    /// line, optionally prefixed by `id<TAB>`.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full recognition protocol on a freshly generated corpus
    /// (`protocol.json`, `protocol.txt`).
    Protocol,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::ExtractFeatures { .. } => "extract-features",
            Command::TrainLm => "train-lm",
            Command::TrainClassifier => "train-classifier",
            Command::Adapt { .. } => "adapt",
            Command::TrainHmm => "train-hmm",
            Command::Align { .. } => "align",
            Command::Nbest { .. } => "nbest",
            Command::TrainScrf => "train-scrf",
            Command::Decode { .. } => "decode",
            Command::Cascade { .. } => "cascade",
            Command::RealignAdapt { .. } => "realign-adapt",
            Command::Score { .. } => "score",
            Command::Protocol => "protocol",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the thread pool")?;
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    let mut run = Run::new(&cli.work, cfg, cli.command.name());
    match cli.command {
        Command::GenData { render } => commands::gen_data(&mut run, render)?,
        Command::ExtractFeatures {
            frames,
            rois,
            exclusion,
            out,
            pca,
            fit_pca,
        } => commands::extract_features(
            &mut run,
            &frames,
            &rois,
            exclusion.as_deref(),
            &out,
            pca.as_deref(),
            fit_pca.as_deref(),
        )?,
        Command::TrainLm => commands::train_lm(&mut run)?,
        Command::TrainClassifier => commands::train_classifier(&mut run)?,
        Command::Adapt { source } => commands::adapt(&mut run, source)?,
        Command::TrainHmm => commands::train_hmm(&mut run)?,
        Command::Align { model, set } => commands::align(&mut run, model, set)?,
        Command::Nbest { set } => commands::nbest(&mut run, set)?,
        Command::TrainScrf => commands::train_scrf(&mut run)?,
        Command::Decode {
            model,
            adapted,
            set,
        } => commands::decode(&mut run, model, adapted, set)?,
        Command::Cascade { adapted } => commands::cascade(&mut run, adapted)?,
        Command::RealignAdapt { iters } => commands::realign_adapt(&mut run, iters)?,
        Command::Score {
            reference,
            hyp,
            out,
        } => commands::score(&mut run, &reference, &hyp, out.as_deref())?,
        Command::Protocol => commands::protocol(&mut run)?,
    }
    run.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
