use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segspell_core::classifier::{AdaptMode, TandemMode, TrainConfig, Transform};
use segspell_core::experiment::{
    AdaptationConfig, CascadeConfig, ClassifierConfig, LabelSource, ProtocolConfig, ScrfConfig,
};
use segspell_core::hmm::{DecodeConfig, HmmConfig, TrainingMode};
use segspell_core::scrf::{MissingReference, TrainOptions};
use segspell_core::synthgen::{SignerSpec, SynthConfig};
use segspell_core::vision::{ColorModelConfig, HogConfig};

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Train on every other signer; adapt and test on `test_signer`.
    Independent,
    /// Train, tune and test on folds of `test_signer`'s words.
    Dependent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Corpus manifest; `<work>/corpus/manifest.json` when unset.
    pub manifest: Option<PathBuf>,
    pub signers: usize,
    pub words: usize,
    pub repetitions: usize,
    pub folds: usize,
    pub reported_folds: usize,
    pub split: Split,
    pub test_signer: usize,
    pub fold: usize,
    pub synth: SynthConfig,
    pub signer_spec: SignerSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: None,
            signers: 4,
            words: 100,
            repetitions: 2,
            folds: 10,
            reported_folds: 8,
            split: Split::Independent,
            test_signer: 0,
            fold: 0,
            synth: SynthConfig::default(),
            signer_spec: SignerSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendSection {
    pub hog: HogConfig,
    pub color: ColorModelConfig,
    /// Principal components kept from the HOG descriptors.
    pub pca_dim: usize,
}

impl Default for FrontendSection {
    fn default() -> Self {
        FrontendSection {
            hog: HogConfig::default(),
            color: ColorModelConfig::default(),
            pca_dim: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    /// One word per line; the built-in word lists when unset.
    pub lexicon: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmSection {
    pub model: HmmConfig,
    pub iterations: usize,
    pub mode: TrainingMode,
    pub decode: DecodeConfig,
    pub tandem: TandemMode,
    pub transform: Transform,
    /// Principal components of the classifier block.
    pub classifier_dims: usize,
    /// Principal components of the descriptors.
    pub image_dims: usize,
}

impl Default for HmmSection {
    fn default() -> Self {
        HmmSection {
            model: HmmConfig::default(),
            iterations: 4,
            mode: TrainingMode::Segmented,
            decode: DecodeConfig::default(),
            tandem: TandemMode::Letter,
            transform: Transform::Log,
            classifier_dims: 12,
            image_dims: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScrfMode {
    /// Full segmentation search over classifier outputs.
    FirstPass,
    /// Reranking of HMM N-best lattices.
    Rescore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrfSection {
    pub mode: ScrfMode,
    pub max_dur: usize,
    pub min_dur: usize,
    pub lm_log: bool,
    pub train: TrainOptions,
    pub missing_reference: MissingReference,
}

impl Default for ScrfSection {
    fn default() -> Self {
        let s = ScrfConfig::default();
        ScrfSection {
            mode: ScrfMode::FirstPass,
            max_dur: s.max_dur,
            min_dur: s.min_dur,
            lm_log: s.lm_log,
            train: s.train,
            missing_reference: MissingReference::AddGroundTruth,
        }
    }
}

impl ScrfSection {
    pub fn first_pass(&self) -> ScrfConfig {
        ScrfConfig {
            max_dur: self.max_dur,
            min_dur: self.min_dur,
            lm_log: self.lm_log,
            train: self.train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSection {
    pub fraction: f64,
    pub mode: AdaptMode,
    pub label_source: LabelSource,
    pub frame_stride: usize,
    pub train: TrainConfig,
    pub realign_iterations: usize,
}

impl Default for AdaptationSection {
    fn default() -> Self {
        let a = AdaptationConfig::default();
        AdaptationSection {
            fraction: a.fraction,
            mode: a.mode,
            label_source: LabelSource::GroundTruth,
            frame_stride: a.frame_stride,
            train: a.train,
            realign_iterations: 2,
        }
    }
}

impl AdaptationSection {
    pub fn core(&self) -> AdaptationConfig {
        AdaptationConfig {
            fraction: self.fraction,
            mode: self.mode,
            frame_stride: self.frame_stride,
            train: self.train.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub frontend: FrontendSection,
    pub classifier: ClassifierConfig,
    pub lm: LmSection,
    pub hmm: HmmSection,
    pub scrf: ScrfSection,
    pub adaptation: AdaptationSection,
    pub cascade: CascadeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            data: DataSection::default(),
            frontend: FrontendSection::default(),
            classifier: ClassifierConfig::default(),
            lm: LmSection::default(),
            hmm: HmmSection::default(),
            scrf: ScrfSection::default(),
            adaptation: AdaptationSection::default(),
            cascade: CascadeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config (defaults when `path` is `None`) and applies
    /// `SEGSPELL_SEED`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Ok(v) = std::env::var("SEGSPELL_SEED") {
            cfg.seed = v.trim().parse().map_err(|_| {
                config_error(format!("SEGSPELL_SEED={v:?} is not an unsigned integer"))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.test_signer >= d.signers {
            return Err(config_error(format!(
                "test_signer {} but only {} signers",
                d.test_signer, d.signers
            )));
        }
        if d.fold >= d.folds {
            return Err(config_error(format!(
                "fold {} but only {} folds",
                d.fold, d.folds
            )));
        }
        for p in d.manifest.iter().chain(&self.lm.lexicon) {
            if !p.exists() {
                return Err(config_error(format!("{} does not exist", p.display())));
            }
        }
        if self.frontend.pca_dim == 0 {
            return Err(config_error("frontend.pca_dim must be positive"));
        }
        if self.hmm.classifier_dims == 0 || self.hmm.image_dims == 0 {
            return Err(config_error(
                "tandem projections need at least one dimension",
            ));
        }
        self.protocol()
            .validate()
            .map_err(|e| config_error(e.to_string()))
            .context("invalid experiment settings")
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            seed: self.seed,
            signers: self.data.signers,
            words: self.data.words,
            repetitions: self.data.repetitions,
            synth: self.data.synth.clone(),
            signer_spec: self.data.signer_spec.clone(),
            folds: self.data.folds,
            reported_folds: self.data.reported_folds,
            classifier: self.classifier.clone(),
            scrf: self.scrf.first_pass(),
            adaptation: self.adaptation.core(),
            realign_iterations: self.adaptation.realign_iterations,
            cascade: self.cascade.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
