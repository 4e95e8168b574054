use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CorpusConfig;
use crate::error::{contract_err, read_file, write_file, Error, Result};
use crate::training::TrainConfig;
use crate::transformer::{ModelConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    /// Left context frames stacked onto each frame.
    pub stack_left: usize,
    pub downsample: usize,
    /// Per-speaker mean and variance normalization of the stacked features.
    pub speaker_norm: bool,
    pub corpus: CorpusConfig,
}

impl DataConfig {
    pub fn feature_dim(&self) -> usize {
        (self.stack_left + 1) * self.corpus.feature_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkbSource {
    /// Reference vectors of training speakers.
    InCorpus,
    /// Reference vectors of speakers outside every split.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkbConfig {
    pub source: SkbSource,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    pub alpha: f64,
    /// Omitted means twice the encoded length plus ten.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

/// Everything a run depends on. The training seed is taken from `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub skb: SkbConfig,
    pub decode: DecodeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.corpus.validate()?;
        if self.seeds.is_empty() {
            return Err(contract_err!("experiment `{}` lists no seeds", self.name));
        }
        if self.model.input_dim != self.data.feature_dim() {
            return Err(contract_err!(
                "model input_dim {} but stacked features are {} wide",
                self.model.input_dim,
                self.data.feature_dim()
            ));
        }
        if self.model.vocab_size != self.data.corpus.vocab_size() {
            return Err(contract_err!("model vocab_size {} but corpus has {} tokens", self.model.vocab_size, self.data.corpus.vocab_size()));
        }
        if self.model.d_iv != self.data.corpus.d_iv {
            return Err(contract_err!("model d_iv {} but corpus vectors are {} wide", self.model.d_iv, self.data.corpus.d_iv));
        }
        if self.data.downsample == 0 {
            return Err(contract_err!("downsample must be at least 1"));
        }
        if self.decode.beam == 0 || self.decode.max_len == Some(0) {
            return Err(contract_err!("beam and max_len must be at least 1"));
        }
        if self.model.variant == Variant::Sast {
            let pool = match self.skb.source {
                SkbSource::InCorpus => self.data.corpus.train_speakers,
                SkbSource::External => self.data.corpus.external_speakers,
            };
            if self.skb.size == 0 || self.skb.size > pool {
                return Err(contract_err!("bank of {} from a pool of {pool} {:?} speakers", self.skb.size, self.skb.source));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_file(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_toml())
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seeds: vec![seed], ..self.clone() }
    }
}
