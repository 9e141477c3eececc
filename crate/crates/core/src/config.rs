//! Run configuration: one TOML file drives ingestion, training, evaluation
//! and plotting. Every field has a default matching the documented design
//! decisions, and the whole structure round-trips losslessly through TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneVariant};
use crate::data::{Channel, ChannelMap, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskMode};
use crate::prompt::SimilarityMetric;
use crate::train::TrainConfig;

/// Environment variable overriding the output root directory only.
pub const OUT_ROOT_ENV: &str = "LOADCAST_OUT_ROOT";

fn default_channel_codes() -> BTreeMap<String, Channel> {
    ChannelMap::default().0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: PathBuf,
    pub channel_map: BTreeMap<String, Channel>,
    pub n_households: usize,
    pub selection_seed: u64,
    pub split: SplitSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            csv: PathBuf::from("data/load.csv"),
            channel_map: default_channel_codes(),
            n_households: 20,
            selection_seed: 0,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        WindowSection { input_len: 512, horizon: 96, stride: 96 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSection {
    pub period: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        DecomposeSection { period: 48, patch_len: 16, patch_stride: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub k_proto: usize,
    pub m_prefix: usize,
    pub metric: SimilarityMetric,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection { k_proto: 1000, m_prefix: 8, metric: SimilarityMetric::Cosine }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub variant: BackboneVariant,
    /// safetensors weights, required for the pretrained variant.
    pub weights: Option<PathBuf>,
    /// use only the first m transformer blocks; all when absent
    pub layers_used: Option<usize>,
    // toy-variant dimensions
    pub d_prime: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let toy = BackboneConfig::toy();
        BackboneSection {
            variant: BackboneVariant::Toy,
            weights: None,
            layers_used: None,
            d_prime: toy.d_prime,
            n_layers: toy.n_layers,
            n_heads: toy.n_heads,
            vocab_size: toy.vocab_size,
            max_positions: toy.max_positions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub task_mode: TaskMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lambda: t.lambda,
            lr: t.lr,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            task_mode: TaskMode::Mtl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub window: WindowSection,
    pub decompose: DecomposeSection,
    pub prompt: PromptSection,
    pub backbone: BackboneSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.split.validate()?;
        self.train_config().validate()?;
        if self.backbone.variant == BackboneVariant::Pretrained && self.backbone.weights.is_none() {
            return Err(Error::Config("pretrained backbone requires a weights path".into()));
        }
        if self.backbone.variant == BackboneVariant::Toy {
            self.model_config().validate()?;
        }
        Ok(())
    }

    pub fn channel_map(&self) -> ChannelMap {
        ChannelMap(self.data.channel_map.clone())
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            d_prime: self.backbone.d_prime,
            n_layers: self.backbone.n_layers,
            n_heads: self.backbone.n_heads,
            vocab_size: self.backbone.vocab_size,
            max_positions: self.backbone.max_positions,
            variant: self.backbone.variant,
            layers_used: self.backbone.layers_used,
            layer_norm: true,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.window.input_len,
            horizon: self.window.horizon,
            period: self.decompose.period,
            patch_len: self.decompose.patch_len,
            patch_stride: self.decompose.patch_stride,
            k_proto: self.prompt.k_proto,
            m_prefix: self.prompt.m_prefix,
            metric: self.prompt.metric,
            task_mode: self.train.task_mode,
            backbone: self.backbone_config(),
            seed: self.train.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.train.lambda,
            lr: self.train.lr,
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            early_stop_patience: self.train.early_stop_patience,
            seed: self.train.seed,
        }
    }

    /// Output root: the environment override wins over the config value.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }
}
