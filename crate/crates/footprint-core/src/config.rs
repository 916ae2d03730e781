//! Experiment configuration: one JSON file tying together data, model,
//! loss, augmentation, trainer, and optional TTA settings, with a stable
//! fingerprint for report provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::{DecoderKind, DecoderSpec, EncoderSpec};
use crate::trainer::TrainConfig;
use crate::tta::TtaPlan;

fn default_encoder() -> String {
    "vgg16".into()
}
fn default_width() -> f64 {
    1.0
}
fn default_decoder() -> String {
    "unetpp".into()
}

/// Network selection by preset name, with a width multiplier for
/// down-scaled desk runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_encoder")]
    pub encoder: String,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    /// "unetpp" or "deeplabv3plus".
    #[serde(default = "default_decoder")]
    pub decoder: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: default_encoder(),
            width_multiplier: default_width(),
            decoder: default_decoder(),
        }
    }
}

impl ModelConfig {
    pub fn build_specs(&self) -> Result<(EncoderSpec, DecoderSpec)> {
        let enc = EncoderSpec::preset(&self.encoder, self.width_multiplier)?;
        enc.validate()?;
        let dec = match self.decoder.as_str() {
            "unetpp" => DecoderSpec::unetpp(enc.stages.len()),
            "deeplabv3plus" => DecoderSpec::deeplabv3plus(),
            other => {
                return Err(Error::UnknownPreset {
                    name: other.into(),
                    valid: "unetpp, deeplabv3plus".into(),
                })
            }
        };
        dec.validate(&enc)?;
        Ok((enc, dec))
    }

    pub fn decoder_kind(&self) -> Result<DecoderKind> {
        match self.decoder.as_str() {
            "unetpp" => Ok(DecoderKind::Unetpp),
            "deeplabv3plus" => Ok(DecoderKind::Deeplabv3plus),
            other => Err(Error::UnknownPreset {
                name: other.into(),
                valid: "unetpp, deeplabv3plus".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// Dataset manifest path; tile paths inside it are relative to its
    /// parent directory.
    pub manifest: PathBuf,
}

/// TTA selection: a named preset or a fully explicit plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TtaConfig {
    Preset(String),
    Plan(TtaPlan),
}

impl TtaConfig {
    pub fn plan(&self) -> Result<TtaPlan> {
        let plan = match self {
            TtaConfig::Preset(name) => TtaPlan::preset(name)?,
            TtaConfig::Plan(plan) => plan.clone(),
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// The whole experiment in one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub augmentation: AugmentationPolicy,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tta: Option<TtaConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build_specs()?;
        self.loss.validate()?;
        self.augmentation.validate()?;
        self.trainer.validate()?;
        if let Some(tta) = &self.tta {
            tta.plan()?;
        }
        Ok(())
    }

    /// Stable hash of the serialized config; embedded in reports so a
    /// metric value can be traced back to its settings.
    pub fn fingerprint(&self) -> String {
        fingerprint_value(&serde_json::to_value(self).expect("config serializes"))
    }
}

/// First 12 hex chars of the SHA-256 of a canonical JSON encoding.
pub fn fingerprint_value(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(12);
    for byte in digest.iter().take(6) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
