//! Experiment configuration: JSON schema, validation and resolution into
//! build-ready pieces.
//!
//! A config file has `model`, `quant`, `train`, `calibration`, `dataset`
//! and `output` sections plus the `aqt_mode` switch for the integer-domain
//! forward pass. See `configs/` in the repository root for working samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::model::{LayerBits, LayerQuantConfig, QuantSettingPreset, ResNetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mini,
    Resnet50,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_multiplier")]
    pub filter_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_channels: Option<usize>,
}

fn default_multiplier() -> f64 {
    1.0
}

/// Either `full` or an integer bit width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BitsSpec {
    Bits(u8),
    Keyword(String),
}

impl BitsSpec {
    pub fn to_layer_bits(&self) -> Result<LayerBits> {
        match self {
            BitsSpec::Bits(b) => {
                if !(2..=16).contains(b) {
                    return Err(Error::Config(format!(
                        "layer bit width must be 2..=16, got {b}"
                    )));
                }
                Ok(LayerBits::Bits(*b))
            }
            BitsSpec::Keyword(k) if k == "full" => Ok(LayerBits::Full),
            BitsSpec::Keyword(k) => Err(Error::Config(format!(
                "unknown precision keyword {k:?} (use \"full\" or a bit width)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomQuant {
    pub default: BitsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_layer: Option<BitsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_layer: Option<BitsSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, BitsSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomQuant>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    /// Base learning rate; the effective rate is `base_lr * batch/256` with
    /// linear warmup then cosine decay.
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_base_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_warmup() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibSection {
    #[serde(default = "default_decay")]
    pub ema_decay: f64,
    #[serde(default = "default_freeze")]
    pub freeze_fraction: f64,
}

impl Default for CalibSection {
    fn default() -> Self {
        CalibSection {
            ema_decay: default_decay(),
            freeze_fraction: default_freeze(),
        }
    }
}

fn default_decay() -> f64 {
    0.9
}
fn default_freeze() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            run_id: None,
        }
    }
}

fn default_out_dir() -> String {
    "runs".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub quant: QuantSection,
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: CalibSection,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub aqt_mode: bool,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hard validation; recoverable oddities surface via [`Self::warnings`].
    pub fn validate(&self) -> Result<()> {
        if self.train.steps == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if self.train.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (batch normalization)".into(),
            ));
        }
        if !(self.calibration.ema_decay > 0.0 && self.calibration.ema_decay < 1.0) {
            return Err(Error::Config(format!(
                "ema_decay must lie in (0,1), got {}",
                self.calibration.ema_decay
            )));
        }
        if !(self.calibration.freeze_fraction > 0.0 && self.calibration.freeze_fraction < 1.0) {
            return Err(Error::Config(format!(
                "freeze_fraction must lie in (0,1), got {}",
                self.calibration.freeze_fraction
            )));
        }
        match (&self.quant.preset, &self.quant.custom) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "quant section must set either preset or custom, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "quant section must set preset or custom".into(),
                ))
            }
            _ => {}
        }
        self.build_quant()?;
        self.build_spec()?.validate()?;
        Ok(())
    }

    /// Advisory findings that do not block a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let f = self.calibration.freeze_fraction;
        if !(0.1..=0.4).contains(&f) {
            out.push(format!(
                "freeze_fraction {f} is outside the recommended 0.1..0.4 band"
            ));
        }
        if let Ok(spec) = self.build_spec() {
            if !spec.multiplier_in_sweep_range() {
                out.push(format!(
                    "filter multiplier {} is outside the usual sweep range [0.5, 2.0]",
                    spec.filter_multiplier
                ));
            }
        }
        out
    }

    pub fn build_spec(&self) -> Result<ResNetSpec> {
        let mut spec = match self.model.kind {
            ModelKind::Mini => ResNetSpec::mini(self.model.filter_multiplier),
            ModelKind::Resnet50 => ResNetSpec::resnet50(self.model.filter_multiplier),
        };
        if let Some(r) = self.model.input_resolution {
            spec.input_resolution = r;
        }
        if let Some(k) = self.model.num_classes {
            spec.num_classes = k;
        }
        if let Some(c) = self.model.input_channels {
            spec.input_channels = c;
        }
        Ok(spec)
    }

    /// Resolve the quant section into a layer config and a short label for
    /// results rows ("custom" when not built from a preset).
    pub fn build_quant(&self) -> Result<(LayerQuantConfig, String)> {
        if let Some(name) = &self.quant.preset {
            let preset = QuantSettingPreset::from_name(name)?;
            return Ok((preset.layer_config(), preset.name().to_string()));
        }
        let custom = self
            .quant
            .custom
            .as_ref()
            .expect("validated: preset xor custom");
        let default = custom.default.to_layer_bits()?;
        let cfg = LayerQuantConfig {
            default,
            first_layer: custom
                .first_layer
                .as_ref()
                .map(|b| b.to_layer_bits())
                .transpose()?
                .unwrap_or(default),
            last_layer: custom
                .last_layer
                .as_ref()
                .map(|b| b.to_layer_bits())
                .transpose()?
                .unwrap_or(default),
            overrides: custom
                .overrides
                .iter()
                .map(|(k, v)| Ok((k.clone(), v.to_layer_bits()?)))
                .collect::<Result<_>>()?,
        };
        Ok((cfg, "custom".to_string()))
    }

    /// Effective learning rate after the batch-size scaling rule.
    pub fn effective_base_lr(&self) -> f64 {
        self.train.base_lr * self.train.batch_size as f64 / 256.0
    }

    pub fn warmup_steps(&self) -> usize {
        (self.train.warmup_fraction * self.train.steps as f64).round() as usize
    }

    pub fn run_id(&self) -> String {
        if let Some(id) = &self.output.run_id {
            return id.clone();
        }
        let preset = self
            .quant
            .preset
            .clone()
            .unwrap_or_else(|| "custom".into());
        format!(
            "{preset}_c{:.2}_s{}",
            self.model.filter_multiplier, self.train.seed
        )
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
