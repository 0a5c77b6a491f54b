use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Downsampling factor of the VGG-16 backbone (five 2× poolings).
pub const ENCODER_STRIDE: usize = 32;
/// Convolutions per VGG-16 stage.
pub const VGG16_STAGES: [usize; 5] = [2, 2, 3, 3, 3];
/// VGG-16 stage widths at full scale.
pub const VGG16_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

/// Architecture shared by the quality network and the refinement network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Network input `[height, width]`; frames are resized to it.
    pub input_size: [usize; 2],
    pub encoder: String,
    /// Optional safetensors file with torchvision-style `features.N.weight`
    /// VGG-16 tensors. Requires `base_channels = 64`.
    pub encoder_weights: Option<PathBuf>,
    /// Width of the first encoder stage; later stages scale as in VGG-16.
    pub base_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub decoder_channels: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: [256, 256],
            encoder: "vgg16".into(),
            encoder_weights: None,
            base_channels: 64,
            dilation_rates: vec![2, 4, 6, 8],
            decoder_channels: vec![256, 128, 64],
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder != "vgg16" {
            return Err(Error::Config(format!(
                "unsupported encoder `{}`",
                self.encoder
            )));
        }
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} is not a positive multiple of the encoder stride {ENCODER_STRIDE}"
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.dilation_rates.is_empty()
            || self.dilation_rates[0] == 0
            || self.dilation_rates.windows(2).any(|p| p[1] <= p[0])
        {
            return Err(Error::Config(format!(
                "dilation rates {:?} must be positive and strictly increasing",
                self.dilation_rates
            )));
        }
        if self.decoder_channels.len() != 3 || self.decoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "decoder needs three positive widths, got {:?}",
                self.decoder_channels
            )));
        }
        if self.encoder_weights.is_some() && self.base_channels != 64 {
            return Err(Error::Config(
                "pretrained encoder weights require base_channels = 64".into(),
            ));
        }
        Ok(())
    }

    pub fn stage_widths(&self) -> [usize; 5] {
        VGG16_WIDTHS.map(|w| (w * self.base_channels / 64).max(1))
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hflip_augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            hflip_augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Quality network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MqpmConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl MqpmConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()
    }
}

/// Refinement network configuration: the localization branch alone, trained
/// on pseudo ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Train against the continuous pseudo-GT instead of its 0.5 binarization.
    pub soft_targets: bool,
    /// Initialize encoder, attention and decoder from a quality-network checkpoint.
    pub init_from_mqpm: Option<PathBuf>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            soft_targets: false,
            init_from_mqpm: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        MqpmConfig::default().validate().unwrap();
        RefineConfig::default().validate().unwrap();
        assert_eq!(RefineConfig::default().train.epochs, 5);
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut c = NetworkConfig::default();
        c.input_size = [100, 100];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.input_size = [224, 224];
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unsorted_rates_and_zero_batch() {
        let mut c = NetworkConfig::default();
        c.dilation_rates = vec![4, 2];
        assert!(c.validate().is_err());
        c.dilation_rates = vec![];
        assert!(c.validate().is_err());
        let t = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn widths_scale_with_base() {
        let c = NetworkConfig {
            base_channels: 8,
            ..NetworkConfig::default()
        };
        assert_eq!(c.stage_widths(), [8, 16, 32, 64, 64]);
    }
}
