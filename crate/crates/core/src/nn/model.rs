//! Quality network and refinement network.
//!
//! Both share the localization branch: a VGG-16 encoder whose last three
//! stages pass through multi-scale dilated attention and are fused upward by
//! a U-Net style decoder to a full-resolution sigmoid map. The quality
//! network adds a classification head on the last decoder stage.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, VGG16_STAGES};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// 3×3 (or 1×1) convolution with bias, stride 1, "same" padding.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    dilation: usize,
}

impl Conv {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = params.normal(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
            rng,
        )?;
        let bias = params.zeros(format!("{name}.bias"), &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, 1, self.dilation, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// VGG-16 feature extractor returning the pre-pooling outputs of stages 3,
/// 4 and 5 (strides 4, 8 and 16).
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<Vec<Conv>>,
}

impl Encoder {
    fn new(params: &mut ParamStore, config: &NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = config.stage_widths();
        let mut stages = Vec::new();
        let mut in_ch = 3;
        for (s, (&count, &width)) in VGG16_STAGES.iter().zip(widths.iter()).enumerate() {
            let mut convs = Vec::new();
            for c in 0..count {
                convs.push(Conv::new(
                    params,
                    &format!("encoder.stage{s}.conv{c}"),
                    in_ch,
                    width,
                    3,
                    1,
                    rng,
                )?);
                in_ch = width;
            }
            stages.push(convs);
        }
        Ok(Self { stages })
    }

    fn forward(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        let mut h = x.clone();
        let mut outs = Vec::new();
        for (s, convs) in self.stages.iter().enumerate() {
            if s > 0 {
                h = h.max_pool2d(2)?;
            }
            for conv in convs {
                h = conv.forward(&h)?.relu()?;
            }
            if s >= 2 {
                outs.push(h.clone());
            }
        }
        let [a, b, c]: [Tensor; 3] = outs.try_into().expect("three tapped stages");
        Ok([a, b, c])
    }
}

/// Parallel dilated 3×3 convolutions, concatenated and fused by a 1×1
/// convolution into a single-channel sigmoid gate. Output is
/// `x * gate + x`.
#[derive(Debug, Clone)]
pub struct DilatedAttention {
    branches: Vec<Conv>,
    fuse: Conv,
}

impl DilatedAttention {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        channels: usize,
        rates: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let width = (channels / 4).max(1);
        let branches = rates
            .iter()
            .map(|&r| {
                Conv::new(
                    params,
                    &format!("{name}.branch{r}"),
                    channels,
                    width,
                    3,
                    r,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv::new(
            params,
            &format!("{name}.fuse"),
            width * rates.len(),
            1,
            1,
            1,
            rng,
        )?;
        Ok(Self { branches, fuse })
    }

    /// Single-channel attention map in `(0, 1)`.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let feats = self
            .branches
            .iter()
            .map(|b| Ok(b.forward(x)?.relu()?))
            .collect::<Result<Vec<_>>>()?;
        sigmoid(&self.fuse.forward(&Tensor::cat(&feats, 1)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        gate(x, &self.attention(x)?)
    }
}

/// Applies an `(n, 1, h, w)` attention map to features with a residual path.
pub fn gate(features: &Tensor, attention: &Tensor) -> Result<Tensor> {
    Ok((features.broadcast_mul(attention)? + features)?)
}

#[derive(Debug, Clone)]
struct ConvBlock {
    a: Conv,
    b: Conv,
}

impl ConvBlock {
    fn new(
        params: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            a: Conv::new(params, &format!("{name}.conv0"), in_ch, out_ch, 3, 1, rng)?,
            b: Conv::new(params, &format!("{name}.conv1"), out_ch, out_ch, 3, 1, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.b.forward(&self.a.forward(x)?.relu()?)?.relu()?)
    }
}

/// Nearest-neighbour 2× upsampling. candle's upsample backward overwrites the
/// input's accumulated gradient instead of adding to it, so the op is fed a
/// private copy; gradients from other consumers of `x` then survive.
fn up2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.copy()?.upsample_nearest2d(h * 2, w * 2)?)
}

/// Encoder, attention and decoder: RGB `(n, 3, H, W)` to a saliency map
/// `(n, 1, H, W)`, plus the last decoder stage `(n, C, H/2, W/2)`.
#[derive(Debug, Clone)]
pub struct Localization {
    encoder: Encoder,
    attention: [DilatedAttention; 3],
    decoder: [ConvBlock; 3],
    head: Conv,
}

impl Localization {
    fn new(params: &mut ParamStore, config: &NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = config.stage_widths();
        let dec = &config.decoder_channels;
        let encoder = Encoder::new(params, config, rng)?;
        let rates = &config.dilation_rates;
        let attention = [
            DilatedAttention::new(params, "attention0", widths[2], rates, rng)?,
            DilatedAttention::new(params, "attention1", widths[3], rates, rng)?,
            DilatedAttention::new(params, "attention2", widths[4], rates, rng)?,
        ];
        let decoder = [
            ConvBlock::new(params, "decoder.block0", widths[4] + widths[3], dec[0], rng)?,
            ConvBlock::new(params, "decoder.block1", dec[0] + widths[2], dec[1], rng)?,
            ConvBlock::new(params, "decoder.block2", dec[1], dec[2], rng)?,
        ];
        let head = Conv::new(params, "decoder.head", dec[2], 1, 3, 1, rng)?;
        Ok(Self {
            encoder,
            attention,
            decoder,
            head,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let [s3, s4, s5] = self.encoder.forward(x)?;
        let a3 = self.attention[0].forward(&s3)?;
        let a4 = self.attention[1].forward(&s4)?;
        let a5 = self.attention[2].forward(&s5)?;
        let d0 = self.decoder[0].forward(&Tensor::cat(&[up2(&a5)?, a4], 1)?)?;
        let d1 = self.decoder[1].forward(&Tensor::cat(&[up2(&d0)?, a3], 1)?)?;
        let d2 = self.decoder[2].forward(&up2(&d1)?)?;
        let map = sigmoid(&self.head.forward(&up2(&d2)?)?)?;
        Ok((map, d2))
    }
}

/// Quality network: localization branch plus a global-pool → linear →
/// sigmoid classifier over the last decoder stage.
#[derive(Debug, Clone)]
pub struct Mqpm {
    pub config: NetworkConfig,
    pub params: ParamStore,
    localization: Localization,
    cls_weight: Tensor,
    cls_bias: Tensor,
}

impl Mqpm {
    pub fn build(config: &NetworkConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let localization = Localization::new(&mut params, config, &mut rng)?;
        let c = config.decoder_channels[2];
        let bound = 1.0 / (c as f64).sqrt();
        let cls_weight = params.uniform("cls.weight", &[1, c], bound, &mut rng)?;
        let cls_bias = params.zeros("cls.bias", &[1])?;
        let model = Self {
            config: config.clone(),
            params,
            localization,
            cls_weight,
            cls_bias,
        };
        if let Some(path) = &config.encoder_weights {
            load_vgg16_weights(&model.params, path)?;
        }
        Ok(model)
    }

    /// Motion saliency `(n, 1, H, W)` and quality confidence `(n,)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (map, last) = self.localization.forward(x)?;
        let pooled = last.mean(D::Minus1)?.mean(D::Minus1)?;
        let logits = pooled
            .matmul(&self.cls_weight.t()?)?
            .broadcast_add(&self.cls_bias)?;
        let q = sigmoid(&logits)?.squeeze(1)?;
        Ok((map, q))
    }

    /// Parameter signature of the localization branch alone.
    pub fn localization_signature(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .signature()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("cls."))
            .collect()
    }
}

/// Refinement network: the localization branch alone, on RGB frames.
#[derive(Debug, Clone)]
pub struct RefineNet {
    pub config: NetworkConfig,
    pub params: ParamStore,
    localization: Localization,
}

impl RefineNet {
    pub fn build(config: &NetworkConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype);
        let localization = Localization::new(&mut params, config, &mut rng)?;
        let model = Self {
            config: config.clone(),
            params,
            localization,
        };
        if let Some(path) = &config.encoder_weights {
            load_vgg16_weights(&model.params, path)?;
        }
        Ok(model)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.localization.forward(x)?.0)
    }
}

/// Index of each encoder convolution in torchvision's `vgg16().features`.
fn torchvision_index(stage: usize, conv: usize) -> usize {
    let mut idx = 0;
    for (s, &count) in VGG16_STAGES.iter().enumerate() {
        for c in 0..count {
            if (s, c) == (stage, conv) {
                return idx;
            }
            idx += 2; // conv, relu
        }
        idx += 1; // pool
    }
    unreachable!("encoder has no stage {stage} conv {conv}")
}

/// Loads torchvision-named VGG-16 feature weights into the encoder.
pub fn load_vgg16_weights(params: &ParamStore, path: &Path) -> Result<()> {
    let tensors = candle_core::safetensors::load(path, params.device()).map_err(|e| {
        Error::MissingDependency(format!("encoder weights {}: {e}", path.display()))
    })?;
    let mut renamed = HashMap::new();
    for (s, &count) in VGG16_STAGES.iter().enumerate() {
        for c in 0..count {
            let idx = torchvision_index(s, c);
            for part in ["weight", "bias"] {
                let src = format!("features.{idx}.{part}");
                let t = tensors.get(&src).ok_or_else(|| {
                    Error::Integration(format!("{} lacks `{src}`", path.display()))
                })?;
                renamed.insert(format!("encoder.stage{s}.conv{c}.{part}"), t.clone());
            }
        }
    }
    params.assign(&renamed, Some(&|n: &str| n.starts_with("encoder.")))?;
    Ok(())
}
