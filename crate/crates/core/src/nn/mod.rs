//! The motion quality perception network: architecture, objectives, training
//! and inference.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod params;
pub mod train;

use std::path::Path;

use candle_core::{DType, Tensor};
pub use checkpoint::CheckpointKind;
pub use config::{MqpmConfig, NetworkConfig, RefineConfig, TrainConfig};
pub use loss::{bce_loss, cls_loss, total_loss, LOG_EPS};
pub use model::{DilatedAttention, Mqpm, RefineNet};
pub use train::{EpochLoss, TrainLog, TrainSample};

use crate::error::{Error, Result};
use crate::map::{ColorImage, SaliencyMap};
use crate::quality::MqpmSample;

/// Frames per forward pass during inference.
const INFER_BATCH: usize = 16;

/// Network output for one frame, at the frame's native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MqpmOutput {
    pub motion_saliency: SaliencyMap,
    pub quality_confidence: f64,
}

/// High-quality motion iff the confidence is at least one half.
pub fn quality_decision(q: f64) -> bool {
    q >= 0.5
}

struct MqpmObjective<'a>(&'a Mqpm);

impl train::Objective for MqpmObjective<'_> {
    fn batch_loss(
        &self,
        x: &Tensor,
        target: &Tensor,
        labels: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let labels = labels.ok_or_else(|| Error::InvalidInput("quality labels missing".into()))?;
        let (ms, q) = self.0.forward(x)?;
        let bce = bce_loss(&ms, target)?;
        let cls = cls_loss(&q, labels)?;
        Ok((total_loss(&bce, &cls)?, bce, cls))
    }
}

/// Trains the quality network on `(flow rendering, mask, label)` triplets;
/// both branches see every frame.
pub fn train_mqpm(trainset: &[MqpmSample], config: &MqpmConfig) -> Result<(Mqpm, TrainLog)> {
    config.validate()?;
    if trainset.is_empty() {
        return Err(Error::InvalidInput("quality training set is empty".into()));
    }
    let positives = trainset.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == trainset.len() {
        log::warn!(
            "quality training set has a single class ({positives} of {} positive)",
            trainset.len()
        );
    }
    let [h, w] = config.network.input_size;
    let samples = trainset
        .iter()
        .map(|s| {
            Ok(TrainSample {
                id: s.key.id(),
                input: s.flow_rgb.resize(h, w)?,
                target: s.gt.resize(h, w)?.to_map(),
                label: Some(f32::from(s.label)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = Mqpm::build(&config.network, config.train.seed, DType::F32)?;
    let log = train::fit(
        &MqpmObjective(&model),
        &model.params,
        &samples,
        &config.train,
        config.network.input_size,
    )?;
    Ok((model, log))
}

impl Mqpm {
    pub fn save(&self, path: &Path, config: &MqpmConfig) -> Result<()> {
        checkpoint::save(path, CheckpointKind::Mqpm, config, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, MqpmConfig)> {
        let ckpt = checkpoint::load(path, CheckpointKind::Mqpm)?;
        let config: MqpmConfig = ckpt.config()?;
        let network = NetworkConfig {
            encoder_weights: None,
            ..config.network.clone()
        };
        let model = Mqpm::build(&network, 0, DType::F32)?;
        model.params.assign(&ckpt.tensors, None)?;
        Ok((model, config))
    }

    /// Runs the network on flow renderings; maps come back at native size.
    pub fn predict(&self, images: &[&ColorImage]) -> Result<Vec<MqpmOutput>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_BATCH) {
            let x = train::images_to_tensor(chunk, self.config.input_size, self.params.dtype())?;
            let (ms, q) = self.forward(&x)?;
            let maps = train::tensor_to_maps(&ms)?;
            let qs = q.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for ((img, map), q) in chunk.iter().zip(maps).zip(qs) {
                out.push(MqpmOutput {
                    motion_saliency: map.resize(img.height(), img.width())?,
                    quality_confidence: q,
                });
            }
        }
        Ok(out)
    }
}

/// Quality prediction for a single flow rendering and its decision.
pub fn predict_quality(flow_rgb: &ColorImage, model: &Mqpm) -> Result<(MqpmOutput, bool)> {
    let out = model
        .predict(&[flow_rgb])?
        .pop()
        .expect("one output per input");
    let decision = quality_decision(out.quality_confidence);
    Ok((out, decision))
}

impl RefineNet {
    pub fn save(&self, path: &Path, config: &RefineConfig) -> Result<()> {
        checkpoint::save(path, CheckpointKind::Refine, config, &self.params)
    }

    pub fn load(path: &Path) -> Result<(Self, RefineConfig)> {
        let ckpt = checkpoint::load(path, CheckpointKind::Refine)?;
        let config: RefineConfig = ckpt.config()?;
        let network = NetworkConfig {
            encoder_weights: None,
            ..config.network.clone()
        };
        let model = RefineNet::build(&network, 0, DType::F32)?;
        model.params.assign(&ckpt.tensors, None)?;
        Ok((model, config))
    }

    /// Saliency maps for RGB frames at their native size.
    pub fn predict(&self, frames: &[&ColorImage]) -> Result<Vec<SaliencyMap>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFER_BATCH) {
            let x = train::images_to_tensor(chunk, self.config.input_size, self.params.dtype())?;
            let maps = train::tensor_to_maps(&self.forward(&x)?)?;
            for (img, map) in chunk.iter().zip(maps) {
                out.push(map.resize(img.height(), img.width())?);
            }
        }
        Ok(out)
    }
}
