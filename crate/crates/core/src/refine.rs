//! Training a fresh appearance model on the pseudo-GT manifest and running it
//! over the test frames.

use std::path::Path;

use candle_core::{DType, Tensor};

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::map::{ColorImage, SaliencyMap};
use crate::nn::checkpoint::{self, CheckpointKind};
use crate::nn::train::{self, Objective, TrainLog, TrainSample};
use crate::nn::{bce_loss, RefineConfig, RefineNet};
use crate::selection::TrainingManifest;

struct RefineObjective<'a>(&'a RefineNet);

impl Objective for RefineObjective<'_> {
    fn batch_loss(
        &self,
        x: &Tensor,
        target: &Tensor,
        _labels: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let bce = bce_loss(&self.0.forward(x)?, target)?;
        let zero = bce.zeros_like()?;
        Ok((bce.clone(), bce, zero))
    }
}

/// A training pair at network resolution. The target is binarized at 0.5
/// unless soft targets are configured.
pub fn prepare_sample(
    id: &str,
    img: &ColorImage,
    target: &SaliencyMap,
    config: &RefineConfig,
) -> Result<TrainSample> {
    if img.dims() != target.dims() {
        return Err(Error::Integration(format!(
            "frame {id} is {:?} but its pseudo ground truth is {:?}",
            img.dims(),
            target.dims()
        )));
    }
    let target = if config.soft_targets {
        target.clone()
    } else {
        target.binarize(0.5).to_map()
    };
    let [h, w] = config.network.input_size;
    Ok(TrainSample {
        id: id.to_string(),
        input: img.resize(h, w)?,
        target: target.resize(h, w)?,
        label: None,
    })
}

/// Fits the refinement network on manifest entries only, with pixel BCE.
pub fn train_refine(
    manifest: &TrainingManifest,
    config: &RefineConfig,
) -> Result<(RefineNet, TrainLog)> {
    config.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::InvalidInput("training manifest is empty".into()));
    }
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let img = ColorImage::load(&e.frame)?;
            let target = SaliencyMap::load(&e.pseudo_gt)?;
            prepare_sample(&e.frame_id, &img, &target, config)
        })
        .collect::<Result<Vec<_>>>()?;
    train_refine_samples(&samples, config)
}

/// Same as [`train_refine`] on samples already at network resolution.
pub fn train_refine_samples(
    samples: &[TrainSample],
    config: &RefineConfig,
) -> Result<(RefineNet, TrainLog)> {
    let model = RefineNet::build(&config.network, config.train.seed, DType::F32)?;
    if let Some(path) = &config.init_from_mqpm {
        let ckpt = checkpoint::load(path, CheckpointKind::Mqpm)?;
        let n = model.params.assign(&ckpt.tensors, None)?;
        log::info!(
            "initialized {n} refinement parameters from {}",
            path.display()
        );
    }
    let log = train::fit(
        &RefineObjective(&model),
        &model.params,
        samples,
        &config.train,
        config.network.input_size,
    )?;
    Ok((model, log))
}

/// Final maps at native resolution, one per frame.
pub fn infer_refined(frames: &[&ColorImage], model: &RefineNet) -> Result<Vec<SaliencyMap>> {
    model.predict(frames)
}

/// Runs the model over a whole corpus, writing 8-bit maps to
/// `<out>/<sequence>/<index>.png`. Returns the number of maps written.
pub fn infer_corpus(corpus: &Corpus, model: &RefineNet, out: &Path) -> Result<usize> {
    let indices: Vec<usize> = (0..corpus.len()).collect();
    for chunk in indices.chunks(16) {
        let frames = chunk
            .iter()
            .map(|&i| corpus.load(i))
            .collect::<Result<Vec<_>>>()?;
        let maps = infer_refined(&frames.iter().collect::<Vec<_>>(), model)?;
        for (&i, map) in chunk.iter().zip(maps) {
            map.save(&out.join(corpus.entries[i].key.rel_path("png")))?;
        }
    }
    Ok(corpus.len())
}
