//! Mini-batch Adam training shared by both networks.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::map::{ColorImage, SaliencyMap};

/// ImageNet channel statistics expected by VGG-16 weights.
const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Normalized `(n, 3, h, w)` batch, resizing each image to `size`.
pub fn images_to_tensor(images: &[&ColorImage], size: [usize; 2], dtype: DType) -> Result<Tensor> {
    let [h, w] = size;
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        let img = img.resize(h, w)?;
        let px = img.pixels();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push((px[[y, x, c]] - MEAN[c]) / STD[c]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `(n, 1, h, w)` batch of maps already at the network size.
pub fn maps_to_tensor(maps: &[&SaliencyMap], dtype: DType) -> Result<Tensor> {
    let (h, w) = maps
        .first()
        .map(|m| m.dims())
        .ok_or_else(|| Error::InvalidInput("empty map batch".into()))?;
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.dims() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: m.dims(),
            });
        }
        data.extend(m.values().iter().map(|v| *v as f32));
    }
    Ok(Tensor::from_vec(data, (maps.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Splits an `(n, 1, h, w)` tensor into maps.
pub fn tensor_to_maps(t: &Tensor) -> Result<Vec<SaliencyMap>> {
    let (n, _, h, w) = t.dims4()?;
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    flat.chunks_exact(h * w)
        .take(n)
        .map(|c| SaliencyMap::from_vec(h, w, c.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
        .collect()
}

/// One supervised example at network resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub input: ColorImage,
    pub target: SaliencyMap,
    pub label: Option<f32>,
}

impl TrainSample {
    /// The sample as seen by the loader: input and target flipped together.
    pub fn augmented(&self, flip: bool) -> (ColorImage, SaliencyMap) {
        if flip {
            (self.input.flip_horizontal(), self.target.flip_horizontal())
        } else {
            (self.input.clone(), self.target.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub bce: f64,
    pub cls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLoss>,
    /// Ids of every sample that contributed to a gradient step.
    pub consumed: BTreeSet<String>,
    pub steps: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,bce,cls\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8}\n",
                e.epoch, e.total, e.bce, e.cls
            ));
        }
        out
    }
}

/// Per-batch objective: returns `(total, bce, cls)` loss tensors.
pub trait Objective {
    fn batch_loss(
        &self,
        x: &Tensor,
        target: &Tensor,
        labels: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, Tensor)>;
}

/// Minimizes `objective` over `samples` with Adam. Order shuffling and flip
/// decisions come from a ChaCha stream seeded by `config.seed`.
pub fn fit(
    objective: &dyn Objective,
    params: &ParamStore,
    samples: &[TrainSample],
    config: &TrainConfig,
    input_size: [usize; 2],
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let dtype = params.dtype();
    let mut opt = AdamW::new(
        params.vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_bce, mut sum_cls) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let flip = config.hflip_augment && rng.random_bool(0.5);
                let (img, target) = samples[i].augmented(flip);
                inputs.push(img);
                targets.push(target);
                labels.push(samples[i].label);
                log.consumed.insert(samples[i].id.clone());
            }
            let x = images_to_tensor(&inputs.iter().collect::<Vec<_>>(), input_size, dtype)?;
            let t = maps_to_tensor(&targets.iter().collect::<Vec<_>>(), dtype)?;
            let l = if labels.iter().all(Option::is_some) {
                let v: Vec<f32> = labels.iter().map(|l| l.unwrap()).collect();
                Some(Tensor::from_vec(v, batch.len(), &Device::Cpu)?.to_dtype(dtype)?)
            } else {
                None
            };
            let (total, bce, cls) = objective.batch_loss(&x, &t, l.as_ref())?;
            opt.backward_step(&total)?;
            let n = batch.len() as f64;
            sum_total += scalar(&total)? * n;
            sum_bce += scalar(&bce)? * n;
            sum_cls += scalar(&cls)? * n;
            log.steps += 1;
        }
        let n = samples.len() as f64;
        let entry = EpochLoss {
            epoch,
            total: sum_total / n,
            bce: sum_bce / n,
            cls: sum_cls / n,
        };
        log::debug!("epoch {epoch}: loss {:.5}", entry.total);
        log.epochs.push(entry);
    }
    Ok(log)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
