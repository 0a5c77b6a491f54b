//! Motion quality scores, the balancing threshold and weak quality labels.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{encode_color_wheel, FlowField, FrameKey, MaxMagnitude};
use crate::map::{BinaryMask, ColorImage, SaliencyMap};
use crate::metrics::s_measure;

/// A pretrained image saliency model, applied here to flow renderings.
pub trait SaliencyModel: Send + Sync {
    fn predict(&self, image: &ColorImage) -> Result<SaliencyMap>;
}

impl<F> SaliencyModel for F
where
    F: Fn(&ColorImage) -> Result<SaliencyMap> + Send + Sync,
{
    fn predict(&self, image: &ColorImage) -> Result<SaliencyMap> {
        self(image)
    }
}

/// Global color contrast against the image border, computed on a coarse
/// grid of `cell`×`cell` blocks and upsampled bilinearly. Stands in for a
/// lightweight image detector on synthetic corpora; the coarse grid gives the
/// soft object boundaries typical of saliency computed from flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSaliency {
    pub cell: usize,
    pub border: usize,
}

impl Default for ContrastSaliency {
    fn default() -> Self {
        Self { cell: 4, border: 2 }
    }
}

impl SaliencyModel for ContrastSaliency {
    fn predict(&self, image: &ColorImage) -> Result<SaliencyMap> {
        let (h, w) = image.dims();
        let cell = self.cell.max(1);
        let border = self.border.max(1).min(h.min(w).div_ceil(2));

        let mut reference = [0.0f64; 3];
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if y < border || x < border || y >= h - border || x >= w - border {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        reference[c] += f64::from(p[c]);
                    }
                    count += 1;
                }
            }
        }
        for r in &mut reference {
            *r /= count as f64;
        }

        let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
        let mut grid = Array2::<f64>::zeros((gh, gw));
        for gy in 0..gh {
            for gx in 0..gw {
                let mut mean = [0.0f64; 3];
                let mut n = 0usize;
                for y in gy * cell..((gy + 1) * cell).min(h) {
                    for x in gx * cell..((gx + 1) * cell).min(w) {
                        let p = image.pixel(y, x);
                        for c in 0..3 {
                            mean[c] += f64::from(p[c]);
                        }
                        n += 1;
                    }
                }
                grid[[gy, gx]] = (0..3)
                    .map(|c| (mean[c] / n as f64 - reference[c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
        }
        let peak = grid.iter().copied().fold(0.0, f64::max);
        if peak > 1e-9 {
            grid.mapv_inplace(|v| v / peak);
        } else {
            grid.fill(0.0);
        }
        SaliencyMap::from_clamped(grid)?.resize(h, w)
    }
}

/// Runs an external image saliency model. `{input}` and `{output}` in the
/// template are replaced by PNG paths; the command writes an 8-bit map.
#[derive(Debug)]
pub struct CommandSaliency {
    pub template: String,
    pub scratch: PathBuf,
    slot: Mutex<u64>,
}

impl CommandSaliency {
    pub fn new(template: impl Into<String>, scratch: impl Into<PathBuf>) -> Self {
        Self {
            template: template.into(),
            scratch: scratch.into(),
            slot: Mutex::new(0),
        }
    }
}

impl SaliencyModel for CommandSaliency {
    fn predict(&self, image: &ColorImage) -> Result<SaliencyMap> {
        let mut n = self.slot.lock().unwrap_or_else(|p| p.into_inner());
        *n += 1;
        let input = self.scratch.join(format!("theta_in_{n}.png"));
        let output = self.scratch.join(format!("theta_out_{n}.png"));
        image.save(&input)?;
        let cmd = self
            .template
            .replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy());
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::MissingDependency(format!("saliency command `{cmd}`: {e}")))?;
        if !status.success() {
            return Err(Error::Integration(format!(
                "saliency command exited with {status}"
            )));
        }
        SaliencyMap::load(&output)
    }
}

/// Structure-measure agreement between the saliency of a flow rendering and
/// the annotated mask.
pub fn compute_mqs(
    flow_rgb: &ColorImage,
    gt: &BinaryMask,
    theta: &dyn SaliencyModel,
) -> Result<f64> {
    let saliency = theta.predict(flow_rgb)?;
    mqs_from_saliency(&saliency, gt)
}

fn mqs_from_saliency(saliency: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    if saliency.dims() != gt.dims() {
        return Err(Error::Integration(format!(
            "saliency model returned {:?} for a {:?} input",
            saliency.dims(),
            gt.dims()
        )));
    }
    s_measure(saliency, gt)
}

/// Outcome of the balancing-threshold iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    /// Final threshold λ.
    pub lam: f64,
    /// Mean of the scores at or above the final λ.
    pub omega: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fallback_used: bool,
    /// Stopped because the next λ would have left no score at or above it.
    pub empty_upper_stop: bool,
    /// Replaced by the median because one label class was empty.
    pub median_fallback: bool,
    /// Every λ visited, starting with the initial mean.
    pub trace: Vec<f64>,
}

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Fits λ by the fixed-point update `ω = mean{m ≥ λ}`, `λ ← (1 + ω) / 2`
/// starting from the mean score.
///
/// Iteration stops on convergence (`|λ' − λ| < tol`), after `max_iter`
/// updates, or when `λ'` would exceed every score; in the last case the
/// previous λ is kept. If λ then leaves one label class empty, the median is
/// used instead. Scores are processed in sorted order so the result does not
/// depend on input order.
pub fn fit_threshold(mqs_values: &[f64], tol: f64, max_iter: usize) -> Result<ThresholdFit> {
    if mqs_values.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit a threshold to no scores".into(),
        ));
    }
    if let Some(bad) = mqs_values.iter().find(|m| !m.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    let mut sorted = mqs_values.to_vec();
    sorted.sort_by(f64::total_cmp);

    // Mean of the suffix of `sorted` at or above `lam`; None when empty.
    let upper_mean = |lam: f64| -> Option<f64> {
        let start = sorted.partition_point(|&m| m < lam);
        let upper = &sorted[start..];
        (!upper.is_empty()).then(|| upper.iter().sum::<f64>() / upper.len() as f64)
    };

    let mut lam = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let mut trace = vec![lam];
    let mut iterations = 0;
    let mut converged = false;
    let mut empty_upper_stop = false;

    while iterations < max_iter {
        let omega = upper_mean(lam).expect("upper set of the current lambda is non-empty");
        let next = (1.0 + omega) / 2.0;
        iterations += 1;
        if upper_mean(next).is_none() {
            empty_upper_stop = true;
            break;
        }
        let delta = (next - lam).abs();
        lam = next;
        trace.push(lam);
        if delta < tol {
            converged = true;
            break;
        }
    }

    let mut median_fallback = false;
    let positives = sorted.len() - sorted.partition_point(|&m| m < lam);
    if positives == 0 || positives == sorted.len() {
        median_fallback = true;
        lam = median(&sorted);
    }
    let omega = upper_mean(lam).unwrap_or(lam);

    Ok(ThresholdFit {
        lam,
        omega,
        iterations,
        converged,
        fallback_used: empty_upper_stop || median_fallback,
        empty_upper_stop,
        median_fallback,
        trace,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// `1` for scores at or above λ (high-quality motion), `0` below.
pub fn label_for(mqs: f64, lam: f64) -> u8 {
    u8::from(mqs >= lam)
}

/// Per-frame motion quality bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub frame_id: String,
    pub mqs: f64,
    pub label: u8,
    pub flow_saliency: SaliencyMap,
}

pub fn assign_labels(records: Vec<QualityRecord>, fit: &ThresholdFit) -> Vec<QualityRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.label = label_for(r.mqs, fit.lam);
            r
        })
        .collect()
}

/// Tab-separated `frame_id`, `mqs`, `label` lines with a header.
pub fn records_to_tsv(records: &[QualityRecord]) -> String {
    let mut out = String::from("frame_id\tmqs\tlabel\n");
    for r in records {
        out.push_str(&format!("{}\t{:.6}\t{}\n", r.frame_id, r.mqs, r.label));
    }
    out
}

/// Parses the output of [`records_to_tsv`] into `(frame_id, mqs, label)`.
pub fn parse_records_tsv(text: &str) -> Result<Vec<(String, f64, u8)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("bad quality record line `{line}`")));
            }
            let mqs = cols[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad score in `{line}`")))?;
            let label = cols[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad label in `{line}`")))?;
            Ok((cols[0].to_string(), mqs, label))
        })
        .collect()
}

/// One annotated training frame for the quality network.
#[derive(Debug, Clone)]
pub struct AnnotatedFlow {
    pub key: FrameKey,
    pub flow: FlowField,
    pub gt: BinaryMask,
}

/// One `(flow rendering, mask, label)` triplet.
#[derive(Debug, Clone)]
pub struct MqpmSample {
    pub key: FrameKey,
    pub flow_rgb: ColorImage,
    pub gt: BinaryMask,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainsetProvenance {
    pub lam: f64,
    pub positives: usize,
    pub negatives: usize,
    pub degenerate: bool,
    pub fit: ThresholdFit,
}

#[derive(Debug, Clone)]
pub struct MqpmTrainset {
    pub samples: Vec<MqpmSample>,
    pub records: Vec<QualityRecord>,
    pub provenance: TrainsetProvenance,
}

/// Scores every frame, fits λ once over the whole corpus and labels each
/// frame.
pub fn build_mqpm_trainset(
    frames: &[AnnotatedFlow],
    theta: &dyn SaliencyModel,
    max_magnitude: MaxMagnitude,
) -> Result<MqpmTrainset> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let mut rendered = Vec::with_capacity(frames.len());
    let mut records = Vec::with_capacity(frames.len());
    for frame in frames {
        let flow_rgb = encode_color_wheel(&frame.flow, max_magnitude)?;
        let saliency = theta.predict(&flow_rgb).map_err(|e| {
            Error::Integration(format!("saliency model failed on frame {}: {e}", frame.key))
        })?;
        let mqs = mqs_from_saliency(&saliency, &frame.gt)
            .map_err(|e| Error::Integration(format!("frame {}: {e}", frame.key)))?;
        records.push(QualityRecord {
            frame_id: frame.key.id(),
            mqs,
            label: 0,
            flow_saliency: saliency,
        });
        rendered.push(flow_rgb);
    }

    let scores: Vec<f64> = records.iter().map(|r| r.mqs).collect();
    let fit = fit_threshold(&scores, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let records = assign_labels(records, &fit);
    let positives = records.iter().filter(|r| r.label == 1).count();
    let negatives = records.len() - positives;
    let degenerate = positives == 0 || negatives == 0;
    if degenerate {
        log::warn!(
            "degenerate corpus: {} frames all labeled {} (lambda = {:.4})",
            records.len(),
            if negatives == 0 { 1 } else { 0 },
            fit.lam
        );
    }

    let samples = frames
        .iter()
        .zip(rendered)
        .zip(&records)
        .map(|((frame, flow_rgb), record)| MqpmSample {
            key: frame.key.clone(),
            flow_rgb,
            gt: frame.gt.clone(),
            label: record.label,
        })
        .collect();

    Ok(MqpmTrainset {
        samples,
        provenance: TrainsetProvenance {
            lam: fit.lam,
            positives,
            negatives,
            degenerate,
            fit,
        },
        records,
    })
}
