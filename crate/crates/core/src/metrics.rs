//! Saliency evaluation: MAE, the F-measure family, the structure measure and
//! the consistency degree used to rank candidate frames.
//!
//! Every function here is pure.

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{quantize, same_dims, BinaryMask, SaliencyMap};

/// β² of the F-measure.
pub const BETA_SQ: f64 = 0.3;
/// Number of evenly spaced binarization thresholds in `[0, 1]`.
pub const THRESHOLD_COUNT: usize = 256;
/// Object/region balance of the structure measure.
pub const S_ALPHA: f64 = 0.5;
/// Machine epsilon used by the reference structure-measure code.
const EPS: f64 = f64::EPSILON;

/// Mean absolute error between a prediction and a mask.
pub fn mae(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    same_dims(gt.dims(), pred.dims())?;
    let total: f64 = pred
        .values()
        .iter()
        .zip(gt.values().iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / pred.values().len() as f64)
}

/// Mean absolute difference between two continuous maps.
pub fn map_mae(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    same_dims(a.dims(), b.dims())?;
    let total: f64 = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(total / a.values().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FMeasures {
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
}

/// Fβ from raw counts. Zero when nothing is predicted or nothing is recalled.
pub fn f_beta(true_pos: usize, predicted_pos: usize, actual_pos: usize) -> f64 {
    if predicted_pos == 0 || actual_pos == 0 {
        return 0.0;
    }
    let precision = true_pos as f64 / predicted_pos as f64;
    let recall = true_pos as f64 / actual_pos as f64;
    let denom = BETA_SQ * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / denom
    }
}

/// maxF, meanF and adaptive F of `pred` against `gt`.
///
/// The prediction is evaluated as the 8-bit map it is stored as: each value
/// is quantized to `round(255 v)` and binarized at the 256 levels `k / 255`.
/// The adaptive threshold `min(1, 2 mean(pred))` is applied to the same
/// quantized values, so its binarization is always one of the swept ones.
pub fn f_measures(pred: &SaliencyMap, gt: &BinaryMask) -> Result<FMeasures> {
    same_dims(gt.dims(), pred.dims())?;
    let actual_pos = gt.foreground_count();
    if actual_pos == 0 {
        return Err(Error::UndefinedRecall);
    }

    let mut fg_hist = [0usize; THRESHOLD_COUNT];
    let mut bg_hist = [0usize; THRESHOLD_COUNT];
    for (&p, &g) in pred.values().iter().zip(gt.values().iter()) {
        let level = quantize(p) as usize;
        if g {
            fg_hist[level] += 1;
        } else {
            bg_hist[level] += 1;
        }
    }

    // Cumulative counts from the top level down: index k holds |{level >= k}|.
    let mut tp_at = [0usize; THRESHOLD_COUNT];
    let mut fp_at = [0usize; THRESHOLD_COUNT];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..THRESHOLD_COUNT).rev() {
        tp += fg_hist[k];
        fp += bg_hist[k];
        tp_at[k] = tp;
        fp_at[k] = fp;
    }

    let sweep: Vec<f64> = (0..THRESHOLD_COUNT)
        .map(|k| f_beta(tp_at[k], tp_at[k] + fp_at[k], actual_pos))
        .collect();
    let max_f = sweep.iter().copied().fold(0.0, f64::max);
    let mean_f = sweep.iter().sum::<f64>() / THRESHOLD_COUNT as f64;

    let adaptive = adaptive_threshold(pred);
    // Smallest level whose value reaches the adaptive threshold.
    let level = (0..THRESHOLD_COUNT)
        .find(|&k| k as f64 / 255.0 >= adaptive)
        .unwrap_or(THRESHOLD_COUNT - 1);
    let adp_f = sweep[level];

    Ok(FMeasures {
        max_f,
        mean_f,
        adp_f,
    })
}

/// `min(1, 2 mean(pred))`.
pub fn adaptive_threshold(pred: &SaliencyMap) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

/// Structure measure: `α S_object + (1 − α) S_region` with `α = 0.5`.
///
/// An all-background mask scores `1 − mean(pred)` and an all-foreground mask
/// scores `mean(pred)`. The result is clamped to `[0, 1]`.
pub fn s_measure(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    same_dims(gt.dims(), pred.dims())?;
    let ratio = gt.foreground_ratio();
    let score = if ratio == 0.0 {
        1.0 - pred.mean()
    } else if ratio == 1.0 {
        pred.mean()
    } else {
        S_ALPHA * s_object(pred, gt) + (1.0 - S_ALPHA) * s_region(pred.values().view(), gt)
    };
    Ok(score.clamp(0.0, 1.0))
}

fn s_object(pred: &SaliencyMap, gt: &BinaryMask) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.values().iter().zip(gt.values().iter()) {
        if g {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let ratio = gt.foreground_ratio();
    ratio * object_score(&fg) + (1.0 - ratio) * object_score(&bg)
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

/// Rounded 1-based centroid (column, row) of the foreground.
fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let (h, w) = gt.dims();
    let total = gt.foreground_count();
    if total == 0 {
        return (
            (w as f64 / 2.0).round() as usize,
            (h as f64 / 2.0).round() as usize,
        );
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((y, x), &g) in gt.values().indexed_iter() {
        if g {
            sx += (x + 1) as f64;
            sy += (y + 1) as f64;
        }
    }
    (
        (sx / total as f64).round() as usize,
        (sy / total as f64).round() as usize,
    )
}

fn s_region(pred: ArrayView2<f64>, gt: &BinaryMask) -> f64 {
    let (h, w) = gt.dims();
    let (cx, cy) = centroid(gt);
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;

    let quadrants = [
        (w1, s![..cy, ..cx]),
        (w2, s![..cy, cx..]),
        (w3, s![cy.., ..cx]),
        (w4, s![cy.., cx..]),
    ];
    let gt_vals = gt.values();
    quadrants
        .into_iter()
        .map(|(weight, sl)| {
            let p = pred.slice(sl);
            if p.is_empty() {
                return 0.0;
            }
            weight * region_ssim(p, gt_vals.slice(sl))
        })
        .sum()
}

fn region_ssim(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> f64 {
    let n = pred.len() as f64;
    let x = pred.sum() / n;
    let y = gt.iter().filter(|g| **g).count() as f64 / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let dx = p - x;
        let dy = if g { 1.0 } else { 0.0 } - y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let norm = n - 1.0 + EPS;
    let (sigma_x2, sigma_y2, sigma_xy) = (sxx / norm, syy / norm, sxy / norm);

    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Agreement between a motion saliency map and a target-method map: the
/// structure measure with the target map binarized at 0.5.
pub fn consistency_degree(motion_map: &SaliencyMap, sota_map: &SaliencyMap) -> Result<f64> {
    same_dims(sota_map.dims(), motion_map.dims())?;
    s_measure(motion_map, &sota_map.binarize(0.5))
}

/// Metrics of one frame. F-measures are `None` when the mask has no foreground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: String,
    pub max_f: Option<f64>,
    pub mean_f: Option<f64>,
    pub adp_f: Option<f64>,
    pub s_measure: f64,
    pub mae: f64,
}

impl FrameMetrics {
    pub fn compute(
        frame_id: impl Into<String>,
        pred: &SaliencyMap,
        gt: &BinaryMask,
    ) -> Result<Self> {
        let f = match f_measures(pred, gt) {
            Ok(f) => Some(f),
            Err(Error::UndefinedRecall) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            frame_id: frame_id.into(),
            max_f: f.map(|f| f.max_f),
            mean_f: f.map(|f| f.mean_f),
            adp_f: f.map(|f| f.adp_f),
            s_measure: s_measure(pred, gt)?,
            mae: mae(pred, gt)?,
        })
    }
}

/// Dataset-level aggregate: every scalar is the arithmetic mean of the
/// per-frame values (F-measures over frames where they are defined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
    pub s_measure: f64,
    pub mae: f64,
    pub frame_count: usize,
    pub per_frame: Vec<FrameMetrics>,
    /// Frames whose ground truth has no prediction; excluded from aggregates.
    #[serde(default)]
    pub missing: Vec<String>,
}

impl MetricsReport {
    pub fn from_frames(per_frame: Vec<FrameMetrics>) -> Self {
        fn mean(xs: impl Iterator<Item = f64>) -> f64 {
            let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        }
        Self {
            max_f: mean(per_frame.iter().filter_map(|f| f.max_f)),
            mean_f: mean(per_frame.iter().filter_map(|f| f.mean_f)),
            adp_f: mean(per_frame.iter().filter_map(|f| f.adp_f)),
            s_measure: mean(per_frame.iter().map(|f| f.s_measure)),
            mae: mean(per_frame.iter().map(|f| f.mae)),
            frame_count: per_frame.len(),
            per_frame,
            missing: Vec::new(),
        }
    }

    /// Aggregate over the subset of frames accepted by `keep`.
    pub fn subset(&self, mut keep: impl FnMut(&FrameMetrics) -> bool) -> Self {
        Self::from_frames(self.per_frame.iter().filter(|f| keep(f)).cloned().collect())
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|v| format!("{v:.6}")).unwrap_or_default()
        }
        let mut out = String::from("frame_id,max_f,mean_f,adp_f,s_measure,mae\n");
        for f in &self.per_frame {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                f.frame_id,
                opt(f.max_f),
                opt(f.mean_f),
                opt(f.adp_f),
                f.s_measure,
                f.mae
            ));
        }
        out.push_str(&format!(
            "ALL,{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            self.max_f, self.mean_f, self.adp_f, self.s_measure, self.mae
        ));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("+--------+--------+--------+--------+--------+--------+\n");
        out.push_str("| frames |  maxF  | meanF  |  adpF  |  S-M   |  MAE   |\n");
        out.push_str("+--------+--------+--------+--------+--------+--------+\n");
        out.push_str(&format!(
            "| {:>6} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            self.frame_count, self.max_f, self.mean_f, self.adp_f, self.s_measure, self.mae
        ));
        out.push_str("+--------+--------+--------+--------+--------+--------+\n");
        if !self.missing.is_empty() {
            out.push_str(&format!("missing predictions: {}\n", self.missing.len()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn mask(v: Array2<f64>) -> BinaryMask {
        BinaryMask::from_binary_values(&v).unwrap()
    }

    fn map(v: Array2<f64>) -> SaliencyMap {
        SaliencyMap::new(v).unwrap()
    }

    #[test]
    fn mae_examples() {
        let gt = mask(array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mae(&gt.to_map(), &gt).unwrap(), 0.0);
        let zeros = mask(Array2::zeros((3, 3)));
        assert_eq!(
            mae(&SaliencyMap::filled(3, 3, 0.5).unwrap(), &zeros).unwrap(),
            0.5
        );
        let pred = map(array![[1.0, 0.0], [0.5, 0.5]]);
        assert_abs_diff_eq!(mae(&pred, &gt).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn mae_rejects_mismatch() {
        let gt = mask(Array2::zeros((2, 2)));
        let pred = SaliencyMap::filled(2, 3, 0.0).unwrap();
        assert!(matches!(
            mae(&pred, &gt),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn perfect_prediction_maximizes_f() {
        let gt = mask(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(f_measures(&gt.to_map(), &gt).unwrap().max_f, 1.0);
    }

    #[test]
    fn separable_scores_reach_perfect_max_f() {
        let gt = mask(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        let pred = map(array![[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.1]]);
        assert_abs_diff_eq!(f_measures(&pred, &gt).unwrap().max_f, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn complement_prediction_caps_at_whole_image_f() {
        // 4x4 mask with 4 foreground pixels; the complement only ever recalls
        // foreground at threshold 0, where everything is predicted positive:
        // P = 4/16, R = 1, F = 1.3 * 0.25 / (0.3 * 0.25 + 1).
        let mut g = Array2::zeros((4, 4));
        for (y, x) in [(0, 0), (1, 1), (2, 2), (3, 3)] {
            g[[y, x]] = 1.0;
        }
        let gt = mask(g);
        let f = f_measures(&gt.complement().to_map(), &gt).unwrap();
        let expected = 1.3 * 0.25 / (0.3 * 0.25 + 1.0);
        assert_abs_diff_eq!(f.max_f, expected, epsilon = 1e-12);
    }

    #[test]
    fn empty_gt_has_undefined_recall() {
        let gt = mask(Array2::zeros((2, 2)));
        let pred = SaliencyMap::filled(2, 2, 0.3).unwrap();
        assert!(matches!(
            f_measures(&pred, &gt),
            Err(Error::UndefinedRecall)
        ));
    }

    #[test]
    fn s_measure_perfect_and_empty_cases() {
        let gt = mask(array![[1.0, 0.0], [0.0, 0.0]]);
        assert_abs_diff_eq!(s_measure(&gt.to_map(), &gt).unwrap(), 1.0, epsilon = 1e-9);
        let empty = mask(Array2::zeros((3, 3)));
        let zeros = SaliencyMap::filled(3, 3, 0.0).unwrap();
        assert_eq!(s_measure(&zeros, &empty).unwrap(), 1.0);
        let half = SaliencyMap::filled(3, 3, 0.5).unwrap();
        assert_eq!(s_measure(&half, &empty).unwrap(), 0.5);
        let full = mask(Array2::ones((3, 3)));
        assert_eq!(s_measure(&half, &full).unwrap(), 0.5);
    }

    #[test]
    fn consistency_examples() {
        let a = map(array![[1.0, 0.0], [0.0, 0.0]]);
        assert_abs_diff_eq!(consistency_degree(&a, &a).unwrap(), 1.0, epsilon = 1e-9);
        let b = map(array![[0.0, 0.0], [0.0, 1.0]]);
        assert!(consistency_degree(&a, &b).unwrap() < 1.0);
        let c = SaliencyMap::filled(2, 3, 0.0).unwrap();
        assert!(consistency_degree(&a, &c).is_err());
    }

    #[test]
    fn report_means_per_frame_values() {
        let frames = vec![
            FrameMetrics {
                frame_id: "a".into(),
                max_f: Some(1.0),
                mean_f: Some(0.5),
                adp_f: Some(0.5),
                s_measure: 0.8,
                mae: 0.1,
            },
            FrameMetrics {
                frame_id: "b".into(),
                max_f: None,
                mean_f: None,
                adp_f: None,
                s_measure: 0.6,
                mae: 0.3,
            },
        ];
        let r = MetricsReport::from_frames(frames);
        assert_eq!(r.frame_count, 2);
        assert_eq!(r.max_f, 1.0);
        assert_abs_diff_eq!(r.s_measure, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mae, 0.2, epsilon = 1e-12);
        assert!(r.to_csv().lines().count() == 4);
    }
}
