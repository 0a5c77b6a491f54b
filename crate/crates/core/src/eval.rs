//! Scoring a directory of predicted maps against a directory of masks.

use std::path::Path;

use crate::dataset::{file_name, read_dir_sorted};
use crate::error::{Error, Result};
use crate::map::{BinaryMask, SaliencyMap};
use crate::metrics::{FrameMetrics, MetricsReport};

/// Walks `gt_dir/<sequence>/<name>.png` and scores the map with the same
/// relative path under `pred_dir`. Predictions of a different size are
/// resized to the mask. Frames without a prediction are listed in
/// `missing` and left out of the aggregates.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    evaluate_filtered(pred_dir, gt_dir, |_| true)
}

/// [`evaluate`] restricted to frame ids accepted by `keep`.
pub fn evaluate_filtered(
    pred_dir: &Path,
    gt_dir: &Path,
    mut keep: impl FnMut(&str) -> bool,
) -> Result<MetricsReport> {
    for dir in [pred_dir, gt_dir] {
        if !dir.is_dir() {
            return Err(Error::MissingDependency(format!(
                "{} does not exist",
                dir.display()
            )));
        }
    }
    let mut frames = Vec::new();
    let mut missing = Vec::new();
    for seq in read_dir_sorted(gt_dir)? {
        if !seq.is_dir() {
            continue;
        }
        let seq_name = file_name(&seq);
        for gt_path in read_dir_sorted(&seq)? {
            if gt_path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let stem = gt_path.file_stem().unwrap_or_default().to_string_lossy();
            let id = format!("{seq_name}/{stem}");
            if !keep(&id) {
                continue;
            }
            let pred_path = pred_dir.join(&seq_name).join(file_name(&gt_path));
            if !pred_path.is_file() {
                missing.push(id);
                continue;
            }
            let gt = BinaryMask::load(&gt_path)?;
            let mut pred = SaliencyMap::load(&pred_path)?;
            if pred.dims() != gt.dims() {
                pred = pred.resize(gt.height(), gt.width())?;
            }
            frames.push(FrameMetrics::compute(id, &pred, &gt)?);
        }
    }
    if !missing.is_empty() {
        log::warn!(
            "{} frames have no prediction under {} and are excluded",
            missing.len(),
            pred_dir.display()
        );
    }
    let mut report = MetricsReport::from_frames(frames);
    report.missing = missing;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn copies_of_gt_score_perfectly_and_missing_are_listed() {
        let gt_dir = tempfile::tempdir().unwrap();
        let pred_dir = tempfile::tempdir().unwrap();
        let gt = BinaryMask::from_binary_values(&array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        for name in ["00000", "00001"] {
            gt.save(&gt_dir.path().join("s").join(format!("{name}.png")))
                .unwrap();
        }
        gt.to_map()
            .save(&pred_dir.path().join("s/00000.png"))
            .unwrap();
        let r = evaluate(pred_dir.path(), gt_dir.path()).unwrap();
        assert_eq!(r.frame_count, 1);
        assert_eq!(r.missing, vec!["s/00001".to_string()]);
        assert_eq!((r.max_f, r.s_measure, r.mae), (1.0, 1.0, 0.0));
    }
}
