//! Training objectives. All reductions are means.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Log-argument clamp that keeps saturated sigmoids finite.
pub const LOG_EPS: f64 = 5e-8;

fn binary_cross_entropy(p: &Tensor, target: &Tensor) -> Result<Tensor> {
    if p.dims() != target.dims() {
        return Err(Error::InvalidInput(format!(
            "prediction {:?} and target {:?} differ in shape",
            p.dims(),
            target.dims()
        )));
    }
    let p = p.clamp(LOG_EPS, 1.0 - LOG_EPS)?;
    let pos = (target * p.log()?)?;
    let neg = (target.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

/// Pixel-wise binary cross-entropy between motion saliency maps and masks,
/// averaged over pixels and batch.
pub fn bce_loss(ms: &Tensor, gt: &Tensor) -> Result<Tensor> {
    binary_cross_entropy(ms, gt)
}

/// Logistic loss between quality confidences and binary labels, averaged
/// over the batch.
pub fn cls_loss(q: &Tensor, labels: &Tensor) -> Result<Tensor> {
    binary_cross_entropy(q, labels)
}

/// Unweighted sum of the two objectives.
pub fn total_loss(bce: &Tensor, cls: &Tensor) -> Result<Tensor> {
    Ok((bce + cls)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use candle_core::{DType, Device};

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn uniform_half_map_costs_ln2() {
        let ms = Tensor::full(0.5f64, (2, 1, 4, 4), &Device::Cpu).unwrap();
        let gt = Tensor::new(&[1.0f64, 0.0], &Device::Cpu)
            .unwrap()
            .reshape((2, 1, 1, 1))
            .unwrap()
            .broadcast_as((2, 1, 4, 4))
            .unwrap()
            .contiguous()
            .unwrap();
        assert_abs_diff_eq!(
            scalar(&bce_loss(&ms, &gt).unwrap()),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = Tensor::new(&[[1.0f64, 0.0], [0.0, 1.0]], &Device::Cpu).unwrap();
        let loss = scalar(&bce_loss(&gt, &gt).unwrap());
        assert!(loss <= -(1.0f64 - LOG_EPS).ln() + 1e-15);
    }

    #[test]
    fn classification_closed_forms() {
        let q = Tensor::new(&[0.9f64, 0.1], &Device::Cpu).unwrap();
        let y = Tensor::new(&[1.0f64, 0.0], &Device::Cpu).unwrap();
        let expected = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert_abs_diff_eq!(
            scalar(&cls_loss(&q, &y).unwrap()),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 0.1054, epsilon = 1e-4);

        let half = Tensor::new(&[0.5f64], &Device::Cpu).unwrap();
        let one = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        assert_abs_diff_eq!(
            scalar(&cls_loss(&half, &one).unwrap()),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(scalar(&cls_loss(&one, &one).unwrap()) < 1e-6);
    }

    #[test]
    fn total_is_commutative_sum() {
        let a = Tensor::new(0.6931f64, &Device::Cpu).unwrap();
        let b = Tensor::new(0.25f64, &Device::Cpu).unwrap();
        assert_eq!(scalar(&total_loss(&a, &a).unwrap()), 1.3862);
        assert_eq!(
            scalar(&total_loss(&a, &b).unwrap()),
            scalar(&total_loss(&b, &a).unwrap())
        );
        let z = Tensor::new(0.0f64, &Device::Cpu).unwrap();
        assert_eq!(scalar(&total_loss(&z, &z).unwrap()), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap();
        let b = Tensor::zeros((4,), DType::F64, &Device::Cpu).unwrap();
        assert!(bce_loss(&a, &b).is_err());
    }
}
