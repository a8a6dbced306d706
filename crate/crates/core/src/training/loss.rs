use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseTensor;
use crate::error::{Error, Result};
use crate::nn::eps_loss_parts;

pub use crate::nn::smooth_l1;

/// Loss terms of one evaluation; `total = mse + lambda * std_reg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub std_reg: f64,
    pub observed_std: f64,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            total: avg(|l| l.total),
            mse: avg(|l| l.mse),
            std_reg: avg(|l| l.std_reg),
            observed_std: avg(|l| l.observed_std),
        }
    }
}

/// Mean squared error plus `lambda * smooth_l1(std(eps_hat) - 1)`, with the
/// population standard deviation over every predicted scalar.
pub fn loss(eps_hat: &NoiseTensor, eps: &NoiseTensor, lambda: f64) -> Result<LossBreakdown> {
    if eps_hat.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} rows, target {}",
            eps_hat.len(),
            eps.len()
        )));
    }
    if 3 * eps_hat.len() < 2 {
        return Err(Error::InvalidArgument(
            "standard deviation needs at least 2 scalar entries".into(),
        ));
    }
    let p = eps_loss_parts(&eps_hat.flat(), &eps.flat(), lambda);
    Ok(LossBreakdown {
        total: p.total,
        mse: p.mse,
        std_reg: p.std_reg,
        observed_std: p.std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn unit_std_perfect_prediction_is_zero() {
        // entries +-1 with zero mean have population std exactly 1
        let e = NoiseTensor::new(vec![[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0]]).unwrap();
        let l = loss(&e, &e, 1.0).unwrap();
        assert_eq!((l.mse, l.std_reg, l.total, l.observed_std), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn zero_prediction_penalized() {
        let eps = NoiseTensor::new(vec![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).unwrap();
        for lambda in [1.0, 0.3] {
            let l = loss(&NoiseTensor::zeros(2), &eps, lambda).unwrap();
            assert_eq!(l.observed_std, 0.0);
            assert_eq!(l.std_reg, 0.5);
            let mse = (1.0 + 4.0 + 9.0 + 1.0 + 0.25) / 6.0;
            assert!((l.mse - mse).abs() < 1e-15);
            assert!((l.total - (mse + 0.5 * lambda)).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_zero_is_pure_mse() {
        let a = NoiseTensor::new(vec![[0.3, -2.0, 1.0], [4.0, 0.5, 0.1]]).unwrap();
        let b = NoiseTensor::new(vec![[0.1, 0.0, 1.5], [1.0, 0.2, -0.4]]).unwrap();
        let l = loss(&a, &b, 0.0).unwrap();
        assert_eq!(l.total, l.mse);
    }

    #[test]
    fn errors() {
        assert!(loss(&NoiseTensor::zeros(2), &NoiseTensor::zeros(3), 1.0).is_err());
        assert!(loss(&NoiseTensor::zeros(0), &NoiseTensor::zeros(0), 1.0).is_err());
    }
}
