use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear beta schedule with its derived alpha and cumulative-product sequences.
/// Steps are 0-indexed; t = 0 is the least noised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 3.5e-5;
pub const DEFAULT_BETA_END: f64 = 7e-3;

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_0 ({beta_start}) <= beta_T ({beta_end}) < 1"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            // convex-combination form hits both endpoints exactly
            (0..steps)
                .map(|t| {
                    let f = t as f64 / (steps - 1) as f64;
                    beta_start * (1.0 - f) + beta_end * f
                })
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// T = 1000, beta from 3.5e-5 to 7e-3.
    pub fn standard() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid constants")
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            Err(Error::InvalidArgument(format!(
                "step {t} outside schedule of length {}",
                self.len()
            )))
        } else {
            Ok(())
        }
    }

    /// `alpha_bar` with the clean endpoint `None` mapped to 1.
    pub fn alpha_bar_at(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alpha_bar[t])
    }

    /// Noise standard deviation `sqrt(1 - alpha_bar_t)` of the local forward process.
    pub fn sigma(&self, t: Option<usize>) -> f64 {
        (1.0 - self.alpha_bar_at(t)).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta,alpha,alpha_bar\n");
        for t in 0..self.len() {
            writeln!(
                s,
                "{t},{:.17e},{:.17e},{:.17e}",
                self.beta[t], self.alpha[t], self.alpha_bar[t]
            )
            .unwrap();
        }
        s
    }
}

/// Evenly spaced descending steps from `T - 1` to 0.
pub fn timestep_ladder(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!(
            "ladder needs 1 <= steps ({steps}) <= T ({total})"
        )));
    }
    if steps == 1 {
        return Ok(vec![total - 1]);
    }
    let last = (total - 1) as f64;
    Ok((0..steps)
        .map(|i| (last * (1.0 - i as f64 / (steps - 1) as f64)).round() as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::standard();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.beta()[0], 3.5e-5);
        assert_eq!(s.beta()[999], 7e-3);
        assert!((s.alpha_bar()[0] - 0.999965).abs() < 1e-12);
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(), &[0.5, 0.25]);
    }

    #[test]
    fn invariants_per_index() {
        let s = NoiseSchedule::standard();
        let mut prod = 1.0;
        for t in 0..s.len() {
            assert!(s.beta()[t] > 0.0 && s.beta()[t] < 1.0);
            assert_eq!(s.alpha()[t], 1.0 - s.beta()[t]);
            prod *= s.alpha()[t];
            assert!((s.alpha_bar()[t] - prod).abs() < 1e-12);
            assert!(s.alpha_bar()[t] > 0.0 && s.alpha_bar()[t] < 1.0);
            if t > 0 {
                assert!(s.alpha_bar()[t] < s.alpha_bar()[t - 1]);
            }
        }
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn ladders() {
        assert_eq!(timestep_ladder(5, 5).unwrap(), vec![4, 3, 2, 1, 0]);
        assert_eq!(timestep_ladder(1000, 2).unwrap(), vec![999, 0]);
        for steps in [2, 3, 7, 50, 999, 1000] {
            let l = timestep_ladder(1000, steps).unwrap();
            assert_eq!(l.len(), steps);
            assert_eq!(l[0], 999);
            assert_eq!(*l.last().unwrap(), 0);
            assert!(l.windows(2).all(|w| w[0] > w[1]));
        }
        assert!(timestep_ladder(10, 0).is_err());
        assert!(timestep_ladder(10, 11).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = NoiseSchedule::linear(3, 0.1, 0.2).unwrap().to_csv();
        assert!(csv.starts_with("t,beta,alpha,alpha_bar\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
