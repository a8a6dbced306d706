use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// One noise vector per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseTensor {
    pub values: Vec<Point3>,
}

impl NoiseTensor {
    pub fn new(values: Vec<Point3>) -> Result<Self> {
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("noise tensor has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![[0.0; 3]; n],
        }
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(format!("{} values are not xyz triples", flat.len())));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerVariant {
    /// Stochastic ancestral update with posterior-variance noise.
    PaperExact,
    /// Deterministic update that exactly inverts the local forward process.
    LocalDdim,
}

impl std::str::FromStr for SamplerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-exact" => Ok(Self::PaperExact),
            "local-ddim" => Ok(Self::LocalDdim),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampler variant `{other}` (paper-exact | local-ddim)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PaperExact => "paper-exact",
            Self::LocalDdim => "local-ddim",
        })
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::ShapeMismatch(format!("{what}: {a} rows vs {b} rows")))
    } else {
        Ok(())
    }
}

/// `p_t = p + sqrt(1 - alpha_bar_t) * eps`: points move, the mean is not rescaled.
pub fn forward_noise(
    points: &PointCloud,
    t: usize,
    sched: &NoiseSchedule,
    eps: &NoiseTensor,
) -> Result<PointCloud> {
    sched.check_step(t)?;
    check_len("forward_noise", points.len(), eps.len())?;
    let sigma = sched.sigma(Some(t));
    let moved = points
        .points()
        .iter()
        .zip(&eps.values)
        .map(|(p, e)| [0, 1, 2].map(|a| p[a] + sigma * e[a]))
        .collect();
    PointCloud::new(moved)
}

/// Classifier-free guidance: `eps_u + s * (eps_c - eps_u)`, evaluated as
/// `(1 - s) * eps_u + s * eps_c` so both `s = 0` and `s = 1` are exact.
pub fn cfg_combine(uncond: &NoiseTensor, cond: &NoiseTensor, s: f64) -> Result<NoiseTensor> {
    check_len("cfg_combine", uncond.len(), cond.len())?;
    Ok(NoiseTensor {
        values: uncond
            .values
            .iter()
            .zip(&cond.values)
            .map(|(u, c)| [0, 1, 2].map(|a| (1.0 - s) * u[a] + s * c[a]))
            .collect(),
    })
}

/// Drift coefficient and noise scale for a jump from `t` to `prev`
/// (`None` = clean endpoint, where `alpha_bar` is 1).
pub fn jump_coefficients(
    sched: &NoiseSchedule,
    t: usize,
    prev: Option<usize>,
    variant: SamplerVariant,
) -> Result<(f64, f64)> {
    sched.check_step(t)?;
    if let Some(p) = prev {
        if p >= t {
            return Err(Error::InvalidArgument(format!(
                "reverse jump must decrease the step ({t} -> {p})"
            )));
        }
    }
    let ab_t = sched.alpha_bar_at(Some(t));
    let ab_prev = sched.alpha_bar_at(prev);
    Ok(match variant {
        SamplerVariant::LocalDdim => (sched.sigma(Some(t)) - sched.sigma(prev), 0.0),
        SamplerVariant::PaperExact => {
            // effective alpha over the jump; equals alpha_t for consecutive steps
            let alpha = ab_t / ab_prev;
            let drift = (1.0 - alpha) / (1.0 - ab_t).sqrt();
            let var = (1.0 - alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
            (drift, var.max(0.0).sqrt())
        }
    })
}

/// One reverse update from `t` to an arbitrary earlier step (or the clean endpoint).
pub fn reverse_jump(
    p_t: &PointCloud,
    eps_hat: &NoiseTensor,
    t: usize,
    prev: Option<usize>,
    sched: &NoiseSchedule,
    variant: SamplerVariant,
    z: &NoiseTensor,
) -> Result<PointCloud> {
    check_len("reverse_step eps_hat", p_t.len(), eps_hat.len())?;
    check_len("reverse_step z", p_t.len(), z.len())?;
    let (drift, sigma) = jump_coefficients(sched, t, prev, variant)?;
    let moved = p_t
        .points()
        .iter()
        .zip(&eps_hat.values)
        .zip(&z.values)
        .map(|((p, e), n)| [0, 1, 2].map(|a| p[a] - drift * e[a] + sigma * n[a]))
        .collect();
    PointCloud::new(moved)
}

/// Single-step reverse update from `t` to `t - 1` (`t = 0` lands on the clean endpoint).
pub fn reverse_step(
    p_t: &PointCloud,
    eps_hat: &NoiseTensor,
    t: usize,
    sched: &NoiseSchedule,
    variant: SamplerVariant,
    z: &NoiseTensor,
) -> Result<PointCloud> {
    reverse_jump(p_t, eps_hat, t, t.checked_sub(1), sched, variant, z)
}
