use std::f64::consts::PI;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cloud::sub;
use crate::geometry::{Point3, PointCloud};
use crate::seed::{derive_seed, rng, standard_normal_vec};

/// Sparse condition scan and the dense input cloud of the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    condition: PointCloud,
    input: PointCloud,
    rate: usize,
    scene_seed: u64,
}

impl TrainingPair {
    pub fn new(condition: PointCloud, input: PointCloud, rate: usize, scene_seed: u64) -> Result<Self> {
        if rate == 0 {
            return Err(Error::InvalidArgument("rate must be positive".into()));
        }
        if input.len() != rate * condition.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} points, expected {} x {}",
                input.len(),
                rate,
                condition.len()
            )));
        }
        Ok(Self { condition, input, rate, scene_seed })
    }

    pub fn condition(&self) -> &PointCloud {
        &self.condition
    }

    pub fn input(&self) -> &PointCloud {
        &self.input
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    pub fn scene_seed(&self) -> u64 {
        self.scene_seed
    }
}

/// Two independent uniform subsamples (without replacement) of one dense cloud.
pub fn make_training_pair(dense: &PointCloud, n_cond: usize, rate: usize, seed: u64) -> Result<TrainingPair> {
    if n_cond == 0 || rate == 0 {
        return Err(Error::InvalidArgument("n_cond and rate must be positive".into()));
    }
    let n_in = n_cond * rate;
    if dense.len() < n_in {
        return Err(Error::NotEnoughPoints { needed: n_in, available: dense.len() });
    }
    let mut r = rng(derive_seed(seed, "pair/condition"));
    let cond_idx = sample(&mut r, dense.len(), n_cond).into_vec();
    let mut r = rng(derive_seed(seed, "pair/input"));
    let in_idx = sample(&mut r, dense.len(), n_in).into_vec();
    let strip = |c: PointCloud| PointCloud::new(c.into_points());
    TrainingPair::new(strip(dense.select(&cond_idx))?, strip(dense.select(&in_idx))?, rate, seed)
}

pub const SWEEP_ELEVATION_DEG: (f64, f64) = (-25.0, 3.0);

/// Ring-structured single-scan emulation over the default elevation window.
pub fn simulate_sweep(dense: &PointCloud, origin: Point3, beams: usize, azimuth_steps: usize) -> Result<PointCloud> {
    simulate_sweep_with_fov(dense, origin, beams, azimuth_steps, SWEEP_ELEVATION_DEG)
}

/// Each beam covers an elevation band centred on its ray and each azimuth step
/// an angular sector centred on its ray; per bin the closest-range point is kept.
pub fn simulate_sweep_with_fov(
    dense: &PointCloud,
    origin: Point3,
    beams: usize,
    azimuth_steps: usize,
    elevation_deg: (f64, f64),
) -> Result<PointCloud> {
    if beams == 0 || azimuth_steps == 0 {
        return Err(Error::InvalidArgument("beams and azimuth_steps must be >= 1".into()));
    }
    let (lo, hi) = (elevation_deg.0.to_radians(), elevation_deg.1.to_radians());
    if !(hi > lo) {
        return Err(Error::InvalidArgument("elevation window is empty".into()));
    }
    let d_el = (hi - lo) / beams as f64;
    let d_az = 2.0 * PI / azimuth_steps as f64;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; beams * azimuth_steps];
    for (i, p) in dense.points().iter().enumerate() {
        let d = sub(*p, origin);
        let range = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if range == 0.0 {
            continue;
        }
        let el = (d[2] / range).asin();
        let az = d[1].atan2(d[0]).rem_euclid(2.0 * PI);
        let b = ((el - lo) / d_el).floor();
        let a = (az / d_az).round();
        if b < 0.0 || b >= beams as f64 {
            continue;
        }
        let bin = b as usize * azimuth_steps + (a as usize % azimuth_steps);
        if best[bin].is_none_or(|(r, _)| range < r) {
            best[bin] = Some((range, i));
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().map(|(_, i)| i).collect();
    keep.sort_unstable();
    PointCloud::new(dense.select(&keep).into_points())
}

/// Adds `tau * z`, z ~ N(0, 1), to every coordinate.
pub fn perturb_gaussian(cloud: &PointCloud, tau: f64, seed: u64) -> Result<PointCloud> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be a finite value >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(cloud.clone());
    }
    let z = standard_normal_vec(&mut rng(derive_seed(seed, "perturb")), 3 * cloud.len());
    let pts = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| [0, 1, 2].map(|k| p[k] + tau * z[3 * i + k]))
        .collect();
    match cloud.features() {
        Some(f) => PointCloud::with_features(pts, f.clone()),
        None => PointCloud::new(pts),
    }
}

/// Serializable identity of a pair inside a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub scene_seed: u64,
    pub condition: String,
    pub input: String,
}
