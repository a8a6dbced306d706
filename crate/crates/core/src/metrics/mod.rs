//! Chamfer distance, region-aware Chamfer distance and F-score.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cloud::dist2;
use crate::geometry::{fps, knn, Point3, PointCloud};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_FSCORE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcdConfig {
    pub groups: usize,
    pub targets_per_group: usize,
    pub recon_groups: usize,
    pub match_groups: usize,
    pub seed: u64,
}

impl Default for RcdConfig {
    fn default() -> Self {
        Self { groups: 64, targets_per_group: 32, recon_groups: 20, match_groups: 44, seed: 0 }
    }
}

impl RcdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::config("rcd.groups", "must be positive"));
        }
        if self.targets_per_group == 0 {
            return Err(Error::config("rcd.targets_per_group", "must be positive"));
        }
        if self.recon_groups + self.match_groups != self.groups {
            return Err(Error::config(
                "rcd.recon_groups",
                format!(
                    "recon_groups ({}) + match_groups ({}) must equal groups ({})",
                    self.recon_groups, self.match_groups, self.groups
                ),
            ));
        }
        Ok(())
    }
}

fn nonempty(c: &PointCloud, what: &str) -> Result<()> {
    if c.is_empty() {
        Err(Error::InvalidArgument(format!("{what} cloud is empty")))
    } else {
        Ok(())
    }
}

fn nearest_d2(q: Point3, refs: &[Point3]) -> f64 {
    refs.iter().map(|&r| dist2(q, r)).fold(f64::INFINITY, f64::min)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean squared nearest distance in both directions (m²).
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    nonempty(p, "first")?;
    nonempty(q, "second")?;
    let (a, b) = (p.points(), q.points());
    Ok(mean(a.iter().map(|&x| nearest_d2(x, b))) + mean(b.iter().map(|&x| nearest_d2(x, a))))
}

/// Unsquared one-sided term: mean over `from` of the distance to the nearest `to`.
fn directed(from: &[Point3], to: &[Point3]) -> f64 {
    mean(from.iter().map(|&x| nearest_d2(x, to).sqrt()))
}

fn lexicographic(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

/// Points sorted by coordinates so results do not depend on input order.
pub fn canonical_order(c: &PointCloud) -> Vec<Point3> {
    let mut v = c.points().to_vec();
    v.sort_by(lexicographic);
    v
}

/// RCD values plus the region layout that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcdBreakdown {
    pub rcd: f64,
    pub recon_rcd: f64,
    pub match_rcd: f64,
    /// Group centers, in selection order.
    pub centers: Vec<Point3>,
    pub targets_per_group: usize,
    pub predicted_per_group: usize,
    pub group_values: Vec<f64>,
    pub recon_groups: Vec<usize>,
    pub match_groups: Vec<usize>,
}

/// Region-aware Chamfer distance (m, unsquared).
///
/// Centers are chosen by farthest point sampling over the reference `q`. A
/// region holds the `k` reference points and the `k` predicted points nearest
/// its center (fewer when a cloud is smaller than `k`). Both clouds are put in
/// coordinate order first, so the result does not depend on point order.
/// Empty splits average to 0.
pub fn rcd_detailed(p: &PointCloud, q: &PointCloud, cfg: &RcdConfig) -> Result<RcdBreakdown> {
    cfg.validate()?;
    nonempty(p, "predicted")?;
    nonempty(q, "reference")?;
    if cfg.groups > q.len() {
        return Err(Error::NotEnoughPoints { needed: cfg.groups, available: q.len() });
    }
    let pp = canonical_order(p);
    let qq = canonical_order(q);
    let qc = PointCloud::new(qq.clone())?;
    let centers: Vec<Point3> = fps(&qc, cfg.groups, derive_seed(cfg.seed, "rcd/centers"))?
        .into_iter()
        .map(|i| qq[i])
        .collect();
    let k = cfg.targets_per_group.min(qq.len());
    let kp = cfg.targets_per_group.min(pp.len());
    let targets = knn(&centers, &qq, k)?;
    let preds = knn(&centers, &pp, kp)?;
    let group_values: Vec<f64> = (0..cfg.groups)
        .map(|g| {
            let rq: Vec<Point3> = targets.row(g).0.iter().map(|&i| qq[i]).collect();
            let rp: Vec<Point3> = preds.row(g).0.iter().map(|&i| pp[i]).collect();
            directed(&rp, &rq) + directed(&rq, &rp)
        })
        .collect();
    let mut order: Vec<usize> = (0..cfg.groups).collect();
    order.shuffle(&mut rng(derive_seed(cfg.seed, "rcd/split")));
    let mut recon = order[..cfg.recon_groups].to_vec();
    let mut matched = order[cfg.recon_groups..].to_vec();
    recon.sort_unstable();
    matched.sort_unstable();
    let avg = |ids: &[usize]| if ids.is_empty() { 0.0 } else { mean(ids.iter().map(|&g| group_values[g])) };
    Ok(RcdBreakdown {
        rcd: mean(group_values.iter().copied()),
        recon_rcd: avg(&recon),
        match_rcd: avg(&matched),
        centers,
        targets_per_group: k,
        predicted_per_group: kp,
        group_values,
        recon_groups: recon,
        match_groups: matched,
    })
}

/// `(rcd, recon_rcd, match_rcd)`.
pub fn rcd(p: &PointCloud, q: &PointCloud, cfg: &RcdConfig) -> Result<(f64, f64, f64)> {
    let b = rcd_detailed(p, q, cfg)?;
    Ok((b.rcd, b.recon_rcd, b.match_rcd))
}

/// Harmonic mean of precision (predicted points within `threshold` of the
/// reference) and recall (reference points within `threshold` of the prediction).
pub fn fscore(p: &PointCloud, q: &PointCloud, threshold: f64) -> Result<f64> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    nonempty(p, "predicted")?;
    nonempty(q, "reference")?;
    let t2 = threshold * threshold;
    let frac = |a: &[Point3], b: &[Point3]| a.iter().filter(|&&x| nearest_d2(x, b) <= t2).count() as f64 / a.len() as f64;
    let precision = frac(p.points(), q.points());
    let recall = frac(q.points(), p.points());
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd: f64,
    pub cd_unit: String,
    pub rcd: f64,
    pub recon_rcd: f64,
    pub match_rcd: f64,
    pub rcd_unit: String,
    pub fscore: f64,
    pub fscore_threshold_m: f64,
    pub rcd_config: RcdConfig,
    pub predicted_points: usize,
    pub reference_points: usize,
    pub regions: RcdBreakdown,
}

pub fn evaluate(p: &PointCloud, q: &PointCloud, rcd_cfg: &RcdConfig, f_threshold: f64) -> Result<MetricReport> {
    let cd = chamfer(p, q)?;
    let regions = rcd_detailed(p, q, rcd_cfg)?;
    let f = fscore(p, q, f_threshold)?;
    Ok(MetricReport {
        cd,
        cd_unit: "m^2".into(),
        rcd: regions.rcd,
        recon_rcd: regions.recon_rcd,
        match_rcd: regions.match_rcd,
        rcd_unit: "m".into(),
        fscore: f,
        fscore_threshold_m: f_threshold,
        rcd_config: *rcd_cfg,
        predicted_points: p.len(),
        reference_points: q.len(),
        regions,
    })
}
