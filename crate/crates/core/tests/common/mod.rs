//! Exhaustive reference implementations shared by the integration tests.

use lidarup::geometry::Point3;
use lidarup::metrics::RcdConfig;
use lidarup::seed::{derive_seed, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn d(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn nearest(a: Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &b) in set.iter().enumerate() {
        let dd = d(a, b);
        if dd < best.1 {
            best = (i, dd);
        }
    }
    best
}

pub fn oracle_chamfer(p: &[Point3], q: &[Point3]) -> f64 {
    let pq: f64 = p.iter().map(|&a| nearest(a, q).1.powi(2)).sum::<f64>() / p.len() as f64;
    let qp: f64 = q.iter().map(|&a| nearest(a, p).1.powi(2)).sum::<f64>() / q.len() as f64;
    pq + qp
}

fn sorted(v: &[Point3]) -> Vec<Point3> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Exhaustive re-derivation of the region protocol: max-min selection from a
/// seeded start over coordinate-sorted references, full sorts for both regions.
pub fn oracle_rcd(p: &[Point3], q: &[Point3], cfg: &RcdConfig) -> (f64, f64, f64) {
    let p = sorted(p);
    let q = sorted(q);
    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "rcd/centers"));
    let mut centers = vec![r.random_range(0..q.len())];
    while centers.len() < cfg.groups {
        let (mut best, mut best_d) = (usize::MAX, -1.0);
        for (j, &x) in q.iter().enumerate() {
            if centers.contains(&j) {
                continue;
            }
            let m = centers.iter().map(|&c| d(x, q[c])).fold(f64::INFINITY, f64::min);
            if m > best_d {
                best_d = m;
                best = j;
            }
        }
        centers.push(best);
    }
    let cpts: Vec<Point3> = centers.iter().map(|&c| q[c]).collect();
    let region = |set: &[Point3], c: Point3| {
        let mut by: Vec<usize> = (0..set.len()).collect();
        by.sort_by(|&a, &b| d(set[a], c).partial_cmp(&d(set[b], c)).unwrap().then(a.cmp(&b)));
        by.truncate(cfg.targets_per_group);
        by.into_iter().map(|i| set[i]).collect::<Vec<_>>()
    };
    let mean_nn = |a: &[Point3], b: &[Point3]| a.iter().map(|&x| nearest(x, b).1).sum::<f64>() / a.len() as f64;
    let values: Vec<f64> = cpts
        .iter()
        .map(|&c| {
            let (rq, rp) = (region(&q, c), region(&p, c));
            mean_nn(&rp, &rq) + mean_nn(&rq, &rp)
        })
        .collect();
    let mut order: Vec<usize> = (0..cfg.groups).collect();
    order.shuffle(&mut rng(derive_seed(cfg.seed, "rcd/split")));
    let avg = |ids: &[usize]| {
        if ids.is_empty() {
            0.0
        } else {
            ids.iter().map(|&g| values[g]).sum::<f64>() / ids.len() as f64
        }
    };
    (avg(&order), avg(&order[..cfg.recon_groups]), avg(&order[cfg.recon_groups..]))
}

pub fn random_cloud(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3> {
    (0..n).map(|_| [0, 1, 2].map(|_| r.random_range(-scale..scale))).collect()
}

