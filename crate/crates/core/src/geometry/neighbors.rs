use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

/// Result of a k-nearest-neighbor query, row-major `queries × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Neighbors {
    pub fn row(&self, q: usize) -> (&[usize], &[f64]) {
        let r = q * self.k..(q + 1) * self.k;
        (&self.indices[r.clone()], &self.distances[r])
    }
}

/// Exhaustive k-nearest-neighbor search. Ties go to the lower reference index.
pub fn knn(queries: &[Point3], references: &[Point3], k: usize) -> Result<Neighbors> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if references.len() < k {
        return Err(Error::NotEnoughPoints {
            needed: k,
            available: references.len(),
        });
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &q in queries {
        best.clear();
        for (j, &r) in references.iter().enumerate() {
            let d = dist2(q, r);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            // references are scanned in index order, so an equal distance
            // already in the list keeps precedence
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        for &(d, j) in &best {
            indices.push(j);
            distances.push(d.sqrt());
        }
    }
    Ok(Neighbors {
        k,
        indices,
        distances,
    })
}

pub fn nearest_neighbor(queries: &[Point3], references: &[Point3]) -> Result<Vec<usize>> {
    if references.is_empty() {
        return Err(Error::NotEnoughPoints {
            needed: 1,
            available: 0,
        });
    }
    Ok(queries
        .iter()
        .map(|&q| {
            let mut best = (f64::INFINITY, 0);
            for (j, &r) in references.iter().enumerate() {
                let d = dist2(q, r);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

/// Farthest point sampling with a seeded uniform first pick.
pub fn fps(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    let pts = cloud.points();
    let n = pts.len();
    if m == 0 {
        return Err(Error::InvalidArgument("fps needs m >= 1".into()));
    }
    if m > n {
        return Err(Error::NotEnoughPoints {
            needed: m,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    fps_from(pts, m, first)
}

/// Farthest point sampling starting from a fixed index. Max-min ties go to the lower index.
pub fn fps_from(pts: &[Point3], m: usize, first: usize) -> Result<Vec<usize>> {
    let n = pts.len();
    if m > n || first >= n {
        return Err(Error::NotEnoughPoints {
            needed: m.max(first + 1),
            available: n,
        });
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = first;
    for _ in 0..m {
        chosen.push(current);
        min_d[current] = f64::NEG_INFINITY;
        let c = pts[current];
        let mut next = (f64::NEG_INFINITY, usize::MAX);
        for (j, p) in pts.iter().enumerate() {
            if min_d[j] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(*p, c);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > next.0 {
                next = (min_d[j], j);
            }
        }
        current = next.1;
    }
    Ok(chosen)
}
