use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Optional per-point feature block, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// An ordered set of 3D points in meters with optional per-point features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    features: Option<Features>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            features: None,
        })
    }

    pub fn with_features(points: Vec<Point3>, features: Features) -> Result<Self> {
        check_finite(&points)?;
        if features.cols == 0 || features.data.len() != points.len() * features.cols {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values with {} columns for {} points",
                features.data.len(),
                features.cols,
                points.len()
            )));
        }
        Ok(Self {
            points,
            features: Some(features),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn features(&self) -> Option<&Features> {
        self.features.as_ref()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// New cloud holding the rows at `indices`, features included.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let features = self.features.as_ref().map(|f| Features {
            cols: f.cols,
            data: indices
                .iter()
                .flat_map(|&i| f.row(i).iter().copied())
                .collect(),
        });
        Self { points, features }
    }

    pub fn translated(&self, by: Point3) -> Self {
        Self {
            points: self.points.iter().map(|p| add(*p, by)).collect(),
            features: self.features.clone(),
        }
    }

    /// Each point repeated `times` times in place: row i lands on rows i*times..(i+1)*times.
    pub fn replicate(&self, times: usize) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .flat_map(|i| std::iter::repeat_n(i, times))
            .collect();
        self.select(&idx)
    }

    /// Flattened N*3 coordinate buffer.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form xyz triples",
                values.len()
            )));
        }
        Self::new(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

fn check_finite(points: &[Point3]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "point {i} has a non-finite coordinate"
        )));
    }
    Ok(())
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
