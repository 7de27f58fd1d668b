//! Raw point-cloud sample type and normalization.

use crate::error::{Error, Result};

/// A 3D point-cloud sample: `n` points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>) -> Self {
        PointCloud { points, label }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        for d in 0..3 {
            c[d] /= n;
        }
        c
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Center on the centroid and scale so the farthest point sits on the
    /// unit sphere. Errors when all points coincide (zero extent).
    pub fn normalize_unit_sphere(&mut self) -> Result<()> {
        let c = self.centroid();
        for p in &mut self.points {
            for d in 0..3 {
                p[d] -= c[d];
            }
        }
        let r = self.max_norm();
        if r <= 0.0 {
            return Err(Error::data("cannot normalize a cloud with zero extent"));
        }
        for p in &mut self.points {
            for d in 0..3 {
                p[d] /= r;
            }
        }
        Ok(())
    }

    /// Flat row-major copy of the coordinates, one `[x, y, z]` row per point.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_flat(flat: &[f64], label: Option<usize>) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::data(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(PointCloud { points, label })
    }
}

pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
