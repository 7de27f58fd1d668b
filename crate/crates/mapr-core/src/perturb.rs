//! Geometry-preserving training perturbation and the statistical outlier
//! removal (SOR) test-time defense.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist2, PointCloud};
use crate::geometry::exact_knn;

/// Small random rotation about the gravity (z) axis plus clipped Gaussian
/// jitter. Magnitudes default to values consistent with unit-sphere clouds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub max_rotation_deg: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            max_rotation_deg: 15.0,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(crate::error::Error::config(format!(
                "max_rotation_deg must be in [0, 180], got {}",
                self.max_rotation_deg
            )));
        }
        if self.jitter_sigma < 0.0 || self.jitter_clip < 0.0 {
            return Err(crate::error::Error::config(
                "jitter_sigma and jitter_clip must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// SOR parameters: mean k-NN distance threshold at `mean + alpha * std`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SorConfig {
    pub k: usize,
    pub alpha: f64,
}

impl Default for SorConfig {
    fn default() -> Self {
        SorConfig { k: 2, alpha: 1.1 }
    }
}

/// Perturbed view: rotate by a uniform angle in
/// `[-max_rotation_deg, +max_rotation_deg]` about z, then add i.i.d. Gaussian
/// jitter clipped elementwise. Label is preserved; output is deterministic
/// for a given RNG state.
pub fn perturb(cloud: &PointCloud, cfg: &PerturbConfig, rng: &mut ChaCha8Rng) -> PointCloud {
    let max_rad = cfg.max_rotation_deg.to_radians();
    let angle = if max_rad > 0.0 {
        rng.gen_range(-max_rad..=max_rad)
    } else {
        0.0
    };
    let (sin, cos) = angle.sin_cos();
    let mut points = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let rotated = if angle == 0.0 {
            *p
        } else {
            [
                cos * p[0] - sin * p[1],
                sin * p[0] + cos * p[1],
                p[2],
            ]
        };
        let mut q = rotated;
        if cfg.jitter_sigma > 0.0 {
            for qd in &mut q {
                let noise: f64 = sample_gaussian(rng) * cfg.jitter_sigma;
                *qd += noise.clamp(-cfg.jitter_clip, cfg.jitter_clip);
            }
        }
        points.push(q);
    }
    PointCloud::new(points, cloud.label)
}

// Box-Muller; two uniform draws per sample keeps the stream consumption
// independent of the values drawn.
fn sample_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Statistical outlier removal: drop every point whose mean distance to its
/// k nearest neighbors exceeds `mean(d) + alpha * std(d)` (population std).
/// Never removes all points; degenerate inputs (n <= k) pass through with a
/// warning.
pub fn sor_defense(cloud: &PointCloud, cfg: &SorConfig) -> PointCloud {
    let n = cloud.len();
    if n <= cfg.k {
        log::warn!("sor: cloud of {n} points too small for k={}, returning input", cfg.k);
        return cloud.clone();
    }
    let (idx, _) = exact_knn(&cloud.points, cfg.k);
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let sum: f64 = (0..cfg.k)
                .map(|t| dist2(&cloud.points[i], &cloud.points[idx[i * cfg.k + t]]).sqrt())
                .sum();
            sum / cfg.k as f64
        })
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let threshold = mean + cfg.alpha * var.sqrt();
    let keep: Vec<usize> = (0..n).filter(|&i| d[i] <= threshold).collect();
    if keep.is_empty() {
        log::warn!("sor: filter would remove every point, returning input");
        return cloud.clone();
    }
    PointCloud::new(
        keep.iter().map(|&i| cloud.points[i]).collect(),
        cloud.label,
    )
}
