//! k-NN diffusion operator and the intrinsic feature map.
//!
//! Each point is enriched with multi-scale diffusion descriptors (diffused
//! coordinates and a diffused density signal at steps 1, 2, 4, 8) plus a
//! curvature estimate from the random-walk Laplacian, giving 17 intrinsic
//! channels per point. Concatenated with the raw coordinates this yields the
//! 20-channel augmented representation fed to the classifier.

use rayon::prelude::*;

use crate::cloud::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Neighbor count for the diffusion graph.
pub const GRAPH_K: usize = 20;
/// Diffusion steps, ascending.
pub const DIFFUSION_STEPS: [usize; 4] = [1, 2, 4, 8];
/// Diffusion channels: 4 steps x (3 diffused coords + 1 diffused density).
pub const DIFFUSION_CHANNELS: usize = 16;
/// Diffusion channels plus the curvature channel.
pub const INTRINSIC_CHANNELS: usize = 17;
/// Raw coordinates plus intrinsic channels.
pub const AUGMENTED_CHANNELS: usize = 3 + INTRINSIC_CHANNELS;

/// Row-stochastic diffusion operator built from a k-NN graph.
///
/// `neighbor_idx` holds the directed exact k-NN result (ties broken by lower
/// index); the symmetrized operator has union support, so its rows can hold
/// more than `k` entries and are stored in CSR form.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    pub n: usize,
    pub k: usize,
    /// Directed k nearest neighbors per point, nearest first. Row i holds k entries.
    pub neighbor_idx: Vec<usize>,
    /// Distance from each point to its k-th (farthest) neighbor.
    pub bandwidths: Vec<f64>,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl DiffusionOperator {
    /// Entries `(j, A_ij)` of row i of the row-stochastic operator.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.cols[lo..hi].iter().copied().zip(self.weights[lo..hi].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.weights[lo..hi].iter().sum()
    }

    /// Apply the operator to a row-major `n x c` signal: `out = A * signal`.
    pub fn apply(&self, signal: &[f64], channels: usize) -> Vec<f64> {
        assert_eq!(signal.len(), self.n * channels, "signal size mismatch");
        let mut out = vec![0.0; self.n * channels];
        let body = |i: usize, row_out: &mut [f64]| {
            for (j, w) in self.row(i) {
                let src = &signal[j * channels..(j + 1) * channels];
                for (o, s) in row_out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        };
        if self.n >= 512 {
            out.par_chunks_mut(channels)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        } else {
            for (i, row) in out.chunks_mut(channels).enumerate() {
                body(i, row);
            }
        }
        out
    }

    /// Dense `n x n` matrix of the operator, for small-n oracle comparisons.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                m[i * self.n + j] = w;
            }
        }
        m
    }
}

/// Exact k nearest neighbors of every point, ties broken by lower index.
/// Returns `(indices, dists)` with rows of length k, nearest first.
pub fn exact_knn(points: &[[f64; 3]], k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = points.len();
    let per_point = |i: usize| {
        // bounded insertion sort over (dist2, index), ordered ascending
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dist2(&points[i], &points[j]);
            if best.len() == k {
                let worst = best[k - 1];
                if d > worst.0 || (d == worst.0 && j > worst.1) {
                    continue;
                }
            }
            let pos = best.partition_point(|&(bd, bj)| bd < d || (bd == d && bj < j));
            best.insert(pos, (d, j));
            if best.len() > k {
                best.pop();
            }
        }
        best
    };
    let rows: Vec<Vec<(f64, usize)>> = if n >= 512 {
        (0..n).into_par_iter().map(per_point).collect()
    } else {
        (0..n).map(per_point).collect()
    };
    let mut idx = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    for row in rows {
        for (d, j) in row {
            idx.push(j);
            dists.push(d.sqrt());
        }
    }
    (idx, dists)
}

/// Build the diffusion operator: exact k-NN, Gaussian edge weights
/// `exp(-d_ij^2 / sigma_i^2)` with `sigma_i` the distance to the farthest
/// neighbor, symmetrized as `(w + w^T)/2` on the union support, then
/// row-normalized.
pub fn build_knn_graph(cloud: &PointCloud, k: usize) -> Result<DiffusionOperator> {
    let n = cloud.len();
    if n <= k {
        return Err(Error::config(format!(
            "k-NN graph with k={k} needs at least {} points, got {n}",
            k + 1
        )));
    }
    let (neighbor_idx, dists) = exact_knn(&cloud.points, k);

    // sigma_i: distance to the k-th (farthest) neighbor of the directed graph.
    let mut bandwidths: Vec<f64> = (0..n).map(|i| dists[i * k + k - 1]).collect();
    let mut positive: Vec<f64> = bandwidths.iter().copied().filter(|&b| b > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = positive[positive.len() / 2];
    for b in &mut bandwidths {
        if *b == 0.0 {
            *b = median;
        }
    }

    // Directed Gaussian weights, then (w + w^T)/2 on the union support.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * k); n];
    for i in 0..n {
        let s2 = bandwidths[i] * bandwidths[i];
        for t in 0..k {
            let j = neighbor_idx[i * k + t];
            let d = dists[i * k + t];
            let w = 0.5 * (-(d * d) / s2).exp();
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
    }

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    row_offsets.push(0);
    for (i, mut row) in rows.into_iter().enumerate() {
        row.sort_by_key(|&(j, _)| j);
        // merge duplicate columns (edges present in both directions)
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (j, w) in row {
            debug_assert_ne!(i, j, "self-loop in k-NN graph");
            match merged.last_mut() {
                Some((lj, lw)) if *lj == j => *lw += w,
                _ => merged.push((j, w)),
            }
        }
        // canonicalize the summation order by weight value: row sums and
        // later operator applications then produce bit-identical results
        // under any permutation of the input points (weight ties aside)
        merged.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let total: f64 = merged.iter().map(|(_, w)| w).sum();
        for (j, w) in merged {
            cols.push(j);
            weights.push(w / total);
        }
        row_offsets.push(cols.len());
    }

    Ok(DiffusionOperator {
        n,
        k,
        neighbor_idx,
        bandwidths,
        row_offsets,
        cols,
        weights,
    })
}

/// Per-point curvature estimate: `kappa_i = ||x_i - (A x)_i||`, the norm of
/// the random-walk Laplacian applied to the coordinates.
pub fn curvature(op: &DiffusionOperator, cloud: &PointCloud) -> Vec<f64> {
    let coords = cloud.flat();
    let diffused = op.apply(&coords, 3);
    (0..op.n)
        .map(|i| {
            let dx = coords[i * 3] - diffused[i * 3];
            let dy = coords[i * 3 + 1] - diffused[i * 3 + 1];
            let dz = coords[i * 3 + 2] - diffused[i * 3 + 2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect()
}

/// Multi-scale diffusion descriptors: for each step t (ascending) the four
/// channels `[A^t x, A^t y, A^t z, A^t 1]`. Powers are computed by repeated
/// sparse application; the dense matrix power is never materialized.
pub fn diffusion_features(
    op: &DiffusionOperator,
    cloud: &PointCloud,
    steps: &[usize],
) -> Result<Vec<f64>> {
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "diffusion steps must be sorted ascending and unique, got {steps:?}"
        )));
    }
    let n = op.n;
    let out_channels = 4 * steps.len();
    // running signal [x y z 1] per point
    let mut signal = vec![0.0; n * 4];
    for (i, p) in cloud.points.iter().enumerate() {
        signal[i * 4..i * 4 + 3].copy_from_slice(p);
        signal[i * 4 + 3] = 1.0;
    }
    let mut out = vec![0.0; n * out_channels];
    let max_step = *steps.last().unwrap_or(&0);
    let mut capture = 0;
    for t in 1..=max_step {
        signal = op.apply(&signal, 4);
        if steps[capture] == t {
            for i in 0..n {
                out[i * out_channels + capture * 4..i * out_channels + capture * 4 + 4]
                    .copy_from_slice(&signal[i * 4..i * 4 + 4]);
            }
            capture += 1;
        }
    }
    Ok(out)
}

/// Intrinsic feature map: 16 diffusion channels followed by curvature.
#[derive(Debug, Clone)]
pub struct IntrinsicFeatures {
    pub n: usize,
    /// Row-major `n x 17`.
    pub values: Vec<f64>,
}

impl IntrinsicFeatures {
    pub fn channels(&self) -> usize {
        INTRINSIC_CHANNELS
    }

    /// Squared Frobenius distance to another feature array of equal size.
    pub fn frobenius_gap_sq(&self, other: &IntrinsicFeatures) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "feature size mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Compute the intrinsic features of a cloud with the default graph.
pub fn intrinsic_map(cloud: &PointCloud) -> Result<IntrinsicFeatures> {
    let op = build_knn_graph(cloud, GRAPH_K)?;
    intrinsic_map_with(&op, cloud)
}

/// Intrinsic features from an already-built operator over the same cloud.
pub fn intrinsic_map_with(op: &DiffusionOperator, cloud: &PointCloud) -> Result<IntrinsicFeatures> {
    let n = cloud.len();
    let diff = diffusion_features(op, cloud, &DIFFUSION_STEPS)?;
    let kappa = curvature(op, cloud);
    let mut values = vec![0.0; n * INTRINSIC_CHANNELS];
    for i in 0..n {
        values[i * INTRINSIC_CHANNELS..i * INTRINSIC_CHANNELS + DIFFUSION_CHANNELS]
            .copy_from_slice(&diff[i * DIFFUSION_CHANNELS..(i + 1) * DIFFUSION_CHANNELS]);
        values[i * INTRINSIC_CHANNELS + DIFFUSION_CHANNELS] = kappa[i];
    }
    Ok(IntrinsicFeatures { n, values })
}

/// Classifier input: `[x y z | Phi]`, row-major `n x 20`. The first three
/// columns are bit-equal to the source coordinates.
#[derive(Debug, Clone)]
pub struct AugmentedCloud {
    pub n: usize,
    pub values: Vec<f64>,
    pub label: Option<usize>,
}

pub fn augment(cloud: &PointCloud) -> Result<AugmentedCloud> {
    let phi = intrinsic_map(cloud)?;
    Ok(augment_with(cloud, &phi))
}

pub fn augment_with(cloud: &PointCloud, phi: &IntrinsicFeatures) -> AugmentedCloud {
    let n = cloud.len();
    assert_eq!(phi.n, n, "feature row count mismatch");
    let mut values = vec![0.0; n * AUGMENTED_CHANNELS];
    for i in 0..n {
        values[i * AUGMENTED_CHANNELS..i * AUGMENTED_CHANNELS + 3].copy_from_slice(&cloud.points[i]);
        values[i * AUGMENTED_CHANNELS + 3..(i + 1) * AUGMENTED_CHANNELS]
            .copy_from_slice(&phi.values[i * INTRINSIC_CHANNELS..(i + 1) * INTRINSIC_CHANNELS]);
    }
    AugmentedCloud {
        n,
        values,
        label: cloud.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collinear_cloud() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], None)
    }

    #[test]
    fn collinear_rows_sum_to_one_and_middle_is_symmetric() {
        let op = build_knn_graph(&collinear_cloud(), 2).unwrap();
        for i in 0..3 {
            assert!((op.row_sum(i) - 1.0).abs() < 1e-12);
        }
        let row: Vec<(usize, f64)> = op.row(1).collect();
        assert_eq!(row.len(), 2);
        assert!((row[0].1 - 0.5).abs() < 1e-12);
        assert!((row[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_config_error() {
        let cloud = collinear_cloud();
        assert!(matches!(
            build_knn_graph(&cloud, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_duplicate_cloud_is_degenerate() {
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.5]; 8], None);
        assert!(matches!(
            build_knn_graph(&cloud, 3),
            Err(Error::DegenerateBandwidth)
        ));
    }

    #[test]
    fn partial_duplicates_fall_back_to_median_bandwidth() {
        // four copies of the origin exhaust k=3 neighborhoods with zero
        // distance; the remaining points keep positive bandwidths
        let mut pts = vec![[0.0, 0.0, 0.0]; 4];
        for i in 0..8 {
            let a = i as f64 * 0.7;
            pts.push([a.cos(), a.sin(), 0.3 * a]);
        }
        let cloud = PointCloud::new(pts, None);
        let op = build_knn_graph(&cloud, 3).unwrap();
        assert!(op.bandwidths.iter().all(|&b| b > 0.0));
        for i in 0..op.n {
            assert!((op.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_ties_break_by_lower_index() {
        // points 1 and 2 are equidistant from point 0
        let cloud = PointCloud::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 5.0, 0.0],
            ],
            None,
        );
        let (idx, _) = exact_knn(&cloud.points, 2);
        assert_eq!(&idx[0..2], &[1, 2]);
    }

    #[test]
    fn curvature_zero_at_symmetric_ring_center() {
        // center point surrounded by a symmetric ring; uniform weights make
        // the neighborhood average land exactly on the center
        let mut pts = vec![[0.0, 0.0, 0.0]];
        for i in 0..6 {
            let a = std::f64::consts::TAU * i as f64 / 6.0;
            pts.push([a.cos(), a.sin(), 0.0]);
        }
        let cloud = PointCloud::new(pts, None);
        let op = build_knn_graph(&cloud, 6).unwrap();
        let kappa = curvature(&op, &cloud);
        assert!(kappa[0].abs() < 1e-12, "kappa[0] = {}", kappa[0]);
        assert!(kappa.iter().all(|&k| k >= 0.0));
    }

    #[test]
    fn diffusion_preserves_constant_signal() {
        let mut pts = Vec::new();
        for i in 0..32 {
            let a = i as f64 * 0.41;
            pts.push([a.cos(), a.sin(), (i as f64 * 0.13).sin()]);
        }
        let cloud = PointCloud::new(pts, None);
        let op = build_knn_graph(&cloud, 5).unwrap();
        let c = 3.25;
        let mut signal = vec![c; 32];
        for _ in 0..8 {
            signal = op.apply(&signal, 1);
        }
        assert!(signal.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn diffusion_steps_must_ascend() {
        let cloud = collinear_cloud();
        let op = build_knn_graph(&cloud, 2).unwrap();
        assert!(diffusion_features(&op, &cloud, &[2, 1]).is_err());
    }

    #[test]
    fn intrinsic_width_and_augmented_width() {
        let mut pts = Vec::new();
        for i in 0..40 {
            let a = i as f64 * 0.37;
            pts.push([a.cos(), a.sin(), (0.5 * a).cos()]);
        }
        let cloud = PointCloud::new(pts, Some(1));
        let phi = intrinsic_map(&cloud).unwrap();
        assert_eq!(phi.values.len(), 40 * INTRINSIC_CHANNELS);
        let aug = augment(&cloud).unwrap();
        assert_eq!(aug.values.len(), 40 * AUGMENTED_CHANNELS);
        assert_eq!(aug.label, Some(1));
        // first three columns bit-equal the source coordinates
        for (i, p) in cloud.points.iter().enumerate() {
            for d in 0..3 {
                assert_eq!(aug.values[i * AUGMENTED_CHANNELS + d].to_bits(), p[d].to_bits());
            }
        }
        // density channels (offset 3 within each step block) equal 1
        for i in 0..40 {
            for s in 0..4 {
                let v = phi.values[i * INTRINSIC_CHANNELS + s * 4 + 3];
                assert!((v - 1.0).abs() < 1e-12, "density channel {v}");
            }
        }
    }
}
