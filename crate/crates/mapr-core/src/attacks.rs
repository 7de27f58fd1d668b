//! Gradient-based adversarial attacks on the classifier's input coordinates.
//!
//! Attacks operate on raw coordinates. For augmented-input models the
//! intrinsic features are recomputed from the current adversarial coordinates
//! at every step and enter the forward pass as constants, so the coordinate
//! gradient never flows through the feature map (matching the training-time
//! treatment of the features).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{intrinsic_map, GRAPH_K, AUGMENTED_CHANNELS, INTRINSIC_CHANNELS};
use crate::losses::cross_entropy;
use crate::model::ModelParams;
use crate::rng::stream;
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Bim,
    PgdL2,
    PgdLinf,
    SmaDrop,
    AddK,
    Tpgd,
    Sipgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::SmaDrop,
        AttackKind::PgdL2,
        AttackKind::PgdLinf,
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::AddK,
        AttackKind::Tpgd,
        AttackKind::Sipgd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::SmaDrop => "sma_drop",
            AttackKind::PgdL2 => "pgd_l2",
            AttackKind::PgdLinf => "pgd_linf",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::AddK => "add_k",
            AttackKind::Tpgd => "tpgd",
            AttackKind::Sipgd => "sipgd",
        }
    }
}

/// Per-attack parameters. `standard(kind)` gives the evaluation defaults for
/// unit-sphere-normalized clouds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub k_points: usize,
    pub surrogate_count: usize,
    pub si_weight: f64,
    pub momentum: f64,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn standard(kind: AttackKind) -> Self {
        let base = AttackConfig {
            kind,
            epsilon: 0.05,
            steps: 20,
            step_size: 0.01,
            k_points: 100,
            surrogate_count: 2,
            si_weight: 1.0,
            momentum: 0.9,
            random_start: false,
            seed: 0,
        };
        match kind {
            AttackKind::Fgsm => AttackConfig { steps: 1, step_size: 0.05, ..base },
            AttackKind::Bim => AttackConfig { steps: 10, ..base },
            AttackKind::PgdL2 => AttackConfig { epsilon: 1.25, step_size: 0.125, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm_bounded = !matches!(self.kind, AttackKind::SmaDrop | AttackKind::AddK);
        if norm_bounded && self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive for norm-bounded attacks"));
        }
        if self.steps < 1 && !matches!(self.kind, AttackKind::SmaDrop) {
            return Err(Error::config("steps must be at least 1"));
        }
        if matches!(self.kind, AttackKind::AddK) && self.k_points < 1 {
            return Err(Error::config("k_points must be at least 1 for add_k"));
        }
        Ok(())
    }
}

/// Norm the perturbation of a bounded attack is measured in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    Linf,
}

/// Outcome of one attack on one cloud. `success` records whether the
/// prediction changed relative to the clean input.
#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub adv_cloud: PointCloud,
    pub success: bool,
    pub perturbation_norm: f64,
    pub iterations_used: usize,
}

impl AdversarialResult {
    /// Construct for a norm-bounded attack, asserting the bound holds.
    fn bounded(
        original: &PointCloud,
        adv: PointCloud,
        norm: NormKind,
        epsilon: f64,
        success: bool,
        iterations: usize,
    ) -> Self {
        let delta: Vec<f64> = original
            .flat()
            .iter()
            .zip(adv.flat())
            .map(|(a, b)| b - a)
            .collect();
        let value = match norm {
            NormKind::L2 => delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
            NormKind::Linf => delta.iter().fold(0.0f64, |m, d| m.max(d.abs())),
        };
        assert!(
            value <= epsilon + 1e-9,
            "perturbation norm {value} exceeds budget {epsilon}"
        );
        AdversarialResult {
            adv_cloud: adv,
            success,
            perturbation_norm: value,
            iterations_used: iterations,
        }
    }
}

/// Cross-entropy gradient with respect to the raw coordinates of `coords`
/// (flat `n x 3`), for either input width. Returns `(grad, loss, logits)`.
pub fn ce_input_grad(
    params: &ModelParams,
    coords: &[f64],
    n: usize,
    label: usize,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let x = tape.leaf(coords.to_vec(), vec![n, 3], true)?;
    let input = if params.input_width == AUGMENTED_CHANNELS {
        let cloud = PointCloud::from_flat(coords, None)?;
        let phi = intrinsic_map(&cloud)?;
        let phi_t = tape.constant(phi.values, vec![n, INTRINSIC_CHANNELS])?;
        tape.concat_channels(&[x, phi_t])?
    } else {
        x
    };
    let logits = params.forward(&mut tape, &bound, input)?;
    let loss = cross_entropy(&mut tape, logits, &[label])?;
    let logits_data = tape.data(logits).to_vec();
    let loss_value = tape.scalar(loss);
    tape.backward(loss)?;
    Ok((tape.grad(x).unwrap().to_vec(), loss_value, logits_data))
}

fn predicted_class(params: &ModelParams, cloud: &PointCloud) -> Result<usize> {
    let values = if params.input_width == AUGMENTED_CHANNELS {
        crate::geometry::augment(cloud)?.values
    } else {
        cloud.flat()
    };
    Ok(params.predict(&values, cloud.len())?.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single-step sign attack: `X + epsilon * sign(grad CE)`.
pub fn fgsm(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
) -> Result<AdversarialResult> {
    iterated_sign_ascent(params, cloud, label, epsilon, 1, epsilon, false, None, 0)
}

/// Iterative sign attack with per-step projection onto the l-inf ball.
pub fn bim(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
) -> Result<AdversarialResult> {
    iterated_sign_ascent(params, cloud, label, epsilon, steps, step_size, false, None, 0)
}

/// Shape-distortion penalty and its analytic gradient. `pairs` holds the
/// directed neighbor pairs frozen from the clean cloud with their clean
/// distances.
struct ShapePenalty {
    weight: f64,
    pairs: Vec<(usize, usize, f64)>,
}

impl ShapePenalty {
    fn from_clean(cloud: &PointCloud, weight: f64) -> Result<Self> {
        let n = cloud.len();
        let k = GRAPH_K.min(n - 1);
        let (idx, dists) = crate::geometry::exact_knn(&cloud.points, k);
        let mut pairs = Vec::with_capacity(n * k);
        for i in 0..n {
            for t in 0..k {
                pairs.push((i, idx[i * k + t], dists[i * k + t]));
            }
        }
        Ok(ShapePenalty { weight, pairs })
    }

    /// Gradient of `weight * sum (||x_i - x_j|| - d0)^2` at `coords`.
    fn gradient(&self, coords: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; coords.len()];
        for &(i, j, d0) in &self.pairs {
            let dx = coords[i * 3] - coords[j * 3];
            let dy = coords[i * 3 + 1] - coords[j * 3 + 1];
            let dz = coords[i * 3 + 2] - coords[j * 3 + 2];
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            if d == 0.0 {
                continue;
            }
            let c = 2.0 * self.weight * (d - d0) / d;
            g[i * 3] += c * dx;
            g[i * 3 + 1] += c * dy;
            g[i * 3 + 2] += c * dz;
            g[j * 3] -= c * dx;
            g[j * 3 + 1] -= c * dy;
            g[j * 3 + 2] -= c * dz;
        }
        g
    }

    fn value(&self, coords: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j, d0)| {
                let dx = coords[i * 3] - coords[j * 3];
                let dy = coords[i * 3 + 1] - coords[j * 3 + 1];
                let dz = coords[i * 3 + 2] - coords[j * 3 + 2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                (d - d0) * (d - d0)
            })
            .sum()
    }
}

/// Shared driver for FGSM, BIM, PGD-linf and SI-PGD. Ascends
/// `CE - penalty` by coordinate sign steps, projecting onto the epsilon
/// l-inf ball around the clean cloud after every step.
#[allow(clippy::too_many_arguments)]
fn iterated_sign_ascent(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    random_start: bool,
    penalty: Option<&ShapePenalty>,
    seed: u64,
) -> Result<AdversarialResult> {
    let n = cloud.len();
    let clean_pred = predicted_class(params, cloud)?;
    let origin = cloud.flat();
    let mut coords = origin.clone();
    if random_start && epsilon > 0.0 {
        let mut rng = stream(seed, "attack-rs", 0);
        for (c, o) in coords.iter_mut().zip(&origin) {
            *c = o + rng.gen_range(-epsilon..=epsilon);
        }
    }
    let mut iterations = 0;
    for step in 0..steps {
        let (mut grad, _, _) = ce_input_grad(params, &coords, n, label)?;
        if step == 0 && !random_start && grad.iter().all(|&g| g == 0.0) {
            // no usable gradient anywhere: the attack cannot move
            return Ok(AdversarialResult {
                adv_cloud: cloud.clone(),
                success: false,
                perturbation_norm: 0.0,
                iterations_used: 0,
            });
        }
        if let Some(p) = penalty {
            if p.weight != 0.0 {
                let pg = p.gradient(&coords);
                for (g, pgv) in grad.iter_mut().zip(&pg) {
                    *g -= pgv;
                }
            }
        }
        for (c, (g, o)) in coords.iter_mut().zip(grad.iter().zip(&origin)) {
            *c = (*c + step_size * sign(*g)).clamp(o - epsilon, o + epsilon);
        }
        iterations = step + 1;
    }
    let adv = PointCloud::from_flat(&coords, cloud.label)?;
    let success = predicted_class(params, &adv)? != clean_pred;
    Ok(AdversarialResult::bounded(
        cloud,
        adv,
        NormKind::Linf,
        epsilon,
        success,
        iterations,
    ))
}

/// Projected gradient ascent under an l2 or l-inf bound.
#[allow(clippy::too_many_arguments)]
pub fn pgd(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    norm: NormKind,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    random_start: bool,
    seed: u64,
) -> Result<AdversarialResult> {
    match norm {
        NormKind::Linf => iterated_sign_ascent(
            params, cloud, label, epsilon, steps, step_size, random_start, None, seed,
        ),
        NormKind::L2 => pgd_l2(
            params, cloud, label, epsilon, steps, step_size, random_start, seed,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn pgd_l2(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    random_start: bool,
    seed: u64,
) -> Result<AdversarialResult> {
    let n = cloud.len();
    let clean_pred = predicted_class(params, cloud)?;
    let origin = cloud.flat();
    let mut coords = origin.clone();
    if random_start && epsilon > 0.0 {
        // uniform in the l2 ball: gaussian direction, radius by cdf inverse
        let mut rng = stream(seed, "attack-rs", 0);
        let dim = coords.len() as f64;
        let dir: Vec<f64> = (0..coords.len())
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-30);
        let radius = epsilon * rng.gen_range(0.0..1.0f64).powf(1.0 / dim);
        for (c, d) in coords.iter_mut().zip(&dir) {
            *c += radius * d / norm;
        }
    }
    let mut iterations = 0;
    for step in 0..steps {
        let (grad, _, _) = ce_input_grad(params, &coords, n, label)?;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            if step == 0 && !random_start {
                return Ok(AdversarialResult {
                    adv_cloud: cloud.clone(),
                    success: false,
                    perturbation_norm: 0.0,
                    iterations_used: 0,
                });
            }
            break;
        }
        for (c, g) in coords.iter_mut().zip(&grad) {
            *c += step_size * g / gnorm;
        }
        // project onto the epsilon ball around the origin
        let mut delta_norm = 0.0;
        for (c, o) in coords.iter().zip(&origin) {
            delta_norm += (c - o) * (c - o);
        }
        let delta_norm = delta_norm.sqrt();
        if delta_norm > epsilon {
            let scale = epsilon / delta_norm;
            for (c, o) in coords.iter_mut().zip(&origin) {
                *c = o + (*c - o) * scale;
            }
        }
        iterations = step + 1;
    }
    let adv = PointCloud::from_flat(&coords, cloud.label)?;
    let success = predicted_class(params, &adv)? != clean_pred;
    Ok(AdversarialResult::bounded(
        cloud,
        adv,
        NormKind::L2,
        epsilon,
        success,
        iterations,
    ))
}

/// Saliency-guided point removal: drop the `k_points` points with the
/// largest inward-shift saliency `-<grad_i, x_i - centroid>`.
pub fn sma_drop(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    k_points: usize,
) -> Result<AdversarialResult> {
    let n = cloud.len();
    if k_points == 0 {
        let clean_pred = predicted_class(params, cloud)?;
        return Ok(AdversarialResult {
            adv_cloud: cloud.clone(),
            success: clean_pred != predicted_class(params, cloud)?,
            perturbation_norm: 0.0,
            iterations_used: 0,
        });
    }
    if n <= k_points {
        return Err(Error::config(format!(
            "sma_drop needs more than {k_points} points, got {n}"
        )));
    }
    let clean_pred = predicted_class(params, cloud)?;
    let (grad, _, _) = ce_input_grad(params, &cloud.flat(), n, label)?;
    let saliency = saliency_scores(cloud, &grad);
    let drop = top_k_indices(&saliency, k_points);
    let mut keep_mask = vec![true; n];
    for &i in &drop {
        keep_mask[i] = false;
    }
    let points: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .zip(&keep_mask)
        .filter(|(_, keep)| **keep)
        .map(|(p, _)| *p)
        .collect();
    let adv = PointCloud::new(points, cloud.label);
    let success = predicted_class(params, &adv)? != clean_pred;
    Ok(AdversarialResult {
        adv_cloud: adv,
        success,
        perturbation_norm: 0.0,
        iterations_used: 1,
    })
}

/// Inward-shift saliency of every point given the CE coordinate gradient.
pub fn saliency_scores(cloud: &PointCloud, grad: &[f64]) -> Vec<f64> {
    let c = cloud.centroid();
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            -(grad[i * 3] * (p[0] - c[0])
                + grad[i * 3 + 1] * (p[1] - c[1])
                + grad[i * 3 + 2] * (p[2] - c[2]))
        })
        .collect()
}

/// Indices of the k largest values, ties broken by lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

// initialization jitter for added points
const ADD_INIT_SIGMA: f64 = 0.01;
const ADD_INIT_CLIP: f64 = 0.02;

/// Append `k_points` adversarially optimized points. The added points start
/// at randomly chosen existing points plus clipped jitter and are the only
/// coordinates moved by gradient ascent; the original points are preserved
/// bit-exactly.
#[allow(clippy::too_many_arguments)]
pub fn add_k(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    k_points: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<AdversarialResult> {
    let n = cloud.len();
    let clean_pred = predicted_class(params, cloud)?;
    let mut rng = stream(seed, "add-k-init", 0);
    let mut added = Vec::with_capacity(k_points * 3);
    for _ in 0..k_points {
        let anchor = cloud.points[rng.gen_range(0..n)];
        for d in 0..3 {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            added.push(anchor[d] + (g * ADD_INIT_SIGMA).clamp(-ADD_INIT_CLIP, ADD_INIT_CLIP));
        }
    }
    let base = cloud.flat();
    let total = n + k_points;
    let mut iterations = 0;
    for step in 0..steps {
        // gradient with respect to the added block only
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false)?;
        let base_row = tape.constant(base.clone(), vec![1, n * 3])?;
        let added_leaf = tape.leaf(added.clone(), vec![1, k_points * 3], true)?;
        let joined = tape.concat_channels(&[base_row, added_leaf])?;
        let coords_t = tape.reshape(joined, vec![total, 3])?;
        let input = if params.input_width == AUGMENTED_CHANNELS {
            let mut coords = base.clone();
            coords.extend_from_slice(&added);
            let full = PointCloud::from_flat(&coords, None)?;
            let phi = intrinsic_map(&full)?;
            let phi_t = tape.constant(phi.values, vec![total, INTRINSIC_CHANNELS])?;
            tape.concat_channels(&[coords_t, phi_t])?
        } else {
            coords_t
        };
        let logits = params.forward(&mut tape, &bound, input)?;
        let loss = cross_entropy(&mut tape, logits, &[label])?;
        tape.backward(loss)?;
        let grad = tape.grad(added_leaf).unwrap();
        if step == 0 && grad.iter().all(|&g| g == 0.0) {
            break;
        }
        for (a, g) in added.iter_mut().zip(grad) {
            *a += step_size * sign(*g);
        }
        iterations = step + 1;
    }
    let mut points = cloud.points.clone();
    let init_norm: f64 = 0.0;
    for ch in added.chunks_exact(3) {
        points.push([ch[0], ch[1], ch[2]]);
    }
    let adv = PointCloud::new(points, cloud.label);
    let success = predicted_class(params, &adv)? != clean_pred;
    Ok(AdversarialResult {
        adv_cloud: adv,
        success,
        perturbation_norm: init_norm,
        iterations_used: iterations,
    })
}

/// Transfer attack: momentum PGD driven by the mean gradient of several
/// surrogate models, evaluated on the target. Requires at least two
/// surrogates unless `allow_single_surrogate_debug` is set.
#[allow(clippy::too_many_arguments)]
pub fn tpgd(
    surrogates: &[&ModelParams],
    target: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    momentum: f64,
    allow_single_surrogate_debug: bool,
) -> Result<AdversarialResult> {
    if surrogates.len() < 2 && !allow_single_surrogate_debug {
        return Err(Error::config(format!(
            "tpgd needs at least 2 surrogate models, got {}",
            surrogates.len()
        )));
    }
    if surrogates.is_empty() {
        return Err(Error::config("tpgd needs at least one surrogate"));
    }
    let n = cloud.len();
    let clean_pred = predicted_class(target, cloud)?;
    let origin = cloud.flat();
    let mut coords = origin.clone();
    let mut velocity = vec![0.0; coords.len()];
    let mut iterations = 0;
    for step in 0..steps {
        let mean_grad = mean_surrogate_gradient(surrogates, &coords, n, label)?;
        let l1: f64 = mean_grad.iter().map(|g| g.abs()).sum();
        if l1 == 0.0 {
            if step == 0 {
                return Ok(AdversarialResult {
                    adv_cloud: cloud.clone(),
                    success: false,
                    perturbation_norm: 0.0,
                    iterations_used: 0,
                });
            }
            break;
        }
        for (v, g) in velocity.iter_mut().zip(&mean_grad) {
            *v = momentum * *v + g / l1;
        }
        for (c, (v, o)) in coords.iter_mut().zip(velocity.iter().zip(&origin)) {
            *c = (*c + step_size * sign(*v)).clamp(o - epsilon, o + epsilon);
        }
        iterations = step + 1;
    }
    let adv = PointCloud::from_flat(&coords, cloud.label)?;
    let success = predicted_class(target, &adv)? != clean_pred;
    Ok(AdversarialResult::bounded(
        cloud,
        adv,
        NormKind::Linf,
        epsilon,
        success,
        iterations,
    ))
}

/// Elementwise mean of the surrogate CE gradients at `coords`.
pub fn mean_surrogate_gradient(
    surrogates: &[&ModelParams],
    coords: &[f64],
    n: usize,
    label: usize,
) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; coords.len()];
    for params in surrogates {
        let (g, _, _) = ce_input_grad(params, coords, n, label)?;
        for (m, gv) in mean.iter_mut().zip(&g) {
            *m += gv;
        }
    }
    let count = surrogates.len() as f64;
    for m in &mut mean {
        *m /= count;
    }
    Ok(mean)
}

/// Shape-invariant PGD: l-inf sign ascent on
/// `CE - si_weight * sum (||x'_i - x'_j|| - ||x_i - x_j||)^2` with neighbor
/// pairs frozen from the clean cloud. `si_weight = 0` reduces exactly to
/// PGD-linf.
#[allow(clippy::too_many_arguments)]
pub fn sipgd(
    params: &ModelParams,
    cloud: &PointCloud,
    label: usize,
    epsilon: f64,
    steps: usize,
    step_size: f64,
    si_weight: f64,
    seed: u64,
) -> Result<AdversarialResult> {
    let penalty = ShapePenalty::from_clean(cloud, si_weight)?;
    iterated_sign_ascent(
        params,
        cloud,
        label,
        epsilon,
        steps,
        step_size,
        false,
        Some(&penalty),
        seed,
    )
}

/// Shape-distortion value of an adversarial cloud relative to its clean
/// original (same point count), used for directional comparisons.
pub fn neighbor_distance_distortion(clean: &PointCloud, adv: &PointCloud) -> Result<f64> {
    if clean.len() != adv.len() {
        return Err(Error::data("distortion requires equal point counts"));
    }
    let penalty = ShapePenalty::from_clean(clean, 1.0)?;
    Ok(penalty.value(&adv.flat()) / penalty.pairs.len() as f64)
}

/// Dispatch an attack described by `cfg` against `params`.
pub fn run_attack(
    cfg: &AttackConfig,
    params: &ModelParams,
    surrogates: &[&ModelParams],
    cloud: &PointCloud,
    label: usize,
) -> Result<AdversarialResult> {
    cfg.validate()?;
    match cfg.kind {
        AttackKind::Fgsm => fgsm(params, cloud, label, cfg.epsilon),
        AttackKind::Bim => bim(params, cloud, label, cfg.epsilon, cfg.steps, cfg.step_size),
        AttackKind::PgdL2 => pgd(
            params,
            cloud,
            label,
            NormKind::L2,
            cfg.epsilon,
            cfg.steps,
            cfg.step_size,
            cfg.random_start,
            cfg.seed,
        ),
        AttackKind::PgdLinf => pgd(
            params,
            cloud,
            label,
            NormKind::Linf,
            cfg.epsilon,
            cfg.steps,
            cfg.step_size,
            cfg.random_start,
            cfg.seed,
        ),
        AttackKind::SmaDrop => sma_drop(params, cloud, label, cfg.k_points),
        AttackKind::AddK => add_k(
            params,
            cloud,
            label,
            cfg.k_points,
            cfg.steps,
            cfg.step_size,
            cfg.seed,
        ),
        AttackKind::Tpgd => tpgd(
            surrogates,
            params,
            cloud,
            label,
            cfg.epsilon,
            cfg.steps,
            cfg.step_size,
            cfg.momentum,
            false,
        ),
        AttackKind::Sipgd => sipgd(
            params,
            cloud,
            label,
            cfg.epsilon,
            cfg.steps,
            cfg.step_size,
            cfg.si_weight,
            cfg.seed,
        ),
    }
}
