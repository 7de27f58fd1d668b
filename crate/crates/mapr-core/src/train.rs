//! Training loop: classification plus consistency regularization, the
//! adversarial-training baseline, ablation modes, and the trained-model
//! diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, NormKind};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{augment_with, intrinsic_map, IntrinsicFeatures, AUGMENTED_CHANNELS, INTRINSIC_CHANNELS};
use crate::losses::{consistency_loss, cross_entropy, lambda_schedule, LossConfig};
use crate::model::ModelParams;
use crate::perturb::{perturb, PerturbConfig};
use crate::rng::stream;
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Vanilla,
    At,
    Mapr,
    IntrinsicOnly,
    LipOnly,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::Vanilla,
        TrainMode::At,
        TrainMode::Mapr,
        TrainMode::IntrinsicOnly,
        TrainMode::LipOnly,
    ];

    /// Channel width of the model input under this mode.
    pub fn input_width(&self) -> usize {
        match self {
            TrainMode::Mapr | TrainMode::IntrinsicOnly => AUGMENTED_CHANNELS,
            _ => 3,
        }
    }

    pub fn uses_consistency(&self) -> bool {
        matches!(self, TrainMode::Mapr | TrainMode::LipOnly)
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::At => "at",
            TrainMode::Mapr => "mapr",
            TrainMode::IntrinsicOnly => "intrinsic_only",
            TrainMode::LipOnly => "lip_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(TrainMode::Vanilla),
            "at" => Ok(TrainMode::At),
            "mapr" => Ok(TrainMode::Mapr),
            "intrinsic_only" => Ok(TrainMode::IntrinsicOnly),
            "lip_only" => Ok(TrainMode::LipOnly),
            other => Err(Error::config(format!("unknown training mode '{other}'"))),
        }
    }
}

/// Inner attack used by adversarial training: l2 PGD, 20 iterations,
/// budget 0.05, step 0.005.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtInnerAttack {
    pub steps: usize,
    pub epsilon: f64,
    pub step_size: f64,
}

impl Default for AtInnerAttack {
    fn default() -> Self {
        AtInnerAttack {
            steps: 20,
            epsilon: 0.05,
            step_size: 0.005,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 12,
            lr: 0.002,
            lr_decay: 0.7,
            lr_decay_every: 20,
            seed: 0,
            mode: TrainMode::Vanilla,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.lr <= 0.0 || self.lr_decay <= 0.0 || self.lr_decay_every == 0 {
            return Err(Error::config("learning-rate settings must be positive"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let stages = (epoch - 1) / self.lr_decay_every;
        self.lr * self.lr_decay.powi(stages as i32)
    }
}

/// One training sample with its cached clean-view features.
pub struct TrainSample {
    pub cloud: PointCloud,
    pub label: usize,
    pub raw: Vec<f64>,
    pub aug: Option<Vec<f64>>,
    pub phi: Option<IntrinsicFeatures>,
}

/// Training set with per-sample cached features. All clouds must share one
/// point count so batches stack.
pub struct TrainData {
    pub samples: Vec<TrainSample>,
    pub n_points: usize,
    pub num_classes: usize,
}

impl TrainData {
    pub fn prepare(clouds: Vec<PointCloud>, num_classes: usize, need_phi: bool) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let n_points = clouds[0].len();
        for c in &clouds {
            if c.len() != n_points {
                return Err(Error::data(format!(
                    "all training clouds must have {n_points} points, found {}",
                    c.len()
                )));
            }
            match c.label {
                Some(l) if l < num_classes => {}
                Some(l) => {
                    return Err(Error::data(format!(
                        "label {l} out of range for {num_classes} classes"
                    )))
                }
                None => return Err(Error::data("training cloud without label")),
            }
        }
        let samples: Result<Vec<TrainSample>> = clouds
            .into_par_iter()
            .map(|cloud| {
                let label = cloud.label.unwrap();
                let raw = cloud.flat();
                let (phi, aug) = if need_phi {
                    let phi = intrinsic_map(&cloud)?;
                    let aug = augment_with(&cloud, &phi).values;
                    (Some(phi), Some(aug))
                } else {
                    (None, None)
                };
                Ok(TrainSample {
                    cloud,
                    label,
                    raw,
                    aug,
                    phi,
                })
            })
            .collect();
        Ok(TrainData {
            samples: samples?,
            n_points,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-epoch log record, one NDJSON line per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_cons: f64,
    pub lambda: f64,
    pub train_acc: f64,
    pub wall_ms: u64,
}

/// Adam state over the model parameters, in bind order.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        for layer in &params.layers {
            m.push(vec![0.0; layer.w.len()]);
            m.push(vec![0.0; layer.b.len()]);
        }
        Adam {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over flattened `(w, b)` gradient pairs in layer order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut slot = 0;
        for layer in &mut params.layers {
            for buf in [&mut layer.w, &mut layer.b] {
                let g = &grads[slot];
                let m = &mut self.m[slot];
                let v = &mut self.v[slot];
                for i in 0..buf.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    buf[i] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
                slot += 1;
            }
        }
    }
}

struct BatchViews {
    /// Clean model input, flat `[B, N, W]`.
    clean: Vec<f64>,
    /// Perturbed-view model input for consistency modes.
    perturbed: Option<Vec<f64>>,
    /// Adversarial input for AT.
    adversarial: Option<Vec<f64>>,
    /// Squared feature gaps per sample for the consistency denominator.
    gaps_sq: Vec<f64>,
    labels: Vec<usize>,
}

/// Assemble the per-mode batch tensors. Feature recomputation for the
/// perturbed views and the AT inner attack parallelize over the batch.
#[allow(clippy::too_many_arguments)]
fn build_batch(
    params: &ModelParams,
    data: &TrainData,
    idx: &[usize],
    mode: TrainMode,
    lambda: f64,
    perturb_cfg: &PerturbConfig,
    at_attack: &AtInnerAttack,
    seed: u64,
    epoch: usize,
) -> Result<BatchViews> {
    let width = mode.input_width();
    let n = data.n_points;
    let mut clean = Vec::with_capacity(idx.len() * n * width);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &data.samples[i];
        match width {
            w if w == AUGMENTED_CHANNELS => clean.extend_from_slice(s.aug.as_ref().unwrap()),
            _ => clean.extend_from_slice(&s.raw),
        }
        labels.push(s.label);
    }

    let mut views = BatchViews {
        clean,
        perturbed: None,
        adversarial: None,
        gaps_sq: Vec::new(),
        labels,
    };

    if mode.uses_consistency() && lambda > 0.0 {
        let per_sample: Result<Vec<(Vec<f64>, f64)>> = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let s = &data.samples[i];
                let stream_idx = (epoch as u64) << 32 | i as u64;
                let mut rng = stream(seed, "perturb", stream_idx);
                let view = perturb(&s.cloud, perturb_cfg, &mut rng);
                let phi_view = intrinsic_map(&view)?;
                let gap = s.phi.as_ref().unwrap().frobenius_gap_sq(&phi_view);
                let input = if width == AUGMENTED_CHANNELS {
                    augment_with(&view, &phi_view).values
                } else {
                    view.flat()
                };
                let _ = slot;
                Ok((input, gap))
            })
            .collect();
        let per_sample = per_sample?;
        let mut buf = Vec::with_capacity(idx.len() * n * width);
        let mut gaps = Vec::with_capacity(idx.len());
        for (input, gap) in per_sample {
            buf.extend_from_slice(&input);
            gaps.push(gap);
        }
        views.perturbed = Some(buf);
        views.gaps_sq = gaps;
    }

    if mode == TrainMode::At {
        let advs: Result<Vec<Vec<f64>>> = idx
            .par_iter()
            .map(|&i| {
                let s = &data.samples[i];
                let stream_idx = (epoch as u64) << 32 | i as u64;
                let r = pgd(
                    params,
                    &s.cloud,
                    s.label,
                    NormKind::L2,
                    at_attack.epsilon,
                    at_attack.steps,
                    at_attack.step_size,
                    false,
                    crate::rng::derive_seed(seed, "at-inner", stream_idx),
                )?;
                Ok(r.adv_cloud.flat())
            })
            .collect();
        let advs = advs?;
        let mut buf = Vec::with_capacity(idx.len() * n * 3);
        for a in advs {
            buf.extend_from_slice(&a);
        }
        views.adversarial = Some(buf);
    }

    Ok(views)
}

fn forward_batch(
    params: &ModelParams,
    tape: &mut Tape,
    bound: &crate::model::BoundParams,
    values: &[f64],
    batch: usize,
    n: usize,
    width: usize,
) -> Result<TensorId> {
    let input = tape.constant(values.to_vec(), vec![batch, n, width])?;
    params.forward(tape, bound, input)
}

/// One optimization pass over the dataset. Returns the epoch metrics;
/// a non-finite loss aborts with a divergence error.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    params: &mut ModelParams,
    data: &TrainData,
    epoch: usize,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    perturb_cfg: &PerturbConfig,
    at_attack: &AtInnerAttack,
    adam: &mut Adam,
) -> Result<EpochMetrics> {
    let start = std::time::Instant::now();
    let mode = train_cfg.mode;
    let lambda = if mode.uses_consistency() {
        lambda_schedule(epoch, loss_cfg)
    } else {
        0.0
    };
    let lr = train_cfg.lr_at_epoch(epoch);
    let n = data.n_points;
    let width = mode.input_width();

    let mut order: Vec<usize> = (0..data.len()).collect();
    {
        use rand::Rng;
        let mut rng = stream(train_cfg.seed, "shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
    }

    let mut sum_cls = 0.0;
    let mut sum_cons = 0.0;
    let mut correct = 0usize;
    let mut batches = 0usize;

    for (batch_no, idx) in order.chunks(train_cfg.batch_size).enumerate() {
        let views = build_batch(
            params,
            data,
            idx,
            mode,
            lambda,
            perturb_cfg,
            at_attack,
            train_cfg.seed,
            epoch,
        )?;
        let b = idx.len();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true)?;
        let logits_clean = forward_batch(params, &mut tape, &bound, &views.clean, b, n, width)?;
        let ce = cross_entropy(&mut tape, logits_clean, &views.labels)?;

        let mut loss = ce;
        let mut cons_value = 0.0;
        if let Some(pert) = &views.perturbed {
            let logits_pert = forward_batch(params, &mut tape, &bound, pert, b, n, width)?;
            let cons = consistency_loss(
                &mut tape,
                logits_clean,
                logits_pert,
                &views.gaps_sq,
                loss_cfg.epsilon,
            )?;
            cons_value = tape.scalar(cons);
            let weighted = tape.scale(cons, lambda)?;
            loss = tape.add(ce, weighted)?;
        }
        if let Some(adv) = &views.adversarial {
            let logits_adv = forward_batch(params, &mut tape, &bound, adv, b, n, width)?;
            let ce_adv = cross_entropy(&mut tape, logits_adv, &views.labels)?;
            let clean_part = tape.scale(ce, loss_cfg.at_alpha)?;
            let adv_part = tape.scale(ce_adv, 1.0 - loss_cfg.at_alpha)?;
            loss = tape.add(clean_part, adv_part)?;
        }

        let loss_value = tape.scalar(loss);
        let ce_value = tape.scalar(ce);
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batch_no,
                detail: format!(
                    "loss={loss_value} ce={ce_value} cons={cons_value} lambda={lambda} lr={lr}"
                ),
            });
        }

        // training accuracy from the clean logits
        let ld = tape.data(logits_clean);
        let c = data.num_classes;
        for (row, &y) in views.labels.iter().enumerate() {
            let logit_row = &ld[row * c..(row + 1) * c];
            let mut best = 0;
            for (j, v) in logit_row.iter().enumerate() {
                if *v > logit_row[best] {
                    best = j;
                }
            }
            if best == y {
                correct += 1;
            }
        }

        tape.backward(loss)?;
        let mut grads = Vec::with_capacity(params.layers.len() * 2);
        for (w, bias) in bound.ids() {
            grads.push(tape.grad(w).unwrap().to_vec());
            grads.push(tape.grad(bias).unwrap().to_vec());
        }
        adam.step(params, &grads, lr);

        sum_cls += ce_value;
        sum_cons += cons_value;
        batches += 1;
    }

    Ok(EpochMetrics {
        epoch,
        loss_cls: sum_cls / batches as f64,
        loss_cons: sum_cons / batches as f64,
        lambda,
        train_acc: correct as f64 / data.len() as f64,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Full training run: fresh Adam state, per-epoch lr decay, one metrics
/// record per epoch.
pub fn train(
    params: &mut ModelParams,
    data: &TrainData,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    perturb_cfg: &PerturbConfig,
) -> Result<Vec<EpochMetrics>> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    perturb_cfg.validate()?;
    let at_attack = AtInnerAttack::default();
    let mut adam = Adam::new(params);
    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        let m = train_epoch(
            params,
            data,
            epoch,
            loss_cfg,
            train_cfg,
            perturb_cfg,
            &at_attack,
            &mut adam,
        )?;
        log::debug!(
            "epoch {}: cls={:.4} cons={:.4} acc={:.3}",
            m.epoch,
            m.loss_cls,
            m.loss_cons,
            m.train_acc
        );
        metrics.push(m);
    }
    Ok(metrics)
}

// ── diagnostics ──────────────────────────────────────────────────────────

/// Jacobian of the logits with respect to the raw input coordinates,
/// row-major `C x 3n`, with intrinsic features held constant.
pub fn input_logit_jacobian(params: &ModelParams, cloud: &PointCloud) -> Result<Vec<f64>> {
    let n = cloud.len();
    let c = params.num_classes;
    let coords = cloud.flat();
    let phi = if params.input_width == AUGMENTED_CHANNELS {
        Some(intrinsic_map(cloud)?)
    } else {
        None
    };
    let mut jac = vec![0.0; c * 3 * n];
    for class in 0..c {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false)?;
        let x = tape.leaf(coords.clone(), vec![n, 3], true)?;
        let input = if let Some(phi) = &phi {
            let phi_t = tape.constant(phi.values.clone(), vec![n, INTRINSIC_CHANNELS])?;
            tape.concat_channels(&[x, phi_t])?
        } else {
            x
        };
        let logits = params.forward(&mut tape, &bound, input)?;
        let mut onehot = vec![0.0; c];
        onehot[class] = 1.0;
        let mask = tape.constant(onehot, vec![1, c])?;
        let picked = tape.mul(logits, mask)?;
        let scalar = tape.sum(picked)?;
        tape.backward(scalar)?;
        jac[class * 3 * n..(class + 1) * 3 * n].copy_from_slice(tape.grad(x).unwrap());
    }
    Ok(jac)
}

/// Estimate the extreme singular values of a `rows x cols` Jacobian by
/// deflated power iteration on `J^T J`, probing at most `probes` directions.
/// Returns the anisotropy ratio `sigma_max / sigma_min` over the probed
/// subspace, or infinity when the smallest probed singular value collapses
/// below 1e-12.
pub fn mu_from_jacobian(jac: &[f64], rows: usize, cols: usize, probes: usize, iters: usize) -> f64 {
    use rand::Rng;
    assert_eq!(jac.len(), rows * cols);
    let matvec = |v: &[f64]| -> Vec<f64> {
        // J^T (J v)
        let mut jv = vec![0.0; rows];
        for r in 0..rows {
            let row = &jac[r * cols..(r + 1) * cols];
            jv[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            let row = &jac[r * cols..(r + 1) * cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += jv[r] * a;
            }
        }
        out
    };
    let max_probes = probes.min(rows.min(cols)).max(1);
    let mut rng = stream(0x4d55, "mu-probe", 0);
    let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
    for _ in 0..max_probes {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthonormalize(&mut v, &found);
        let mut eig = 0.0;
        for _ in 0..iters {
            let mut w = matvec(&v);
            orthonormalize_against(&mut w, &found);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                eig = 0.0;
                break;
            }
            for x in &mut w {
                *x /= norm;
            }
            eig = norm; // ||JtJ v|| with unit v approximates the eigenvalue
            v = w;
        }
        found.push((eig, v));
        if eig <= 0.0 {
            break;
        }
    }
    let lambda_max = found.iter().map(|(e, _)| *e).fold(0.0f64, f64::max);
    let sigma_max = lambda_max.max(0.0).sqrt();
    let sigma_min = found
        .iter()
        .map(|(e, _)| e.max(0.0).sqrt())
        .fold(f64::INFINITY, f64::min);
    if sigma_min < 1e-12 {
        return f64::INFINITY;
    }
    sigma_max / sigma_min
}

fn orthonormalize(v: &mut [f64], found: &[(f64, Vec<f64>)]) {
    orthonormalize_against(v, found);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn orthonormalize_against(v: &mut [f64], found: &[(f64, Vec<f64>)]) {
    for (_, u) in found {
        let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        for (x, u) in v.iter_mut().zip(u) {
            *x -= dot * u;
        }
    }
}

/// Anisotropy estimate of the input-logit Jacobian at `cloud`.
pub fn diagnostics_mu(params: &ModelParams, cloud: &PointCloud, probes: usize) -> Result<f64> {
    let jac = input_logit_jacobian(params, cloud)?;
    Ok(mu_from_jacobian(
        &jac,
        params.num_classes,
        3 * cloud.len(),
        probes,
        200,
    ))
}

/// Empirical distribution of output change over intrinsic-feature change on
/// sampled perturbed pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max: f64,
    pub mean: f64,
    /// `(quantile, value)` at 0.25, 0.5, 0.75, 0.9.
    pub quantiles: Vec<(f64, f64)>,
}

/// Ratios `||p(X) - p(X')||_2 / (||Phi(X) - Phi(X')||_F + eps)` over `pairs`
/// perturbed views of clouds drawn cyclically from `clouds`.
pub fn diagnostics_lipschitz(
    params: &ModelParams,
    clouds: &[PointCloud],
    pairs: usize,
    perturb_cfg: &PerturbConfig,
    epsilon: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    if clouds.len() < 2 {
        return Err(Error::data("lipschitz diagnostics need at least 2 samples"));
    }
    let ratios: Result<Vec<f64>> = (0..pairs)
        .into_par_iter()
        .map(|s| {
            let cloud = &clouds[s % clouds.len()];
            let mut rng = stream(seed, "lip-pairs", s as u64);
            let view = perturb(cloud, perturb_cfg, &mut rng);
            let phi_a = intrinsic_map(cloud)?;
            let phi_b = intrinsic_map(&view)?;
            let gap = phi_a.frobenius_gap_sq(&phi_b).sqrt();
            let (values_a, values_b) = if params.input_width == AUGMENTED_CHANNELS {
                (
                    augment_with(cloud, &phi_a).values,
                    augment_with(&view, &phi_b).values,
                )
            } else {
                (cloud.flat(), view.flat())
            };
            let (_, pa) = params.predict(&values_a, cloud.len())?;
            let (_, pb) = params.predict(&values_b, view.len())?;
            let num = pa
                .iter()
                .zip(&pb)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(num / (gap + epsilon))
        })
        .collect();
    let mut ratios = ratios?;
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = *ratios.last().unwrap();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let q = |p: f64| -> f64 {
        let i = ((ratios.len() as f64 - 1.0) * p).round() as usize;
        ratios[i]
    };
    Ok(LipschitzReport {
        max,
        mean,
        quantiles: vec![(0.25, q(0.25)), (0.5, q(0.5)), (0.75, q(0.75)), (0.9, q(0.9))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_dataset(per_class: usize, n: usize, seed: u64) -> Vec<PointCloud> {
        // class 0: flat disc, class 1: vertical spike cluster
        let mut rng = stream(seed, "toy-data", 0);
        let mut out = Vec::new();
        for c in 0..2usize {
            for _ in 0..per_class {
                let mut pts = Vec::with_capacity(n);
                for _ in 0..n {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let r: f64 = rng.gen_range(0.0..1.0);
                    if c == 0 {
                        pts.push([r * a.cos(), r * a.sin(), rng.gen_range(-0.05..0.05)]);
                    } else {
                        pts.push([0.3 * a.cos(), 0.3 * a.sin(), rng.gen_range(-1.0..1.0)]);
                    }
                }
                let mut cloud = PointCloud::new(pts, Some(c));
                cloud.normalize_unit_sphere().unwrap();
                out.push(cloud);
            }
        }
        out
    }

    #[test]
    fn adam_step_descends_quadratic() {
        let mut params = ModelParams::new(3, 2, 0);
        // treat first weight entry as the variable of f(x) = x^2
        params.layers[0].w[0] = 5.0;
        let mut adam = Adam::new(&params);
        let mut grads: Vec<Vec<f64>> = Vec::new();
        for layer in &params.layers {
            grads.push(vec![0.0; layer.w.len()]);
            grads.push(vec![0.0; layer.b.len()]);
        }
        let before = params.layers[0].w[0];
        for _ in 0..50 {
            grads[0][0] = 2.0 * params.layers[0].w[0];
            adam.step(&mut params, &grads, 0.1);
        }
        let after = params.layers[0].w[0];
        assert!(after.abs() < before.abs());
    }

    #[test]
    fn lr_decays_by_factor_every_20_epochs() {
        let cfg = TrainConfig {
            lr: 1.0,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at_epoch(1), 1.0);
        assert_eq!(cfg.lr_at_epoch(20), 1.0);
        assert!((cfg.lr_at_epoch(21) - 0.7).abs() < 1e-12);
        assert!((cfg.lr_at_epoch(41) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn short_vanilla_run_learns_separable_classes() {
        let clouds = toy_dataset(12, 48, 5);
        let data = TrainData::prepare(clouds, 2, false).unwrap();
        let mut params = ModelParams::new(3, 2, 3);
        let train_cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            lr: 0.005,
            seed: 3,
            mode: TrainMode::Vanilla,
            ..Default::default()
        };
        let metrics = train(
            &mut params,
            &data,
            &LossConfig::default(),
            &train_cfg,
            &PerturbConfig::default(),
        )
        .unwrap();
        let last = metrics.last().unwrap();
        assert!(
            last.train_acc > 0.6,
            "expected >60% training accuracy, got {}",
            last.train_acc
        );
    }

    #[test]
    fn mapr_with_zero_lambda_matches_intrinsic_only_bitwise() {
        let clouds = toy_dataset(6, 40, 7);
        let data = TrainData::prepare(clouds, 2, true).unwrap();
        let run = |mode: TrainMode| -> ModelParams {
            let mut params = ModelParams::new(20, 2, 11);
            let train_cfg = TrainConfig {
                epochs: 2,
                batch_size: 6,
                lr: 0.01,
                seed: 11,
                mode,
                ..Default::default()
            };
            let loss_cfg = LossConfig {
                lambda_max: 0.0,
                ..Default::default()
            };
            train(
                &mut params,
                &data,
                &loss_cfg,
                &train_cfg,
                &PerturbConfig::default(),
            )
            .unwrap();
            params
        };
        let a = run(TrainMode::Mapr);
        let b = run(TrainMode::IntrinsicOnly);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert!(la.w.iter().zip(&lb.w).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(la.b.iter().zip(&lb.b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn at_with_alpha_one_matches_vanilla_gradient() {
        // alpha = 1 zeroes the adversarial term: one epoch of AT must land on
        // the same parameters as one epoch of vanilla under the same seed
        let clouds = toy_dataset(4, 36, 9);
        let data = TrainData::prepare(clouds, 2, false).unwrap();
        let run = |mode: TrainMode| -> ModelParams {
            let mut params = ModelParams::new(3, 2, 21);
            let train_cfg = TrainConfig {
                epochs: 1,
                batch_size: 4,
                lr: 0.01,
                seed: 21,
                mode,
                ..Default::default()
            };
            let loss_cfg = LossConfig {
                at_alpha: 1.0,
                ..Default::default()
            };
            train(
                &mut params,
                &data,
                &loss_cfg,
                &train_cfg,
                &PerturbConfig::default(),
            )
            .unwrap();
            params
        };
        let at = run(TrainMode::At);
        let vanilla = run(TrainMode::Vanilla);
        for (la, lb) in at.layers.iter().zip(&vanilla.layers) {
            for (x, y) in la.w.iter().zip(&lb.w) {
                assert!(
                    (x - y).abs() < 1e-12,
                    "AT(alpha=1) diverged from vanilla: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn mu_of_identity_map_is_one() {
        let jac = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mu = mu_from_jacobian(&jac, 3, 3, 3, 200);
        assert!((mu - 1.0).abs() < 1e-6, "mu = {mu}");
    }

    #[test]
    fn mu_of_known_diagonal_map() {
        let jac = vec![3.0, 0.0, 0.0, 1.0];
        let mu = mu_from_jacobian(&jac, 2, 2, 2, 300);
        assert!((mu - 3.0).abs() / 3.0 < 0.02, "mu = {mu}");
    }

    #[test]
    fn mu_rank_deficient_reports_infinity() {
        // second row identically zero: smallest probed singular value is 0
        let jac = vec![2.0, 0.0, 0.0, 0.0];
        let mu = mu_from_jacobian(&jac, 2, 2, 2, 100);
        assert!(mu.is_infinite());
    }

    #[test]
    fn mu_is_at_least_one() {
        let mut rng = stream(4, "mu-random", 0);
        for trial in 0..5 {
            let (r, c) = (3, 6);
            let jac: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu = mu_from_jacobian(&jac, r, c, 3, 200);
            assert!(mu >= 1.0 - 1e-9, "trial {trial}: mu = {mu}");
        }
    }

    #[test]
    fn lipschitz_constant_output_model_gives_zero_ratios() {
        let clouds = toy_dataset(3, 40, 13);
        let mut params = ModelParams::new(3, 2, 1);
        // zero every layer: logits are constant regardless of input
        for layer in &mut params.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let report = diagnostics_lipschitz(
            &params,
            &clouds,
            6,
            &PerturbConfig::default(),
            1e-6,
            3,
        )
        .unwrap();
        assert_eq!(report.max, 0.0);
        assert_eq!(report.mean, 0.0);
    }
}
