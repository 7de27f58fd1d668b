//! Classification and consistency losses.
//!
//! The consistency term divides the symmetric KL divergence between the
//! predictions of two geometrically close views by the squared Frobenius gap
//! of their intrinsic features. The gap is treated as a constant during
//! backpropagation: the features are graph-derived and non-smooth at k-NN
//! boundary changes, so gradients flow through the logits only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, TensorId};

/// Probabilities are floored here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Plateau value of the consistency weight.
    pub lambda_max: f64,
    /// Epochs over which the weight ramps linearly from zero.
    pub ramp_epochs: usize,
    /// Stability constant in the consistency denominator.
    pub epsilon: f64,
    /// Clean / adversarial mix for adversarial training.
    pub at_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_max: 1.0,
            ramp_epochs: 15,
            epsilon: 1e-6,
            at_alpha: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_max < 0.0 {
            return Err(Error::config("lambda_max must be nonnegative"));
        }
        if self.ramp_epochs < 1 {
            return Err(Error::config("ramp_epochs must be at least 1"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.at_alpha) {
            return Err(Error::config("at_alpha must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Consistency weight at `epoch` (1-based): linear ramp to `lambda_max` over
/// the first `ramp_epochs` epochs, constant thereafter.
pub fn lambda_schedule(epoch: usize, cfg: &LossConfig) -> f64 {
    cfg.lambda_max * (epoch as f64 / cfg.ramp_epochs as f64).min(1.0)
}

/// Mean cross-entropy of `[B, C]` logits against integer labels, recorded on
/// the tape.
pub fn cross_entropy(tape: &mut Tape, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let (b, c) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; b * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::config(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        onehot[i * c + y] = 1.0;
    }
    let p = tape.softmax(logits)?;
    let p = tape.clamp_min(p, PROB_FLOOR)?;
    let lp = tape.log(p)?;
    let mask = tape.constant(onehot, vec![b, c])?;
    let picked = tape.mul(lp, mask)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / b as f64)
}

/// Symmetric KL divergence `0.5 [KL(p||q) + KL(q||p)]` between two floored
/// probability vectors.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distribution size mismatch");
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pf = pi.max(PROB_FLOOR);
        let qf = qi.max(PROB_FLOOR);
        acc += 0.5 * (pf * (pf.ln() - qf.ln()) + qf * (qf.ln() - pf.ln()));
    }
    acc
}

/// Consistency loss over plain probability batches:
/// `(1/B) sum_i SKL(p_i, q_i) / (gap_i + epsilon)` where `gap_i` is the
/// squared Frobenius distance between the two views' intrinsic features.
pub fn consistency_loss_value(
    p_batch: &[Vec<f64>],
    q_batch: &[Vec<f64>],
    gaps_sq: &[f64],
    epsilon: f64,
) -> f64 {
    assert_eq!(p_batch.len(), q_batch.len());
    assert_eq!(p_batch.len(), gaps_sq.len());
    let b = p_batch.len() as f64;
    p_batch
        .iter()
        .zip(q_batch)
        .zip(gaps_sq)
        .map(|((p, q), g)| symmetric_kl(p, q) / (g + epsilon))
        .sum::<f64>()
        / b
}

/// Differentiable consistency loss from two `[B, C]` logit tensors on the
/// tape. `gaps_sq[i]` holds the squared Frobenius feature gap of sample i and
/// enters as a constant.
pub fn consistency_loss(
    tape: &mut Tape,
    logits_a: TensorId,
    logits_b: TensorId,
    gaps_sq: &[f64],
    epsilon: f64,
) -> Result<TensorId> {
    let shape = tape.shape(logits_a).to_vec();
    if shape != tape.shape(logits_b) {
        return Err(Error::ShapeMismatch {
            op: "consistency_loss",
            lhs: shape,
            rhs: tape.shape(logits_b).to_vec(),
        });
    }
    if shape.len() != 2 || shape[0] != gaps_sq.len() {
        return Err(Error::ShapeMismatch {
            op: "consistency_loss",
            lhs: shape,
            rhs: vec![gaps_sq.len()],
        });
    }
    let (b, c) = (shape[0], shape[1]);
    let p = tape.softmax(logits_a)?;
    let q = tape.softmax(logits_b)?;
    let pf = tape.clamp_min(p, PROB_FLOOR)?;
    let qf = tape.clamp_min(q, PROB_FLOOR)?;
    let lp = tape.log(pf)?;
    let lq = tape.log(qf)?;
    let diff = tape.sub(lp, lq)?; // ln p - ln q
    let kl_pq = tape.mul(p, diff)?; // p (ln p - ln q)
    let neg_diff = tape.scale(diff, -1.0)?;
    let kl_qp = tape.mul(q, neg_diff)?; // q (ln q - ln p)
    let both = tape.add(kl_pq, kl_qp)?;
    // fold the 1/2 symmetry factor, 1/B mean, and per-sample denominator
    // into one constant row weighting
    let mut wmat = vec![0.0; b * c];
    for i in 0..b {
        let w = 0.5 / (b as f64 * (gaps_sq[i] + epsilon));
        for j in 0..c {
            wmat[i * c + j] = w;
        }
    }
    let weights = tape.constant(wmat, vec![b, c])?;
    let weighted = tape.mul(both, weights)?;
    tape.sum(weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_near_certain_prediction_is_tiny() {
        let mut tape = Tape::new();
        let logits = tape
            .leaf(vec![10.0, 0.0, 0.0, 0.0], vec![1, 4], true)
            .unwrap();
        let loss = cross_entropy(&mut tape, logits, &[0]).unwrap();
        assert!(tape.scalar(loss) < 1e-3);
    }

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.leaf(vec![0.7; 8], vec![2, 4], true).unwrap();
        let loss = cross_entropy(&mut tape, logits, &[1, 3]).unwrap();
        assert!((tape.scalar(loss) - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let logits = tape.leaf(vec![0.0; 4], vec![1, 4], true).unwrap();
        assert!(cross_entropy(&mut tape, logits, &[4]).is_err());
    }

    #[test]
    fn skl_identity_symmetry_nonnegativity() {
        let p = vec![0.9, 0.1];
        let q = vec![0.1, 0.9];
        assert_eq!(symmetric_kl(&p, &p), 0.0);
        assert!((symmetric_kl(&p, &q) - symmetric_kl(&q, &p)).abs() < 1e-15);
        assert!(symmetric_kl(&p, &q) > 0.0);
    }

    #[test]
    fn skl_matches_direct_summation() {
        let p = vec![0.9, 0.1];
        let q = vec![0.1, 0.9];
        // 0.5 [ sum p ln(p/q) + sum q ln(q/p) ] evaluated directly
        let direct = 0.5
            * ((0.9 * (0.9f64 / 0.1).ln() + 0.1 * (0.1f64 / 0.9).ln())
                + (0.1 * (0.1f64 / 0.9).ln() + 0.9 * (0.9f64 / 0.1).ln()));
        assert!((symmetric_kl(&p, &q) - direct).abs() < 1e-12);
    }

    #[test]
    fn consistency_identical_views_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![0.3, -0.9, 1.4], vec![1, 3], true).unwrap();
        let b = tape.leaf(vec![0.3, -0.9, 1.4], vec![1, 3], true).unwrap();
        let loss = consistency_loss(&mut tape, a, b, &[0.0], 1e-6).unwrap();
        assert!(tape.scalar(loss).abs() < 1e-15);
    }

    #[test]
    fn consistency_halves_when_gap_doubles() {
        let p = vec![vec![0.7, 0.3]];
        let q = vec![vec![0.2, 0.8]];
        let eps = 1e-6;
        let v1 = consistency_loss_value(&p, &q, &[1.0], eps);
        let v2 = consistency_loss_value(&p, &q, &[2.0], eps);
        assert!((v2 / v1 - 0.5).abs() < 1e-5);
    }

    #[test]
    fn consistency_tape_matches_summation_oracle() {
        // 3-sample batch, hand-rolled oracle
        let logits_a = vec![0.2, -0.5, 1.0, 0.0, 0.3, -0.3, -1.2, 0.8, 0.1];
        let logits_b = vec![0.1, 0.2, 0.9, -0.4, 0.5, 0.0, -1.0, 0.6, 0.4];
        let gaps = [0.8, 2.5, 0.05];
        let eps = 1e-6;
        let mut tape = Tape::new();
        let a = tape.leaf(logits_a.clone(), vec![3, 3], true).unwrap();
        let b = tape.leaf(logits_b.clone(), vec![3, 3], true).unwrap();
        let loss = consistency_loss(&mut tape, a, b, &gaps, eps).unwrap();

        let softmax = crate::model::softmax_vec;
        let p: Vec<Vec<f64>> = logits_a.chunks(3).map(softmax).collect();
        let q: Vec<Vec<f64>> = logits_b.chunks(3).map(softmax).collect();
        let oracle = consistency_loss_value(&p, &q, &gaps, eps);
        assert!((tape.scalar(loss) - oracle).abs() < 1e-12);
    }

    #[test]
    fn lambda_ramp_values() {
        let cfg = LossConfig {
            lambda_max: 1.5,
            ramp_epochs: 15,
            ..Default::default()
        };
        assert!((lambda_schedule(1, &cfg) - 0.1).abs() < 1e-12);
        assert_eq!(lambda_schedule(15, &cfg), 1.5);
        assert_eq!(lambda_schedule(100, &cfg), 1.5);
        // monotone nondecreasing
        let mut prev = 0.0;
        for e in 1..=40 {
            let v = lambda_schedule(e, &cfg);
            assert!(v >= prev);
            prev = v;
        }
    }
}
