//! Compact permutation-invariant point-cloud classifier: shared per-point
//! MLP, global max-pool over points, then an MLP head. Input width is a
//! construction-time parameter (20 for augmented inputs, 3 for raw
//! coordinates).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Tape, TensorId};

/// Per-point MLP channel widths.
pub const POINT_HIDDEN: [usize; 3] = [64, 128, 256];
/// Post-pool head hidden width.
pub const HEAD_HIDDEN: usize = 128;

const CHECKPOINT_MAGIC: &[u8; 9] = b"MAPRCKPT1";
// decode guard against absurd allocations from corrupt headers
const MAX_CHECKPOINT_ELEMENTS: usize = 1 << 24;

#[derive(Debug, Clone)]
pub struct Layer {
    /// `[fan_in, fan_out]` row-major.
    pub w: Vec<f64>,
    pub w_shape: [usize; 2],
    pub b: Vec<f64>,
}

/// All trainable parameters, in layer order: three point layers, one head
/// hidden layer, one logits layer.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub input_width: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

/// Tape handles for one binding of the parameters.
pub struct BoundParams {
    ids: Vec<(TensorId, TensorId)>,
}

impl BoundParams {
    /// `(weight, bias)` tape handles in layer order.
    pub fn ids(&self) -> impl Iterator<Item = (TensorId, TensorId)> + '_ {
        self.ids.iter().copied()
    }
}

impl ModelParams {
    /// He-style uniform fan-in initialization, biases zero, seed-controlled.
    pub fn new(input_width: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "model-init", 0);
        let mut widths = vec![input_width];
        widths.extend_from_slice(&POINT_HIDDEN);
        widths.push(HEAD_HIDDEN);
        widths.push(num_classes);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                w,
                w_shape: [fan_in, fan_out],
                b: vec![0.0; fan_out],
            });
        }
        let params = ModelParams {
            input_width,
            num_classes,
            layers,
        };
        log::info!(
            "model: input_width={} classes={} parameters={}",
            input_width,
            num_classes,
            params.param_count()
        );
        params
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Record every parameter on the tape; `trainable` controls whether
    /// gradients are collected for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams> {
        let mut ids = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.leaf(layer.w.clone(), layer.w_shape.to_vec(), trainable)?;
            let b = tape.leaf(layer.b.clone(), vec![layer.b.len()], trainable)?;
            ids.push((w, b));
        }
        Ok(BoundParams { ids })
    }

    /// Forward pass on an already-bound tape. Input shape `[B, N, W]` or
    /// `[N, W]` (single cloud); returns `[B, C]` logits.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, input: TensorId) -> Result<TensorId> {
        let shape = tape.shape(input).to_vec();
        let (batch, n, width) = match shape[..] {
            [n, w] => (1, n, w),
            [b, n, w] => (b, n, w),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    lhs: shape,
                    rhs: vec![self.input_width],
                })
            }
        };
        if width != self.input_width {
            return Err(Error::ShapeMismatch {
                op: "forward: channel width",
                lhs: vec![width],
                rhs: vec![self.input_width],
            });
        }
        let mut x = tape.reshape(input, vec![batch * n, width])?;
        let n_point_layers = POINT_HIDDEN.len();
        for (w, b) in &bound.ids[..n_point_layers] {
            let h = tape.matmul(x, *w)?;
            let hb = tape.add(h, *b)?;
            x = tape.relu(hb)?;
        }
        let pooled3 = tape.reshape(x, vec![batch, n, POINT_HIDDEN[n_point_layers - 1]])?;
        let mut pooled = tape.max_over_axis(pooled3, 1)?;
        if batch == 1 {
            pooled = tape.reshape(pooled, vec![1, POINT_HIDDEN[n_point_layers - 1]])?;
        }
        let (hw, hb) = bound.ids[n_point_layers];
        let h = tape.matmul(pooled, hw)?;
        let h = tape.add(h, hb)?;
        let h = tape.relu(h)?;
        let (lw, lb) = bound.ids[n_point_layers + 1];
        let logits = tape.matmul(h, lw)?;
        tape.add(logits, lb)
    }

    /// Forward a single cloud given as a flat `n x input_width` buffer,
    /// without recording parameter gradients. Returns the logits.
    pub fn logits_of(&self, values: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let input = tape.constant(values.to_vec(), vec![n, self.input_width])?;
        let logits = self.forward(&mut tape, &bound, input)?;
        Ok(tape.data(logits).to_vec())
    }

    /// Predicted class and softmax probabilities for a single cloud.
    /// Argmax ties resolve to the lowest class index.
    pub fn predict(&self, values: &[f64], n: usize) -> Result<(usize, Vec<f64>)> {
        let logits = self.logits_of(values, n)?;
        let probs = softmax_vec(&logits);
        let mut best = 0;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        Ok((best, probs))
    }

    /// Overwrite parameter values from per-layer `(w, b)` buffers in layer order.
    pub fn set_from(&mut self, values: &[(Vec<f64>, Vec<f64>)]) {
        assert_eq!(values.len(), self.layers.len());
        for (layer, (w, b)) in self.layers.iter_mut().zip(values) {
            layer.w.copy_from_slice(w);
            layer.b.copy_from_slice(b);
        }
    }

    // ── checkpoint format ────────────────────────────────────────────────
    //
    // "MAPRCKPT1" magic, then u32 tensor count, then per tensor a u32 ndim,
    // ndim u32 dims, and the row-major payload as little-endian f64.
    // Tensors alternate weight/bias in layer order.

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32 * 2).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(layer.w_shape[0] as u32).to_le_bytes());
            out.extend_from_slice(&(layer.w_shape[1] as u32).to_le_bytes());
            for v in &layer.w {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&(layer.b.len() as u32).to_le_bytes());
            for v in &layer.b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::data("checkpoint magic mismatch"));
        }
        let count = r.u32()? as usize;
        if count == 0 || count % 2 != 0 || count > 64 {
            return Err(Error::data(format!("invalid checkpoint tensor count {count}")));
        }
        let mut total = 0usize;
        let mut layers = Vec::with_capacity(count / 2);
        for _ in 0..count / 2 {
            let ndim = r.u32()? as usize;
            if ndim != 2 {
                return Err(Error::data(format!("expected 2-d weight, got ndim {ndim}")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let numel = rows
                .checked_mul(cols)
                .filter(|&m| m > 0 && m <= MAX_CHECKPOINT_ELEMENTS)
                .ok_or_else(|| Error::data(format!("bad weight shape {rows}x{cols}")))?;
            total += numel;
            if total > MAX_CHECKPOINT_ELEMENTS {
                return Err(Error::data("checkpoint too large"));
            }
            let w = r.f64s(numel)?;
            let ndim = r.u32()? as usize;
            if ndim != 1 {
                return Err(Error::data(format!("expected 1-d bias, got ndim {ndim}")));
            }
            let blen = r.u32()? as usize;
            if blen != cols {
                return Err(Error::data(format!(
                    "bias length {blen} does not match weight columns {cols}"
                )));
            }
            let b = r.f64s(blen)?;
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::data("non-finite checkpoint value"));
            }
            layers.push(Layer {
                w,
                w_shape: [rows, cols],
                b,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::data("trailing bytes after checkpoint payload"));
        }
        // shapes must chain
        for pair in layers.windows(2) {
            if pair[0].w_shape[1] != pair[1].w_shape[0] {
                return Err(Error::data(format!(
                    "layer shapes do not chain: {:?} -> {:?}",
                    pair[0].w_shape, pair[1].w_shape
                )));
            }
        }
        let input_width = layers[0].w_shape[0];
        let num_classes = layers[layers.len() - 1].w_shape[1];
        Ok(ModelParams {
            input_width,
            num_classes,
            layers,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::decode(&bytes)
    }

    /// Gaussian-perturbed copy, used to derive surrogate models in tests.
    pub fn jittered(&self, sigma: f64, seed: u64) -> Self {
        let mut rng: ChaCha8Rng = stream(seed, "param-jitter", 0);
        let mut out = self.clone();
        for layer in &mut out.layers {
            for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *v += sigma * (rng.gen_range(0.0..1.0f64) - 0.5) * 2.0;
            }
        }
        out
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data("unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let s = self.take(n * 8)?;
        Ok(s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_values(n: usize, width: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "model-test", 0);
        (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_is_permutation_invariant_bitwise() {
        let params = ModelParams::new(20, 4, 1);
        let n = 17;
        let values = random_values(n, 20, 2);
        let base = params.logits_of(&values, n).unwrap();
        let mut rng = stream(3, "perm", 0);
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut permuted = vec![0.0; values.len()];
            for (dst, &src) in order.iter().enumerate() {
                permuted[dst * 20..(dst + 1) * 20]
                    .copy_from_slice(&values[src * 20..(src + 1) * 20]);
            }
            let out = params.logits_of(&permuted, n).unwrap();
            assert!(base
                .iter()
                .zip(&out)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn repeated_single_point_equals_single_point() {
        let params = ModelParams::new(3, 4, 5);
        let point = [0.2, -0.4, 0.7];
        let single = params.logits_of(&point, 1).unwrap();
        let repeated: Vec<f64> = point.iter().cycle().take(3 * 9).copied().collect();
        let multi = params.logits_of(&repeated, 9).unwrap();
        assert_eq!(single, multi);
    }

    #[test]
    fn wrong_width_names_expected() {
        let params = ModelParams::new(20, 4, 1);
        let err = params.logits_of(&[0.0; 12], 4).unwrap_err();
        assert!(err.to_string().contains("20"), "{err}");
    }

    #[test]
    fn predict_probabilities_sum_to_one() {
        let params = ModelParams::new(3, 6, 9);
        let values = random_values(10, 3, 4);
        let (_, probs) = params.predict(&values, 10).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_invariant_to_logit_shift() {
        let logits = vec![0.4, 1.3, -0.2, 1.1];
        let p1 = softmax_vec(&logits);
        let shifted: Vec<f64> = logits.iter().map(|x| x + 100.0).collect();
        let p2 = softmax_vec(&shifted);
        let argmax = |p: &[f64]| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&p1), argmax(&p2));
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let params = ModelParams::new(20, 8, 77);
        let bytes = params.encode();
        let back = ModelParams::decode(&bytes).unwrap();
        assert_eq!(back.input_width, 20);
        assert_eq!(back.num_classes, 8);
        for (a, b) in params.layers.iter().zip(&back.layers) {
            assert_eq!(a.w_shape, b.w_shape);
            assert!(a.w.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.b.iter().zip(&b.b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let params = ModelParams::new(3, 2, 1);
        let mut bytes = params.encode();
        assert!(ModelParams::decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(ModelParams::decode(&bytes).is_err());
    }

    #[test]
    fn checkpoint_rejects_mismatched_chain() {
        let params = ModelParams::new(3, 2, 1);
        let mut other = ModelParams::new(3, 2, 2);
        // corrupt: swap in a bias of the wrong length
        other.layers[1].b.push(0.0);
        other.layers[1].w_shape = [64, 129];
        other.layers[1].w = vec![0.0; 64 * 129];
        let bytes = other.encode();
        let err = ModelParams::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("chain"), "{err}");
        drop(params);
    }

    #[test]
    fn deterministic_init() {
        let a = ModelParams::new(20, 8, 13);
        let b = ModelParams::new(20, 8, 13);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert!(la.w.iter().zip(&lb.w).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
