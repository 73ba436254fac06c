//! Small fully-connected networks with ReLU hidden layers, stored in a flat
//! parameter layout, plus the Adam optimizer and gradient clipping.
//!
//! Flat layout (also the on-disk blob format, as 64-bit little-endian
//! floats): layer-major; within a layer the weight matrix row-major
//! (`w[out][in]`), followed by that layer's biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::scalar::Scalar;

/// Widest supported layer; forward evaluation uses fixed stack buffers.
pub const MAX_LAYER_WIDTH: usize = 64;

/// Parameters of one multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layer_sizes: Vec<usize>,
    values: Vec<T>,
}

/// Total parameter count for the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> MlpParams<T> {
    /// Glorot-uniform weights on `+-sqrt(6 / (fan_in + fan_out))`, biases
    /// zero; deterministic per seed. Draws are made in `f64` and converted,
    /// so the same seed describes the same network at every precision.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        validate_sizes(layer_sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                values.push(T::of(rng.random_range(-limit..limit)));
            }
            values.extend(std::iter::repeat(T::zero()).take(fan_out));
        }
        MlpParams { layer_sizes: layer_sizes.to_vec(), values }
    }

    /// All-zero parameters (useful as a fixed do-nothing strategy).
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        validate_sizes(layer_sizes);
        MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            values: vec![T::zero(); param_count(layer_sizes)],
        }
    }

    pub fn from_values(layer_sizes: &[usize], values: Vec<T>) -> Self {
        validate_sizes(layer_sizes);
        assert_eq!(values.len(), param_count(layer_sizes), "value count does not match layout");
        MlpParams { layer_sizes: layer_sizes.to_vec(), values }
    }

    #[inline]
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Weight of `layer` (0-based) mapping input `inp` to unit `out`.
    pub fn weight(&self, layer: usize, out: usize, inp: usize) -> T {
        let off = self.layer_offset(layer);
        let fan_in = self.layer_sizes[layer];
        self.values[off + out * fan_in + inp]
    }

    pub fn bias(&self, layer: usize, out: usize) -> T {
        let off = self.layer_offset(layer);
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        self.values[off + fan_in * fan_out + out]
    }

    /// Plain forward pass (affine -> ReLU per hidden layer, affine output)
    /// for a single scalar input and output.
    pub fn eval(&self, x: T) -> T {
        assert!(x.is_finite(), "non-finite network input {}", x);
        assert_eq!(self.layer_sizes[0], 1, "eval expects a scalar input layer");
        assert_eq!(*self.layer_sizes.last().unwrap(), 1, "eval expects a scalar output layer");
        let mut cur = [T::zero(); MAX_LAYER_WIDTH];
        let mut nxt = [T::zero(); MAX_LAYER_WIDTH];
        cur[0] = x;
        let mut off = 0usize;
        let last = self.layer_sizes.len() - 2;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bias_off = off + fan_in * fan_out;
            for j in 0..fan_out {
                // accumulate in the same order as the taped forward
                let mut acc = self.values[bias_off + j];
                let row = off + j * fan_in;
                for (i, c) in cur[..fan_in].iter().enumerate() {
                    acc = acc + self.values[row + i] * *c;
                }
                nxt[j] = if l < last { acc.max(T::zero()) } else { acc };
            }
            std::mem::swap(&mut cur, &mut nxt);
            off = bias_off + fan_out;
        }
        cur[0]
    }

    /// Pushes every parameter as a tape leaf (contiguously, in flat order);
    /// returns the index of the first leaf for [`forward_taped`](Self::forward_taped).
    pub fn bind(&self, tape: &mut Tape<T>) -> u32 {
        tape.leaves(&self.values)
    }

    /// Tape-recorded forward pass using parameters previously bound at
    /// `base`. Mirrors [`eval`](Self::eval) operation for operation.
    pub fn forward_taped(&self, tape: &mut Tape<T>, base: u32, x: VarId) -> VarId {
        assert_eq!(self.layer_sizes[0], 1);
        assert_eq!(*self.layer_sizes.last().unwrap(), 1);
        let mut cur = [VarId(0); MAX_LAYER_WIDTH];
        let mut nxt = [VarId(0); MAX_LAYER_WIDTH];
        cur[0] = x;
        let mut off = 0usize;
        let last = self.layer_sizes.len() - 2;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bias_off = off + fan_in * fan_out;
            for j in 0..fan_out {
                let mut acc = VarId(base + (bias_off + j) as u32);
                let row = off + j * fan_in;
                for (i, c) in cur[..fan_in].iter().enumerate() {
                    let prod = tape.mul(VarId(base + (row + i) as u32), *c);
                    acc = tape.add(acc, prod);
                }
                nxt[j] = if l < last { tape.relu(acc) } else { acc };
            }
            std::mem::swap(&mut cur, &mut nxt);
            off = bias_off + fan_out;
        }
        cur[0]
    }

    /// Serializes the flat layout as 64-bit little-endian floats.
    pub fn to_blob_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    /// Reads parameters back from the blob written by
    /// [`to_blob_bytes`](Self::to_blob_bytes).
    pub fn from_blob_bytes(layer_sizes: &[usize], bytes: &[u8]) -> Result<Self, String> {
        let expect = param_count(layer_sizes) * 8;
        if bytes.len() != expect {
            return Err(format!("blob has {} bytes, layout needs {}", bytes.len(), expect));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(MlpParams::from_values(layer_sizes, values))
    }
}

fn validate_sizes(layer_sizes: &[usize]) {
    assert!(layer_sizes.len() >= 2, "need at least input and output layers");
    assert!(layer_sizes.iter().all(|&n| n >= 1), "layer sizes must be >= 1");
    assert!(
        layer_sizes.iter().all(|&n| n <= MAX_LAYER_WIDTH),
        "layer width above {} not supported",
        MAX_LAYER_WIDTH
    );
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            learning_rate: T::of(0.01),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

/// Per-parameter first and second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], step: 0 }
    }

    #[inline]
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update; `params` and `grads` must match the
/// state's length (usage error otherwise).
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    hyper: &AdamParams<T>,
    state: &mut AdamState<T>,
) {
    assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - hyper.beta1.powi(t);
    let bc2 = T::one() - hyper.beta2.powi(t);
    let one = T::one();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (one - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (one - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

/// Euclidean norm of a gradient vector.
pub fn grad_norm<T: Scalar>(grads: &[T]) -> T {
    grads.iter().map(|&g| g * g).sum::<T>().sqrt()
}

/// Scales `grads` down so the global norm does not exceed `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> T {
    assert!(max_norm > T::zero(), "clip norm must be > 0");
    let norm = grad_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g = *g * scale;
        }
    }
    norm
}
