//! Feed-forward network for the nonlinear covariate effect.
//!
//! Architecture: `q ≥ 1` hidden layers with SeLU activations and a linear
//! scalar output. Training happens inside the EM loop: each M-step runs a
//! few epochs of mini-batch SGD on the augmented-likelihood loss
//! `mean_i [B_i·exp(φ(w_i)) − A_i·φ(w_i)] + l1·Σ|weights|`, with inverted
//! dropout on hidden activations. The reported output is the raw network
//! output minus a centering offset so the training-sample mean of `φ` can
//! be pinned to zero after every M-step (identifiability).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-point constants of the scaled exponential linear unit.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// SeLU activation: `λ·x` for positive `x`, `λ·α·(e^x − 1)` otherwise.
#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn selu_deriv(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Training configuration for the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Layer widths `h_0, h_1, ..., h_q, 1` (input, hidden, scalar output).
    pub widths: Vec<usize>,
    pub l1_penalty: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_em_step: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl NetConfig {
    /// Config with the benchmark defaults: l1 0.01, learning rate 1e-4,
    /// batch size 50, 20 epochs per EM step, dropout 0.1.
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        NetConfig {
            widths,
            l1_penalty: 0.01,
            learning_rate: 1e-4,
            batch_size: 50,
            epochs_per_em_step: 20,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::config("network needs at least one hidden layer"));
        }
        if *self.widths.last().unwrap() != 1 {
            return Err(Error::config("network output dimension must be 1"));
        }
        if self.widths.iter().any(|&h| h == 0) {
            return Err(Error::config("network layer widths must be positive"));
        }
        if !(self.l1_penalty >= 0.0 && self.l1_penalty.is_finite()) {
            return Err(Error::config("l1 penalty must be nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs_per_em_step == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }
}

/// Network parameters plus the mean-zero centering offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetRepr", try_from = "NetRepr")]
pub struct NeuralNet {
    widths: Vec<usize>,
    /// `weights[j]` is the `widths[j+1] × widths[j]` matrix, row-major.
    weights: Vec<Vec<f64>>,
    shifts: Vec<Vec<f64>>,
    centering_offset: f64,
}

/// Flat serialized form: widths header plus concatenated parameter arrays.
#[derive(Serialize, Deserialize)]
struct NetRepr {
    widths: Vec<usize>,
    weights: Vec<f64>,
    shifts: Vec<f64>,
    centering_offset: f64,
}

impl From<NeuralNet> for NetRepr {
    fn from(n: NeuralNet) -> Self {
        NetRepr {
            widths: n.widths,
            weights: n.weights.concat(),
            shifts: n.shifts.concat(),
            centering_offset: n.centering_offset,
        }
    }
}

impl TryFrom<NetRepr> for NeuralNet {
    type Error = Error;

    fn try_from(r: NetRepr) -> Result<Self> {
        if r.widths.len() < 2 {
            return Err(Error::data("network widths header is too short"));
        }
        let mut weights = Vec::new();
        let mut shifts = Vec::new();
        let mut wofs = 0;
        let mut sofs = 0;
        for j in 0..r.widths.len() - 1 {
            let wlen = r.widths[j] * r.widths[j + 1];
            let slen = r.widths[j + 1];
            if wofs + wlen > r.weights.len() || sofs + slen > r.shifts.len() {
                return Err(Error::data("network parameter arrays do not match widths"));
            }
            weights.push(r.weights[wofs..wofs + wlen].to_vec());
            shifts.push(r.shifts[sofs..sofs + slen].to_vec());
            wofs += wlen;
            sofs += slen;
        }
        if wofs != r.weights.len() || sofs != r.shifts.len() {
            return Err(Error::data("network parameter arrays do not match widths"));
        }
        Ok(NeuralNet { widths: r.widths, weights, shifts, centering_offset: r.centering_offset })
    }
}

impl NeuralNet {
    /// Glorot-uniform weights from the seeded generator, zero shifts, zero
    /// centering offset. Deterministic given the config seed.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::new();
        let mut shifts = Vec::new();
        for j in 0..config.widths.len() - 1 {
            let fan_in = config.widths[j];
            let fan_out = config.widths[j + 1];
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(w);
            shifts.push(vec![0.0; fan_out]);
        }
        Ok(NeuralNet { widths: config.widths.clone(), weights, shifts, centering_offset: 0.0 })
    }

    /// Builds a network from explicit parameters (primarily for tests).
    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Vec<f64>>,
        shifts: Vec<Vec<f64>>,
        centering_offset: f64,
    ) -> Result<Self> {
        let repr = NetRepr {
            widths,
            weights: weights.concat(),
            shifts: shifts.concat(),
            centering_offset,
        };
        NeuralNet::try_from(repr)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn centering_offset(&self) -> f64 {
        self.centering_offset
    }

    /// Shifts the reported output by adding `delta` to the centering
    /// offset (used by identifiability checks: `φ → φ − delta`).
    pub fn add_centering_offset(&mut self, delta: f64) {
        self.centering_offset += delta;
    }

    /// Centered output `φ(w)`; dropout is never applied at evaluation.
    pub fn forward(&self, input: &[f64]) -> f64 {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut act = input.to_vec();
        let last = self.widths.len() - 2;
        for j in 0..=last {
            let rows = self.widths[j + 1];
            let cols = self.widths[j];
            let mut next = vec![0.0; rows];
            for s in 0..rows {
                let row = &self.weights[j][s * cols..(s + 1) * cols];
                let mut z = self.shifts[j][s];
                for (w, a) in row.iter().zip(&act) {
                    z += w * a;
                }
                next[s] = if j == last { z } else { selu(z) };
            }
            act = next;
        }
        act[0] - self.centering_offset
    }

    pub fn forward_batch(&self, inputs: &[&[f64]]) -> Vec<f64> {
        inputs.iter().map(|w| self.forward(w)).collect()
    }

    /// Subtracts the current sample mean of `φ` over the training inputs by
    /// folding it into the centering offset; returns the subtracted mean.
    pub fn recenter(&mut self, inputs: &[&[f64]]) -> f64 {
        assert!(!inputs.is_empty(), "recentering needs a nonempty training set");
        let mean = self.forward_batch(inputs).iter().sum::<f64>() / inputs.len() as f64;
        self.centering_offset += mean;
        mean
    }

    fn max_width(&self) -> usize {
        *self.widths.iter().max().unwrap()
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct NetGradient {
    pub weights: Vec<Vec<f64>>,
    pub shifts: Vec<Vec<f64>>,
}

impl NetGradient {
    fn zeros_like(net: &NeuralNet) -> Self {
        NetGradient {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            shifts: net.shifts.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= c;
            }
        }
        for s in &mut self.shifts {
            for v in s {
                *v *= c;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.shifts).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Forward/backward scratch reused across samples.
struct Scratch {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    fn new(net: &NeuralNet) -> Self {
        let q = net.widths.len() - 2;
        Scratch {
            acts: net.widths[..=q].iter().map(|&h| vec![0.0; h]).collect(),
            pre: (1..=q).map(|j| vec![0.0; net.widths[j]]).collect(),
            masks: (1..=q).map(|j| vec![1.0; net.widths[j]]).collect(),
            delta: vec![0.0; net.max_width()],
            delta_next: vec![0.0; net.max_width()],
        }
    }
}

/// Forward pass storing activations; returns the centered output.
/// `masks` (inverted-dropout factors) are applied to hidden activations.
fn forward_stored(net: &NeuralNet, input: &[f64], sc: &mut Scratch, use_masks: bool) -> f64 {
    let q = net.widths.len() - 2;
    sc.acts[0].copy_from_slice(input);
    for j in 0..q {
        let rows = net.widths[j + 1];
        let cols = net.widths[j];
        let (head, tail) = sc.acts.split_at_mut(j + 1);
        let prev = &head[j];
        let next = &mut tail[0];
        for s in 0..rows {
            let row = &net.weights[j][s * cols..(s + 1) * cols];
            let mut z = net.shifts[j][s];
            for (w, a) in row.iter().zip(prev.iter()) {
                z += w * a;
            }
            sc.pre[j][s] = z;
            let mut a = selu(z);
            if use_masks {
                a *= sc.masks[j][s];
            }
            next[s] = a;
        }
    }
    let mut out = net.shifts[q][0];
    for (w, a) in net.weights[q].iter().zip(&sc.acts[q]) {
        out += w * a;
    }
    out - net.centering_offset
}

/// Accumulates `dloss_dout · ∂φ/∂θ` into `grad` for one sample.
fn backward_accumulate(net: &NeuralNet, sc: &mut Scratch, dloss_dout: f64, use_masks: bool, grad: &mut NetGradient) {
    let q = net.widths.len() - 2;
    // Output layer.
    for (k, a) in sc.acts[q].iter().enumerate() {
        grad.weights[q][k] += dloss_dout * a;
    }
    grad.shifts[q][0] += dloss_dout;
    for (k, w) in net.weights[q].iter().enumerate() {
        sc.delta[k] = dloss_dout * w;
    }
    // Hidden layers, back to front.
    for j in (0..q).rev() {
        let rows = net.widths[j + 1];
        let cols = net.widths[j];
        // delta currently holds dL/da_{j+1}; convert to dL/dz_{j+1}.
        for s in 0..rows {
            let mut d = sc.delta[s];
            if use_masks {
                d *= sc.masks[j][s];
            }
            sc.delta[s] = d * selu_deriv(sc.pre[j][s]);
        }
        for s in 0..rows {
            let d = sc.delta[s];
            let row = &mut grad.weights[j][s * cols..(s + 1) * cols];
            for (g, a) in row.iter_mut().zip(&sc.acts[j]) {
                *g += d * a;
            }
            grad.shifts[j][s] += d;
        }
        if j > 0 {
            sc.delta_next[..cols].fill(0.0);
            for s in 0..rows {
                let d = sc.delta[s];
                let row = &net.weights[j][s * cols..(s + 1) * cols];
                for (p, w) in sc.delta_next[..cols].iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            std::mem::swap(&mut sc.delta, &mut sc.delta_next);
        }
    }
}

/// M-step loss: `mean_i [B_i e^{φ_i} − A_i φ_i] + l1·Σ|weights|`.
pub fn mstep_loss(net: &NeuralNet, inputs: &[&[f64]], a: &[f64], b: &[f64], l1: f64) -> f64 {
    assert_eq!(inputs.len(), a.len());
    assert_eq!(inputs.len(), b.len());
    let n = inputs.len() as f64;
    let data: f64 = inputs
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (&ai, &bi))| {
            let phi = net.forward(w);
            bi * phi.exp() - ai * phi
        })
        .sum::<f64>()
        / n;
    let penalty: f64 = net.weights.iter().flatten().map(|w| w.abs()).sum::<f64>();
    data + l1 * penalty
}

/// Exact gradient of [`mstep_loss`] by backpropagation, dropout off.
/// The L1 subgradient uses `sign(w)` with value 0 at exactly 0.
pub fn mstep_gradient(net: &NeuralNet, inputs: &[&[f64]], a: &[f64], b: &[f64], l1: f64) -> NetGradient {
    assert_eq!(inputs.len(), a.len());
    assert_eq!(inputs.len(), b.len());
    let mut grad = NetGradient::zeros_like(net);
    let mut sc = Scratch::new(net);
    for (w, (&ai, &bi)) in inputs.iter().zip(a.iter().zip(b)) {
        let phi = forward_stored(net, w, &mut sc, false);
        let dl = bi * phi.exp() - ai;
        backward_accumulate(net, &mut sc, dl, false, &mut grad);
    }
    grad.scale(1.0 / inputs.len() as f64);
    add_l1_subgradient(&mut grad, net, l1);
    grad
}

fn add_l1_subgradient(grad: &mut NetGradient, net: &NeuralNet, l1: f64) {
    if l1 == 0.0 {
        return;
    }
    for (gw, nw) in grad.weights.iter_mut().zip(&net.weights) {
        for (g, w) in gw.iter_mut().zip(nw) {
            *g += l1 * w.signum() * f64::from(*w != 0.0);
        }
    }
}

/// One epoch of mini-batch SGD on the M-step loss.
///
/// Per-sample weights `a` and `b` are the augmented-likelihood coefficients
/// (both nonnegative). Shuffling and dropout masks are drawn from `rng`, so
/// the epoch is deterministic given the generator state.
pub fn train_epoch(
    net: &mut NeuralNet,
    inputs: &[&[f64]],
    a: &[f64],
    b: &[f64],
    config: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    assert_eq!(inputs.len(), a.len());
    assert_eq!(inputs.len(), b.len());
    debug_assert!(a.iter().chain(b).all(|&v| v >= 0.0), "loss weights must be nonnegative");
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates from the epoch generator.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let keep = 1.0 - config.dropout_rate;
    let mut sc = Scratch::new(net);
    let mut grad = NetGradient::zeros_like(net);
    let mut warned = false;
    for batch in order.chunks(config.batch_size) {
        grad.scale(0.0);
        for &i in batch {
            if config.dropout_rate > 0.0 {
                for mask in &mut sc.masks {
                    for m in mask.iter_mut() {
                        *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                    }
                }
            }
            let use_masks = config.dropout_rate > 0.0;
            let phi = forward_stored(net, inputs[i], &mut sc, use_masks);
            if phi.abs() > 20.0 && !warned {
                log::warn!("network output |phi| = {:.2} exceeds 20; training may be diverging", phi.abs());
                warned = true;
            }
            let dl = b[i] * phi.exp() - a[i];
            backward_accumulate(net, &mut sc, dl, use_masks, &mut grad);
        }
        grad.scale(1.0 / batch.len() as f64);
        add_l1_subgradient(&mut grad, net, config.l1_penalty);
        if !grad.is_finite() {
            return Err(Error::numerical(
                "non-finite network gradient; the SGD learning rate is likely too large",
            ));
        }
        let lr = config.learning_rate;
        for (nw, gw) in net.weights.iter_mut().zip(&grad.weights) {
            for (w, g) in nw.iter_mut().zip(gw) {
                *w -= lr * g;
            }
        }
        for (ns, gs) in net.shifts.iter_mut().zip(&grad.shifts) {
            for (s, g) in ns.iter_mut().zip(gs) {
                *s -= lr * g;
            }
        }
    }
    Ok(())
}
