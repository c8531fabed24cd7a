//! Integer MLP: weights, batches, forward and backward passes.
//!
//! Pipeline per layer: Q32.32 products accumulated in wrapping `i64` in
//! row-major ascending order, one floor shift back to Q16.16, then a
//! clamped ReLU on hidden layers. The output layer is linear and the loss
//! is the wrapping sum of squared errors.

use serde::{Deserialize, Serialize};

use super::fixed::{floor_shift, mul_wide, widen, Fixed};
use super::prng::PrngStream;
use crate::error::{Error, Result};
use crate::model::{commit_value, Digest, Seed};

/// Upper clamp of the hidden nonlinearity.
pub const ACTIVATION_CLAMP: Fixed = Fixed::ONE;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `outputs x inputs`.
    pub weights: Vec<Fixed>,
    pub biases: Vec<Fixed>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Weights {
    pub architecture: Vec<u32>,
    pub layers: Vec<Layer>,
}

impl Weights {
    pub fn zeros(architecture: &[u32]) -> Weights {
        let layers = architecture
            .windows(2)
            .map(|w| Layer { weights: vec![Fixed::ZERO; (w[0] * w[1]) as usize], biases: vec![Fixed::ZERO; w[1] as usize] })
            .collect();
        Weights { architecture: architecture.to_vec(), layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture.len() < 2 || self.layers.len() + 1 != self.architecture.len() {
            return Err(Error::Shape("layer count does not match architecture".into()));
        }
        for (l, (layer, w)) in self.layers.iter().zip(self.architecture.windows(2)).enumerate() {
            if layer.weights.len() != (w[0] * w[1]) as usize || layer.biases.len() != w[1] as usize {
                return Err(Error::Shape(format!("layer {l} does not match {}x{}", w[1], w[0])));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters in canonical order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &Fixed> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Fixed> + '_ {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn input_width(&self) -> usize {
        self.architecture[0] as usize
    }

    pub fn output_width(&self) -> usize {
        *self.architecture.last().expect("validated architecture") as usize
    }

    pub fn commitment(&self) -> Digest {
        commit_value(self).expect("weights are integer-only")
    }

    /// Largest per-parameter difference, in raw units.
    pub fn max_abs_diff(&self, other: &Weights) -> i64 {
        self.params().zip(other.params()).map(|(a, b)| (a.raw() as i64 - b.raw() as i64).abs()).max().unwrap_or(0)
    }
}

/// Gradients share the weights' shape.
pub type Gradient = Weights;

/// Q32.32 gradient accumulators, before the final floor shift. Sums of
/// these over disjoint item sets equal the accumulator of the union.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WideGradient {
    pub architecture: Vec<u32>,
    /// Per layer: weight accumulators then bias accumulators.
    pub layers: Vec<Vec<i64>>,
}

impl WideGradient {
    pub fn zeros(architecture: &[u32]) -> WideGradient {
        WideGradient {
            architecture: architecture.to_vec(),
            layers: architecture.windows(2).map(|w| vec![0i64; (w[0] * w[1] + w[1]) as usize]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &WideGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.wrapping_add(*y);
            }
        }
    }

    pub fn rescale(&self) -> Gradient {
        let layers = self
            .layers
            .iter()
            .zip(self.architecture.windows(2))
            .map(|(acc, w)| {
                let n_w = (w[0] * w[1]) as usize;
                Layer {
                    weights: acc[..n_w].iter().map(|&a| floor_shift(a)).collect(),
                    biases: acc[n_w..].iter().map(|&a| floor_shift(a)).collect(),
                }
            })
            .collect();
        Weights { architecture: self.architecture.clone(), layers }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Batch {
    pub batch_index: u32,
    pub input_width: u32,
    pub target_width: u32,
    /// Flat `items x input_width`.
    pub inputs: Vec<Fixed>,
    /// Flat `items x target_width`.
    pub targets: Vec<Fixed>,
}

impl Batch {
    pub fn items(&self) -> usize {
        if self.input_width == 0 {
            0
        } else {
            self.inputs.len() / self.input_width as usize
        }
    }

    pub fn input(&self, item: usize) -> &[Fixed] {
        let w = self.input_width as usize;
        &self.inputs[item * w..(item + 1) * w]
    }

    pub fn target(&self, item: usize) -> &[Fixed] {
        let w = self.target_width as usize;
        &self.targets[item * w..(item + 1) * w]
    }

    /// Items `start..end` as their own batch with the same index.
    pub fn slice_items(&self, start: usize, end: usize) -> Batch {
        let (wi, wt) = (self.input_width as usize, self.target_width as usize);
        Batch {
            batch_index: self.batch_index,
            input_width: self.input_width,
            target_width: self.target_width,
            inputs: self.inputs[start * wi..end * wi].to_vec(),
            targets: self.targets[start * wt..end * wt].to_vec(),
        }
    }

    fn check_shape(&self, weights: &Weights) -> Result<()> {
        weights.validate()?;
        let (wi, wt) = (self.input_width as usize, self.target_width as usize);
        if wi != weights.input_width() || wt != weights.output_width() {
            return Err(Error::Shape(format!(
                "batch {}x{} does not fit network {}x{}",
                wi,
                wt,
                weights.input_width(),
                weights.output_width()
            )));
        }
        if !self.inputs.len().is_multiple_of(wi.max(1)) || self.targets.len() != self.items() * wt {
            return Err(Error::Shape("inputs and targets disagree on item count".into()));
        }
        Ok(())
    }
}

/// The Prover's dataset, addressed by batch index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dataset {
    pub batches: Vec<Batch>,
}

impl Dataset {
    pub fn get(&self, batch_index: u32) -> Option<&Batch> {
        self.batches.iter().find(|b| b.batch_index == batch_index)
    }

    pub fn commitment(&self) -> Digest {
        commit_value(self).expect("dataset is integer-only")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardOutput {
    /// Flat `items x output_width`.
    pub outputs: Vec<Fixed>,
    pub loss: Fixed,
}

/// Per-item cache of pre-activations and activations.
struct Activations {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<Fixed>>,
    pre: Vec<Vec<Fixed>>,
}

fn clamped_relu(z: Fixed) -> Fixed {
    z.clamp_to(Fixed::ZERO, ACTIVATION_CLAMP)
}

fn relu_passes_gradient(z: Fixed) -> bool {
    z > Fixed::ZERO && z < ACTIVATION_CLAMP
}

fn forward_item(weights: &Weights, input: &[Fixed]) -> Activations {
    let mut acts = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(weights.layers.len());
    let last = weights.layers.len() - 1;
    for (l, layer) in weights.layers.iter().enumerate() {
        let x = &acts[l];
        let n_in = x.len();
        let n_out = layer.biases.len();
        let mut z = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let mut acc = widen(layer.biases[i]);
            let row = &layer.weights[i * n_in..(i + 1) * n_in];
            for j in 0..n_in {
                acc = acc.wrapping_add(mul_wide(row[j], x[j]));
            }
            z.push(floor_shift(acc));
        }
        let a = if l == last { z.clone() } else { z.iter().map(|&v| clamped_relu(v)).collect() };
        pre.push(z);
        acts.push(a);
    }
    Activations { acts, pre }
}

/// Forward pass and squared-error loss over the whole batch.
pub fn forward_batch(weights: &Weights, batch: &Batch) -> Result<ForwardOutput> {
    batch.check_shape(weights)?;
    let mut outputs = Vec::with_capacity(batch.items() * weights.output_width());
    let mut loss_acc: i64 = 0;
    for item in 0..batch.items() {
        let cache = forward_item(weights, batch.input(item));
        let y = cache.acts.last().expect("output layer");
        for (&yo, &t) in y.iter().zip(batch.target(item)) {
            let d = yo - t;
            loss_acc = loss_acc.wrapping_add(mul_wide(d, d));
        }
        outputs.extend_from_slice(y);
    }
    Ok(ForwardOutput { outputs, loss: floor_shift(loss_acc) })
}

/// Outputs only, for inference.
pub fn forward_outputs(weights: &Weights, inputs: &[Fixed]) -> Vec<Fixed> {
    forward_item(weights, inputs).acts.pop().expect("output layer")
}

/// Gradient accumulators of the summed squared error over `batch`.
pub fn backward_wide(weights: &Weights, batch: &Batch) -> Result<WideGradient> {
    batch.check_shape(weights)?;
    let mut grad = WideGradient::zeros(&weights.architecture);
    for item in 0..batch.items() {
        let cache = forward_item(weights, batch.input(item));
        // dL/dy = 2 (y - t)
        let mut delta: Vec<Fixed> = cache
            .acts
            .last()
            .expect("output layer")
            .iter()
            .zip(batch.target(item))
            .map(|(&y, &t)| {
                let d = y - t;
                d + d
            })
            .collect();
        for l in (0..weights.layers.len()).rev() {
            let layer = &weights.layers[l];
            let x = &cache.acts[l];
            let n_in = x.len();
            let acc = &mut grad.layers[l];
            let n_w = layer.weights.len();
            for (i, &d) in delta.iter().enumerate() {
                for j in 0..n_in {
                    acc[i * n_in + j] = acc[i * n_in + j].wrapping_add(mul_wide(d, x[j]));
                }
                acc[n_w + i] = acc[n_w + i].wrapping_add(widen(d));
            }
            if l > 0 {
                let z_prev = &cache.pre[l - 1];
                delta = (0..n_in)
                    .map(|j| {
                        if !relu_passes_gradient(z_prev[j]) {
                            return Fixed::ZERO;
                        }
                        let mut s: i64 = 0;
                        for (i, &d) in delta.iter().enumerate() {
                            s = s.wrapping_add(mul_wide(layer.weights[i * n_in + j], d));
                        }
                        floor_shift(s)
                    })
                    .collect();
            }
        }
    }
    Ok(grad)
}

/// Reference gradient of the summed squared error, on the fixed-point grid.
pub fn backward_batch(weights: &Weights, batch: &Batch) -> Result<Gradient> {
    Ok(backward_wide(weights, batch)?.rescale())
}

/// Weights drawn from `(seed, "init/<layer>")`, uniform on the Q16.16 grid
/// in `[-2^-s, 2^-s)` with `s = floor(log2(fan_in) / 2)`, so wide layers
/// start out of saturation. Weights come first in each layer's stream, then
/// biases.
pub fn init_weights(architecture: &[u32], seed: &Seed) -> Result<Weights> {
    if architecture.len() < 2 || architecture.contains(&0) {
        return Err(Error::Shape("architecture needs at least two non-zero widths".into()));
    }
    let mut w = Weights::zeros(architecture);
    for (l, layer) in w.layers.iter_mut().enumerate() {
        let mut stream = PrngStream::new(seed, &format!("init/{l}"));
        let s = architecture[l].ilog2() / 2;
        for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            // Top 17 - s bits cover the grid points of the range.
            *p = Fixed((stream.next_u64() >> (47 + s)) as i32 - (65536 >> s));
        }
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Operation counts
// ---------------------------------------------------------------------------

/// Multiply-accumulates of one forward pass over one item.
pub fn forward_macs(architecture: &[u32]) -> u64 {
    architecture.windows(2).map(|w| w[0] as u64 * w[1] as u64).sum()
}

/// Multiply-accumulates of one backward pass over one item: weight
/// gradients for every layer, input gradients for all but the first.
pub fn backward_macs(architecture: &[u32]) -> u64 {
    let all = forward_macs(architecture);
    let first = architecture[0] as u64 * architecture[1] as u64;
    all + (all - first)
}

/// Model operations (2 per multiply-accumulate) per item for a training step.
pub fn training_ops_per_item(architecture: &[u32]) -> u64 {
    2 * (forward_macs(architecture) + backward_macs(architecture))
}

pub fn inference_ops_per_item(architecture: &[u32]) -> u64 {
    2 * forward_macs(architecture)
}

// ---------------------------------------------------------------------------
// Float shadow
// ---------------------------------------------------------------------------

/// Real-valued mirror of the integer network: same weights read as reals,
/// same nonlinearity and loss, no rounding. Used by the gradient oracle.
pub mod shadow {
    use super::{Batch, Weights};

    pub struct ShadowNet {
        pub architecture: Vec<u32>,
        /// Same flat order as [`Weights::params`].
        pub params: Vec<f64>,
    }

    impl ShadowNet {
        pub fn from_weights(w: &Weights) -> ShadowNet {
            ShadowNet { architecture: w.architecture.clone(), params: w.params().map(|p| p.to_f64()).collect() }
        }

        fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
            // (weights start, biases start, n_in, n_out)
            let mut out = Vec::new();
            let mut off = 0;
            for w in self.architecture.windows(2) {
                let (n_in, n_out) = (w[0] as usize, w[1] as usize);
                out.push((off, off + n_in * n_out, n_in, n_out));
                off += n_in * n_out + n_out;
            }
            out
        }

        fn forward_item(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let offs = self.layer_offsets();
            let clamp = super::ACTIVATION_CLAMP.to_f64();
            let mut acts = vec![x.to_vec()];
            let mut pre = Vec::new();
            for (l, &(ws, bs, n_in, n_out)) in offs.iter().enumerate() {
                let z: Vec<f64> = (0..n_out)
                    .map(|i| {
                        let row = &self.params[ws + i * n_in..ws + (i + 1) * n_in];
                        self.params[bs + i] + row.iter().zip(&acts[l]).map(|(w, x)| w * x).sum::<f64>()
                    })
                    .collect();
                let a = if l + 1 == offs.len() { z.clone() } else { z.iter().map(|v| v.clamp(0.0, clamp)).collect() };
                pre.push(z);
                acts.push(a);
            }
            (acts, pre)
        }

        pub fn loss(&self, batch: &Batch) -> f64 {
            let mut loss = 0.0;
            for item in 0..batch.items() {
                let x: Vec<f64> = batch.input(item).iter().map(|v| v.to_f64()).collect();
                let (acts, _) = self.forward_item(&x);
                for (y, t) in acts.last().unwrap().iter().zip(batch.target(item)) {
                    loss += (y - t.to_f64()).powi(2);
                }
            }
            loss
        }

        /// Analytic gradient with the same backward schedule as the
        /// integer engine.
        pub fn gradient(&self, batch: &Batch) -> Vec<f64> {
            let offs = self.layer_offsets();
            let clamp = super::ACTIVATION_CLAMP.to_f64();
            let mut grad = vec![0.0; self.params.len()];
            for item in 0..batch.items() {
                let x: Vec<f64> = batch.input(item).iter().map(|v| v.to_f64()).collect();
                let (acts, pre) = self.forward_item(&x);
                let mut delta: Vec<f64> =
                    acts.last().unwrap().iter().zip(batch.target(item)).map(|(y, t)| 2.0 * (y - t.to_f64())).collect();
                for l in (0..offs.len()).rev() {
                    let (ws, bs, n_in, _) = offs[l];
                    for (i, &d) in delta.iter().enumerate() {
                        for j in 0..n_in {
                            grad[ws + i * n_in + j] += d * acts[l][j];
                        }
                        grad[bs + i] += d;
                    }
                    if l > 0 {
                        delta = (0..n_in)
                            .map(|j| {
                                let z = pre[l - 1][j];
                                if z <= 0.0 || z >= clamp {
                                    return 0.0;
                                }
                                delta.iter().enumerate().map(|(i, d)| self.params[ws + i * n_in + j] * d).sum()
                            })
                            .collect();
                    }
                }
            }
            grad
        }
    }
}
