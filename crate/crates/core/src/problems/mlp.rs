use std::sync::Arc;

use super::{FiniteSumProblem, ProblemError, Smoothness};
use crate::data_ingest::DatasetHandle;
use crate::samplers::RngStream;

/// Fully connected tanh network with a softmax output layer. Component `i`
/// is the mean cross-entropy over minibatch `i` (consecutive samples), so
/// `n = ceil(samples / batch)`.
///
/// Parameters are packed layer by layer as `W_l` (row-major, out × in)
/// followed by `b_l`.
#[derive(Debug, Clone)]
pub struct TanhMlp {
    layers: Vec<usize>,
    data: Arc<DatasetHandle>,
    batch: usize,
    components: usize,
    offsets: Vec<usize>,
    dim: usize,
    seed: u64,
}

pub fn make_tanh_mlp(
    layer_sizes: &[usize],
    dataset: Arc<DatasetHandle>,
    batch: usize,
    seed: u64,
) -> Result<TanhMlp, ProblemError> {
    if layer_sizes.len() < 2 {
        return Err(ProblemError::Config(
            "an MLP needs at least input and output layer sizes".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(ProblemError::Config("layer sizes must be positive".into()));
    }
    if batch == 0 {
        return Err(ProblemError::Config("batch size must be positive".into()));
    }
    if dataset.samples == 0 {
        return Err(ProblemError::Config("dataset is empty".into()));
    }
    if layer_sizes[0] != dataset.feature_dim {
        return Err(ProblemError::DimensionMismatch {
            expected: dataset.feature_dim,
            got: layer_sizes[0],
        });
    }
    if *layer_sizes.last().unwrap() != dataset.classes {
        return Err(ProblemError::DimensionMismatch {
            expected: dataset.classes,
            got: *layer_sizes.last().unwrap(),
        });
    }
    let mut offsets = Vec::with_capacity(layer_sizes.len());
    let mut dim = 0;
    for w in layer_sizes.windows(2) {
        offsets.push(dim);
        dim += w[0] * w[1] + w[1];
    }
    Ok(TanhMlp {
        layers: layer_sizes.to_vec(),
        components: dataset.samples.div_ceil(batch),
        data: dataset,
        batch,
        offsets,
        dim,
        seed,
    })
}

impl TanhMlp {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layers
    }

    /// Per-layer uniform initialization on `±1/√fan_in` for weights and
    /// biases (the PyTorch `Linear` default).
    pub fn uniform_init(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim);
        for w in self.layers.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                x.push(bound * (2.0 * rng.uniform() - 1.0));
            }
        }
        x
    }

    /// Initialization derived from the construction seed.
    pub fn default_init(&self) -> Vec<f64> {
        self.uniform_init(&mut RngStream::new(self.seed, 0))
    }

    fn batch_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.batch;
        start..((i + 1) * self.batch).min(self.data.samples)
    }

    /// Forward pass; `acts[l]` receives the post-activation of layer `l`
    /// (input for `l = 0`, logits for the last layer).
    fn forward(&self, x: &[f64], input: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for l in 0..last {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let w = &x[self.offsets[l]..self.offsets[l] + fan_in * fan_out];
            let b = &x[self.offsets[l] + fan_in * fan_out..self.offsets[l] + fan_in * fan_out + fan_out];
            let (prev, next) = acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let z = b[r] + crate::vecops::dot(row, a_in);
                a_out[r] = if l + 1 == last { z } else { z.tanh() };
            }
        }
    }

    fn cross_entropy(logits: &[f64], label: usize) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    fn workspace(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|&s| vec![0.0; s]).collect()
    }

    fn predict(&self, x: &[f64], sample: usize, acts: &mut [Vec<f64>]) -> usize {
        self.forward(x, self.data.row(sample), acts);
        let logits = acts.last().unwrap();
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }
}

impl FiniteSumProblem for TanhMlp {
    fn name(&self) -> &str {
        "tanh_mlp"
    }

    fn num_components(&self) -> usize {
        self.components
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut acts = self.workspace();
        let range = self.batch_range(i);
        let count = range.len() as f64;
        range
            .map(|s| {
                self.forward(x, self.data.row(s), &mut acts);
                Self::cross_entropy(acts.last().unwrap(), self.data.labels[s])
            })
            .sum::<f64>()
            / count
    }

    /// Reverse-mode pass over the minibatch: softmax residual at the output,
    /// then `δ_l = (W_{l+1}ᵀ δ_{l+1}) ⊙ (1 − a_l²)` down through the tanh layers.
    fn component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut acts = self.workspace();
        let mut deltas = self.workspace();
        let range = self.batch_range(i);
        let scale = 1.0 / range.len() as f64;
        let last = self.layers.len() - 1;
        for s in range {
            self.forward(x, self.data.row(s), &mut acts);
            {
                let logits = &acts[last];
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
                let delta = &mut deltas[last];
                for k in 0..logits.len() {
                    delta[k] = (logits[k] - max).exp() / denom * scale;
                }
                delta[self.data.labels[s]] -= scale;
            }
            for l in (0..last).rev() {
                let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
                let w_off = self.offsets[l];
                let b_off = w_off + fan_in * fan_out;
                let (lower, upper) = deltas.split_at_mut(l + 1);
                let delta_out = &upper[0];
                let a_in = &acts[l];
                for r in 0..fan_out {
                    let d = delta_out[r];
                    if d != 0.0 {
                        crate::vecops::axpy(d, a_in, &mut out[w_off + r * fan_in..w_off + (r + 1) * fan_in]);
                    }
                    out[b_off + r] += d;
                }
                if l > 0 {
                    let w = &x[w_off..b_off];
                    let delta_in = &mut lower[l];
                    delta_in.iter_mut().for_each(|v| *v = 0.0);
                    for r in 0..fan_out {
                        crate::vecops::axpy(delta_out[r], &w[r * fan_in..(r + 1) * fan_in], delta_in);
                    }
                    for (v, a) in delta_in.iter_mut().zip(a_in) {
                        *v *= 1.0 - a * a;
                    }
                }
            }
        }
    }

    fn component_lower_bounds(&self) -> Vec<f64> {
        vec![0.0; self.components]
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness {
            lipschitz_gradient: None,
            lipschitz_hessian: None,
            trust_region_radius: f64::INFINITY,
        }
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        let mut acts = self.workspace();
        let correct = (0..self.data.samples)
            .filter(|&s| self.predict(x, s, &mut acts) == self.data.labels[s])
            .count();
        Some(correct as f64 / self.data.samples as f64)
    }

    fn initial_point(&self, rng: &mut RngStream) -> Option<Vec<f64>> {
        Some(self.uniform_init(rng))
    }
}
