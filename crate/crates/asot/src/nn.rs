//! Minimal dense neural kernel: multilayer perceptrons with analytic
//! backpropagation, the Adam optimizer, and a finite-difference gradient
//! checker. Hidden layers use ReLU; the output layer is linear.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `ln(1 + e^x)`, computed stably for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`]: the logistic sigmoid.
pub fn softplus_prime(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Fully connected network. `weights[l]` has shape `(dims[l+1], dims[l])`.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Cached intermediates from a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug)]
pub struct MlpCache {
    /// Post-activation values per layer; `activations[0]` is the input batch.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per layer (length = number of layers).
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Seeded initialization: uniform(−1/√fan_in, 1/√fan_in) per layer.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("network needs at least two nonzero layer dims"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound)));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// A network with all parameters zero (useful for tests and as a blank
    /// slate for [`Mlp::set_params`]).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let mut net = Self::new(dims, 0)?;
        for w in &mut net.weights {
            w.fill(0.0);
        }
        for b in &mut net.biases {
            b.fill(0.0);
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens all parameters (per layer: weights row-major, then biases).
    pub fn params(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        Array1::from_vec(out)
    }

    /// Restores parameters from a flat vector in [`Mlp::params`] order.
    pub fn set_params(&mut self, flat: ArrayView1<f64>) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, network needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
            for v in b.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch)?.1)
    }

    /// Forward pass that also returns the cache needed for backprop.
    pub fn forward_cached(&self, batch: &Array2<f64>) -> Result<(MlpCache, Array2<f64>)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} columns, network input dim is {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let layers = self.weights.len();
        let mut activations = vec![batch.clone()];
        let mut pre = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut z = activations[l].dot(&self.weights[l].t());
            for mut row in z.rows_mut() {
                row += &self.biases[l];
            }
            let a = if l + 1 < layers {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((MlpCache { activations, pre }, out))
    }

    /// Backpropagation. Returns the flat parameter gradient (in
    /// [`Mlp::params`] order) and the gradient with respect to the input
    /// batch.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: &Array2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let layers = self.weights.len();
        if upstream.dim() != cache.pre[layers - 1].dim() {
            return Err(Error::invalid("upstream gradient shape mismatch"));
        }
        let mut w_grads: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut b_grads: Vec<Array1<f64>> = Vec::with_capacity(layers);
        let mut delta = upstream.clone();
        for l in (0..layers).rev() {
            if l + 1 < layers {
                // ReLU subgradient: zero where the pre-activation was <= 0.
                delta.zip_mut_with(&cache.pre[l], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            w_grads.push(delta.t().dot(&cache.activations[l]));
            b_grads.push(delta.sum_axis(ndarray::Axis(0)));
            delta = delta.dot(&self.weights[l]);
        }
        w_grads.reverse();
        b_grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in w_grads.iter().zip(&b_grads) {
            flat.extend(w.iter().copied());
            flat.extend(b.iter().copied());
        }
        Ok((Array1::from_vec(flat), delta))
    }
}

/// Adam optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Array1<f64>,
    v: Array1<f64>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            m: Array1::zeros(num_params),
            v: Array1::zeros(num_params),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, mut params: ArrayViewMut1<f64>, grads: &Array1<f64>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("parameter/gradient length mismatch"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient in Adam step"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps_hat);
        }
        Ok(())
    }
}

/// Central-difference gradient check. Returns the maximum over parameters of
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<F>(loss_fn: F, params: &Array1<f64>, analytic: &Array1<f64>, step: f64) -> f64
where
    F: Fn(&Array1<f64>) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = loss_fn(&probe);
        probe[i] = orig - step;
        let minus = loss_fn(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
