//! Fully connected network with ReLU hidden layers and a linear output,
//! parameters in one flat vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer `l` occupies `W_l` (`out x in`, row-major) followed by `b_l` (`out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer inputs kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `inputs[l]` is what layer `l` consumed (post-activation of `l - 1`).
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Uniform `±1/sqrt(fan_in)` init; the output layer is further scaled by `output_gain`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let last = sizes.len() - 2;
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let gain = if l == last { output_gain } else { 1.0 };
            for p in &mut net.params[off..off + n_in * n_out + n_out] {
                *p = gain * rng.random_range(-bound..bound);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || param_count(&sizes) != params.len() {
            return Err(Error::Domain(format!(
                "{} parameters do not fit layer sizes {sizes:?}",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// `(weights, biases)` slices for layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = param_count(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sizes[0] {
            return Err(Error::Domain(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.sizes[0]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache> {
        self.check_input(x)?;
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < n_layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut h, z));
            off += n_in * n_out + n_out;
        }
        Ok(Cache { inputs, output: h })
    }

    /// Adds `d(dout . output)/d(params)` into `grad`.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut delta = dout.to_vec();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= n_in * n_out + n_out;
            let x = &cache.inputs[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // ReLU gate: the layer input is the post-activation of layer l-1.
                for (p, xi) in prev.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// ReLU on/off pattern of every hidden unit for input `x`.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let c = self.forward_cached(x)?;
        Ok(c.inputs[1..].iter().flatten().map(|v| *v > 0.0).collect())
    }
}
