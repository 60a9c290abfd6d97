use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Autoencoder parameters stored contiguously as `[W1 | b1 | W2 | b2]`,
/// matrices row-major: `W1` is `hidden x input`, `W2` is `input x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Gradient of the total loss, same layout as [`SaeModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Bottleneck activations after ReLU.
    pub z: Vec<f64>,
    pub recon: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Sum of squared errors over input dimensions.
    pub recon: f64,
    /// `sum |z_h|`.
    pub sparsity: f64,
    /// `recon + sparsity_weight * sparsity`.
    pub total: f64,
}

pub(crate) fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
    2 * input_dim * hidden_dim + input_dim + hidden_dim
}

impl SaeModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            params: vec![0.0; param_count(input_dim, hidden_dim)],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases of
    /// each layer, drawn in layout order.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim);
        let enc = 1.0 / libm::sqrt(input_dim as f64);
        let dec = 1.0 / libm::sqrt(hidden_dim as f64);
        let split = hidden_dim * input_dim + hidden_dim;
        for (i, p) in m.params.iter_mut().enumerate() {
            let bound = if i < split { enc } else { dec };
            *p = rng.gen_range(-bound..=bound);
        }
        m
    }

    pub fn from_params(input_dim: usize, hidden_dim: usize, params: Vec<f64>) -> Result<Self> {
        let expected = param_count(input_dim, hidden_dim);
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("autoencoder parameters"));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let (d, h) = (self.input_dim, self.hidden_dim);
        [0, h * d, h * d + h, 2 * h * d + h]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[3]..]
    }

    /// Mutable views of `(W1, b1, W2, b2)`.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.offsets();
        let (w1, rest) = self.params.split_at_mut(o[1]);
        let (b1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (w2, b2) = rest.split_at_mut(o[3] - o[2]);
        (w1, b1, w2, b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations `W1 x + b1`.
    fn encode_linear(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let w1 = self.w1();
        self.b1()
            .iter()
            .enumerate()
            .map(|(h, b)| b + crate::linalg::dot(&w1[h * d..(h + 1) * d], x))
            .collect()
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        let h = self.hidden_dim;
        let w2 = self.w2();
        self.b2()
            .iter()
            .enumerate()
            .map(|(i, b)| b + crate::linalg::dot(&w2[i * h..(i + 1) * h], z))
            .collect()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.encode_linear(x).into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let z = self.encode(x)?;
        let recon = self.decode(&z);
        Ok(Forward { z, recon })
    }

    pub fn loss(&self, x: &[f64], sparsity_weight: f64) -> Result<LossBreakdown> {
        let f = self.forward(x)?;
        Ok(breakdown(x, &f, sparsity_weight))
    }

    /// Per-sample loss and gradient.
    pub fn backward(&self, x: &[f64], sparsity_weight: f64) -> Result<(LossBreakdown, Gradients)> {
        let mut g = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(x, sparsity_weight, 1.0, &mut g)?;
        Ok((loss, Gradients { values: g }))
    }

    /// Adds `scale * dL/dθ` for sample `x` into `grad`, returns the loss.
    ///
    /// ReLU and L1 subgradients at 0 are taken as 0.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        sparsity_weight: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LossBreakdown> {
        self.check_input(x)?;
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let (d, h) = (self.input_dim, self.hidden_dim);
        let pre = self.encode_linear(x);
        let z: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let recon = self.decode(&z);
        let loss = breakdown(x, &Forward { z: z.clone(), recon: recon.clone() }, sparsity_weight);

        // dL/dx_hat = 2 (x_hat - x)
        let dout: Vec<f64> = recon.iter().zip(x).map(|(r, v)| 2.0 * (r - v) * scale).collect();

        let o = self.offsets();
        let w2 = self.w2();
        let mut dz = vec![0.0; h];
        {
            let (gw2, gb2) = grad[o[2]..].split_at_mut(d * h);
            for i in 0..d {
                let di = dout[i];
                gb2[i] += di;
                let row = &mut gw2[i * h..(i + 1) * h];
                let wrow = &w2[i * h..(i + 1) * h];
                for k in 0..h {
                    row[k] += di * z[k];
                    dz[k] += di * wrow[k];
                }
            }
        }
        let (gw1, rest) = grad[..o[2]].split_at_mut(o[1]);
        let gb1 = rest;
        for k in 0..h {
            if pre[k] <= 0.0 {
                continue;
            }
            // z_k > 0 here so the L1 subgradient is +1
            let dpre = dz[k] + sparsity_weight * scale;
            gb1[k] += dpre;
            let row = &mut gw1[k * d..(k + 1) * d];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dpre * xi;
            }
        }
        Ok(loss)
    }
}

fn breakdown(x: &[f64], f: &Forward, sparsity_weight: f64) -> LossBreakdown {
    let recon: f64 = f.recon.iter().zip(x).map(|(r, v)| (r - v) * (r - v)).sum();
    let sparsity: f64 = f.z.iter().map(|v| v.abs()).sum();
    LossBreakdown {
        recon,
        sparsity,
        total: recon + sparsity_weight * sparsity,
    }
}
