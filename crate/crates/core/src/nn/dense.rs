use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::glorot_bound;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer shape. Parameters are an `output x (input + 1)`
/// row-major block, the last column being the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self { input, output, activation }
    }

    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.output, self.input + 1]
    }

    /// Glorot-uniform weights multiplied by `scale`, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], scale: f64, rng: &mut R) {
        let bound = glorot_bound(self.input, self.output) * scale;
        let stride = self.input + 1;
        for row in params.chunks_exact_mut(stride) {
            for w in &mut row[..self.input] {
                *w = rng.gen_range(-bound..=bound);
            }
            row[self.input] = 0.0;
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output];
        self.forward_into(params, x, &mut y);
        y
    }

    pub fn forward_into(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input);
        let stride = self.input + 1;
        for (yi, row) in y.iter_mut().zip(params.chunks_exact(stride)) {
            let z = dot(&row[..self.input], x) + row[self.input];
            *yi = self.activation.apply(z);
        }
    }

    /// Reverse pass. `y` is the post-activation output of the forward pass.
    /// Accumulates parameter gradients into `grad` and, when requested, the
    /// input gradient into `dx`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let stride = self.input + 1;
        let mut dz = vec![0.0; self.output];
        for o in 0..self.output {
            dz[o] = dy[o] * self.activation.derivative_from_output(y[o]);
        }
        for (o, g) in grad.chunks_exact_mut(stride).enumerate() {
            let d = dz[o];
            if d != 0.0 {
                for (gi, xi) in g[..self.input].iter_mut().zip(x) {
                    *gi += d * xi;
                }
                g[self.input] += d;
            }
        }
        if let Some(dx) = dx {
            for (o, row) in params.chunks_exact(stride).enumerate() {
                let d = dz[o];
                if d != 0.0 {
                    for (dxi, w) in dx.iter_mut().zip(&row[..self.input]) {
                        *dxi += d * w;
                    }
                }
            }
        }
    }

    /// Forward-mode derivative: given the input tangent `dx` and the
    /// parameter tangent `dp`, returns the output tangent.
    pub fn jvp(&self, params: &[f64], dp: &[f64], x: &[f64], dx: Option<&[f64]>, y: &[f64]) -> Vec<f64> {
        let stride = self.input + 1;
        let mut out = vec![0.0; self.output];
        for o in 0..self.output {
            let row = &params[o * stride..(o + 1) * stride];
            let drow = &dp[o * stride..(o + 1) * stride];
            let mut dz = dot(&drow[..self.input], x) + drow[self.input];
            if let Some(dx) = dx {
                dz += dot(&row[..self.input], dx);
            }
            out[o] = dz * self.activation.derivative_from_output(y[o]);
        }
        out
    }
}

/// A dense layer that owns its weights, for standalone use.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub spec: Dense,
    pub params: Vec<f64>,
}

impl DenseLayer {
    /// Builds a layer from an `out x in` weight matrix and a bias vector.
    pub fn from_weights(weights: &[Vec<f64>], bias: &[f64], activation: Activation) -> Result<Self> {
        let output = weights.len();
        if bias.len() != output {
            return Err(Error::dim("dense bias", output, bias.len()));
        }
        let input = weights.first().map_or(0, Vec::len);
        let mut params = Vec::with_capacity(output * (input + 1));
        for (row, b) in weights.iter().zip(bias) {
            if row.len() != input {
                return Err(Error::dim("dense weight row", input, row.len()));
            }
            if row.iter().chain(std::iter::once(b)).any(|v| !v.is_finite()) {
                return Err(Error::Numeric("dense weights".into()));
            }
            params.extend_from_slice(row);
            params.push(*b);
        }
        Ok(Self {
            spec: Dense::new(input, output, activation),
            params,
        })
    }
}

/// `act(W x + b)` with dimension checking.
pub fn dense_forward(x: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if x.len() != layer.spec.input {
        return Err(Error::dim("dense input", layer.spec.input, x.len()));
    }
    Ok(layer.spec.forward(&layer.params, x))
}
