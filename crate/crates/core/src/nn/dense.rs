use rand::Rng;

use super::{check_len, relu, sigmoid, xavier_uniform_init, Matrix};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `a = act(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        DenseLayer {
            weights: xavier_uniform_init(output, input, rng),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }

    pub fn zeros_like(&self) -> Self {
        DenseLayer::zeros(self.in_dim(), self.out_dim(), self.activation)
    }

    /// Returns `(pre-activation, activation)`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("dense layer input", self.in_dim(), x.len())?;
        let mut z = self.bias.clone();
        self.weights.matvec_add(x, &mut z);
        let a = z.iter().map(|&v| self.activation.apply(v)).collect();
        Ok((z, a))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], z: &[f64], a: &[f64], d_out: &[f64], grads: &mut DenseLayer) -> Vec<f64> {
        let dz: Vec<f64> = d_out
            .iter()
            .zip(z.iter().zip(a))
            .map(|(&g, (&zi, &ai))| g * self.activation.derivative(zi, ai))
            .collect();
        grads.weights.outer_add(&dz, x);
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![0.0; self.in_dim()];
        self.weights.matvec_t_add(&dz, &mut dx);
        dx
    }

    pub fn param_count(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }
}
