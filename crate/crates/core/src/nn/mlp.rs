use rand::Rng;

use super::{check_len, Activation, DenseLayer, ModelKind, Network, ParamView};
use crate::error::{Error, Result};

/// `N -> 4N` ReLU `-> N` sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
}

impl MlpModel {
    pub fn init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        MlpModel {
            layer1: DenseLayer::init(n, 4 * n, Activation::Relu, rng),
            layer2: DenseLayer::init(4 * n, n, Activation::Sigmoid, rng),
        }
    }

    pub fn zeros(n: usize) -> Self {
        MlpModel {
            layer1: DenseLayer::zeros(n, 4 * n, Activation::Relu),
            layer2: DenseLayer::zeros(4 * n, n, Activation::Sigmoid),
        }
    }
}

impl Network for MlpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }

    fn block_len(&self) -> usize {
        self.layer1.in_dim()
    }

    fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.block_len(), y.len())?;
        let (_, hidden) = self.layer1.forward(y)?;
        let (_, out) = self.layer2.forward(&hidden)?;
        Ok(out)
    }

    fn accumulate_gradient(&self, y: &[f64], target: &[u8], grads: &mut Self) -> Result<f64> {
        let n = self.block_len();
        check_len("mlp input", n, y.len())?;
        check_len("mlp target", n, target.len())?;
        if grads.block_len() != n || grads.layer1.out_dim() != self.layer1.out_dim() {
            return Err(Error::invalid("gradient buffer shape differs from model"));
        }
        let (z1, a1) = self.layer1.forward(y)?;
        let (z2, a2) = self.layer2.forward(&a1)?;
        let scale = 2.0 / n as f64;
        let mut loss = 0.0;
        let d_out: Vec<f64> = a2
            .iter()
            .zip(target)
            .map(|(&s, &t)| {
                let e = s - f64::from(t);
                loss += e * e;
                scale * e
            })
            .collect();
        let d_hidden = self.layer2.backward(&a1, &z2, &a2, &d_out, &mut grads.layer2);
        self.layer1.backward(y, &z1, &a1, &d_hidden, &mut grads.layer1);
        Ok(loss / n as f64)
    }

    fn zeros_like(&self) -> Self {
        MlpModel::zeros(self.block_len())
    }

    fn params(&self) -> Vec<ParamView<'_>> {
        let l1 = &self.layer1;
        let l2 = &self.layer2;
        vec![
            ParamView {
                name: "layer1.weights".into(),
                shape: (l1.out_dim(), l1.in_dim()),
                data: &l1.weights.data,
            },
            ParamView {
                name: "layer1.bias".into(),
                shape: (l1.out_dim(), 1),
                data: &l1.bias,
            },
            ParamView {
                name: "layer2.weights".into(),
                shape: (l2.out_dim(), l2.in_dim()),
                data: &l2.weights.data,
            },
            ParamView {
                name: "layer2.bias".into(),
                shape: (l2.out_dim(), 1),
                data: &l2.bias,
            },
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.layer1.weights.data,
            &mut self.layer1.bias,
            &mut self.layer2.weights.data,
            &mut self.layer2.bias,
        ]
    }
}
