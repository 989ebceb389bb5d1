use rand::Rng;

use super::{check_len, Activation, DenseLayer, GruLayer, ModelKind, Network, ParamView};
use crate::error::{Error, Result};

/// Two stacked GRU layers, many-to-many, with a per-step sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    /// Sequence length the model is used with.
    pub n: usize,
    pub gru1: GruLayer,
    pub gru2: GruLayer,
    pub head: DenseLayer,
}

impl RnnModel {
    pub fn init<R: Rng + ?Sized>(n: usize, hidden: usize, rng: &mut R) -> Self {
        RnnModel {
            n,
            gru1: GruLayer::init(1, hidden, rng),
            gru2: GruLayer::init(hidden, hidden, rng),
            head: DenseLayer::init(hidden, 1, Activation::Sigmoid, rng),
        }
    }

    pub fn zeros(n: usize, hidden: usize) -> Self {
        RnnModel {
            n,
            gru1: GruLayer::zeros(1, hidden),
            gru2: GruLayer::zeros(hidden, hidden),
            head: DenseLayer::zeros(hidden, 1, Activation::Sigmoid),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gru1.hidden_size()
    }

    /// Forward over a sequence of any length; the trained length is `n`.
    pub fn forward_sequence(&self, y: &[f64]) -> Result<Vec<f64>> {
        let c1 = self.gru1.forward(y.iter().map(|&v| vec![v]).collect())?;
        let c2 = self.gru2.forward(c1.outputs().to_vec())?;
        c2.outputs()
            .iter()
            .map(|h| self.head.forward(h).map(|(_, a)| a[0]))
            .collect()
    }
}

impl Network for RnnModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Rnn
    }

    fn block_len(&self) -> usize {
        self.n
    }

    fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("rnn input", self.n, y.len())?;
        self.forward_sequence(y)
    }

    fn accumulate_gradient(&self, y: &[f64], target: &[u8], grads: &mut Self) -> Result<f64> {
        let n = self.n;
        check_len("rnn input", n, y.len())?;
        check_len("rnn target", n, target.len())?;
        if grads.hidden() != self.hidden() {
            return Err(Error::invalid("gradient buffer shape differs from model"));
        }
        let c1 = self.gru1.forward(y.iter().map(|&v| vec![v]).collect())?;
        let c2 = self.gru2.forward(c1.outputs().to_vec())?;
        let scale = 2.0 / n as f64;
        let mut loss = 0.0;
        let mut d_h2 = Vec::with_capacity(n);
        for (h, &t) in c2.outputs().iter().zip(target) {
            let (z, a) = self.head.forward(h)?;
            let e = a[0] - f64::from(t);
            loss += e * e;
            d_h2.push(self.head.backward(h, &z, &a, &[scale * e], &mut grads.head));
        }
        let d_h1 = self.gru2.backward(&c2, &d_h2, &mut grads.gru2);
        self.gru1.backward(&c1, &d_h1, &mut grads.gru1);
        Ok(loss / n as f64)
    }

    fn zeros_like(&self) -> Self {
        RnnModel::zeros(self.n, self.hidden())
    }

    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::with_capacity(20);
        for (prefix, layer) in [("gru1", &self.gru1), ("gru2", &self.gru2)] {
            for (name, shape, data) in layer.blocks() {
                out.push(ParamView {
                    name: format!("{prefix}.{name}"),
                    shape,
                    data,
                });
            }
        }
        out.push(ParamView {
            name: "head.weights".into(),
            shape: (self.head.out_dim(), self.head.in_dim()),
            data: &self.head.weights.data,
        });
        out.push(ParamView {
            name: "head.bias".into(),
            shape: (self.head.out_dim(), 1),
            data: &self.head.bias,
        });
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(20);
        out.extend(self.gru1.blocks_mut());
        out.extend(self.gru2.blocks_mut());
        out.push(&mut self.head.weights.data);
        out.push(&mut self.head.bias);
        out
    }
}
