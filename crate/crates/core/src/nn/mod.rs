//! Small neural networks trained from scratch.
//!
//! Two detector architectures are provided:
//!
//! * [`MlpModel`]: `N -> 4N` (ReLU) `-> N` (sigmoid), 40683 parameters at `N = 71`.
//! * [`RnnModel`]: two stacked GRU layers of width 71 read the block one
//!   resistance per step; a `71 -> 1` sigmoid head is applied at every step.
//!   46080 parameters.
//!
//! Gradients are computed by hand-written backpropagation (through time for
//! the GRU) and checked against central finite differences in the tests.
//! Everything is `f64`.

mod adam;
mod dense;
mod gru;
mod mlp;
mod rnn;
mod train;
mod weights;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{Activation, DenseLayer};
pub use gru::{GruCache, GruLayer};
pub use mlp::MlpModel;
pub use rnn::RnnModel;
pub use train::{train, train_model, validation_ber, EpochStats, TrainConfig, TrainOutcome};
pub use weights::{load_weights, read_weights, save_weights, write_weights, LoadedWeights, WEIGHTS_MAGIC};

use crate::error::{Error, Result};

/// Codeword length of the (71, 64) Hamming code.
pub const DEFAULT_BLOCK_LEN: usize = 71;

/// GRU width that reproduces the 46080-parameter budget.
pub const DEFAULT_GRU_HIDDEN: usize = 71;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += self * x`.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * v`.
    pub fn matvec_t_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            if vi != 0.0 {
                axpy(vi, row, out);
            }
        }
    }

    /// `self += a ⊗ b`.
    pub fn outer_add(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Logistic function, clamped so that the result is strictly inside (0, 1).
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[inline]
pub fn relu(t: f64) -> f64 {
    t.max(0.0)
}

/// Matrix with entries uniform on `±sqrt(6 / (rows + cols))`.
pub fn xavier_uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    assert!(rows > 0 && cols > 0, "xavier init needs positive dimensions");
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite xavier limit");
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    }
}

/// `(1/N) Σ (soft_k - x_k)²`.
pub fn mse_loss(soft: &[f64], target: &[u8]) -> Result<f64> {
    if soft.len() != target.len() {
        return Err(Error::Shape {
            context: "mse loss",
            expected: soft.len(),
            got: target.len(),
        });
    }
    if soft.is_empty() {
        return Err(Error::Empty("mse loss of an empty vector"));
    }
    let sum: f64 = soft
        .iter()
        .zip(target)
        .map(|(s, &t)| (s - f64::from(t)).powi(2))
        .sum();
    Ok(sum / soft.len() as f64)
}

/// Named, shaped view of one parameter block.
#[derive(Debug)]
pub struct ParamView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

/// Common surface of the trainable detectors.
pub trait Network: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Block length `N` the model was built for.
    fn block_len(&self) -> usize;

    /// Soft estimates in (0, 1), one per read.
    fn forward(&self, y: &[f64]) -> Result<Vec<f64>>;

    /// Adds the gradient of `mse_loss(forward(y), target)` into `grads` and
    /// returns the loss. `grads` must have this model's shapes.
    fn accumulate_gradient(&self, y: &[f64], target: &[u8], grads: &mut Self) -> Result<f64>;

    /// Same architecture with every parameter zero.
    fn zeros_like(&self) -> Self;

    fn params(&self) -> Vec<ParamView<'_>>;

    /// Mutable parameter blocks, in the same order as [`Network::params`].
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Rnn => "rnn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "rnn" => Ok(ModelKind::Rnn),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Either detector network.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Mlp(MlpModel),
    Rnn(RnnModel),
}

impl Model {
    /// Fresh Xavier-initialized model.
    pub fn init<R: Rng + ?Sized>(kind: ModelKind, n: usize, hidden: usize, rng: &mut R) -> Model {
        match kind {
            ModelKind::Mlp => Model::Mlp(MlpModel::init(n, rng)),
            ModelKind::Rnn => Model::Rnn(RnnModel::init(n, hidden, rng)),
        }
    }

    /// Hidden width recorded in weight files (4N for the MLP).
    pub fn hidden(&self) -> usize {
        match self {
            Model::Mlp(m) => m.layer1.out_dim(),
            Model::Rnn(m) => m.hidden(),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Mlp($m) => $e,
            Model::Rnn($m) => $e,
        }
    };
}

impl Network for Model {
    fn kind(&self) -> ModelKind {
        delegate!(self, m => m.kind())
    }

    fn block_len(&self) -> usize {
        delegate!(self, m => m.block_len())
    }

    fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, m => m.forward(y))
    }

    fn accumulate_gradient(&self, y: &[f64], target: &[u8], grads: &mut Self) -> Result<f64> {
        match (self, grads) {
            (Model::Mlp(m), Model::Mlp(g)) => m.accumulate_gradient(y, target, g),
            (Model::Rnn(m), Model::Rnn(g)) => m.accumulate_gradient(y, target, g),
            _ => Err(Error::invalid("gradient buffer has a different model kind")),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Model::Mlp(m) => Model::Mlp(m.zeros_like()),
            Model::Rnn(m) => Model::Rnn(m.zeros_like()),
        }
    }

    fn params(&self) -> Vec<ParamView<'_>> {
        delegate!(self, m => m.params())
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        delegate!(self, m => m.params_mut())
    }
}

/// Total number of scalar parameters.
pub fn count_params<M: Network>(model: &M) -> usize {
    model.count_params()
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { context, expected, got })
    }
}

/// Central-difference check (step `1e-5`) of every `stride`-th parameter
/// against `accumulate_gradient`. An entry passes within `1e-4` relative or
/// `1e-8` absolute error. Returns the names of blocks with a failing entry.
pub fn gradient_check<M: Network>(model: &M, y: &[f64], target: &[u8], stride: usize) -> Result<Vec<String>> {
    let mut grads = model.zeros_like();
    model.accumulate_gradient(y, target, &mut grads)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec()))
        .collect();
    let h = 1e-5;
    let mut failed = Vec::new();
    let mut probe = model.clone();
    for (bi, (name, g)) in analytic.iter().enumerate() {
        let mut ok = true;
        for i in (0..g.len()).step_by(stride.max(1)) {
            let orig = probe.params_mut()[bi][i];
            probe.params_mut()[bi][i] = orig + h;
            let lp = mse_loss(&probe.forward(y)?, target)?;
            probe.params_mut()[bi][i] = orig - h;
            let lm = mse_loss(&probe.forward(y)?, target)?;
            probe.params_mut()[bi][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - g[i]).abs();
            if err > 1e-8 && err > 1e-4 * fd.abs().max(g[i].abs()) {
                ok = false;
            }
        }
        if !ok {
            failed.push(name.clone());
        }
    }
    Ok(failed)
}
