//! Minibatch Adam training on freshly simulated channel data.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, Model, ModelKind, Network, DEFAULT_BLOCK_LEN, DEFAULT_GRU_HIDDEN};
use crate::channel::{Block, ChannelParams, QuantizerSpec};
use crate::detectors::hard_decision;
use crate::error::{Error, Result};
use crate::rng::{purpose_rng, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Blocks per Adam step.
    pub minibatch_blocks: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub train_blocks: usize,
    pub validation_blocks: usize,
    pub seed: u64,
    pub block_len: usize,
    /// GRU width; ignored by the MLP.
    pub hidden: usize,
    /// Train on quantized reads.
    pub quantizer: Option<QuantizerSpec>,
    /// Stop after this many epochs without a new best validation BER.
    pub early_stopping_patience: Option<usize>,
    /// Worker threads for per-block gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk_scale(ModelKind::Mlp)
    }
}

impl TrainConfig {
    /// Full training budgets: 10^6 blocks (MLP) or 4·10^4 blocks (RNN).
    pub fn paper_scale(kind: ModelKind) -> Self {
        let (train_blocks, minibatch_blocks) = match kind {
            ModelKind::Mlp => (1_000_000, 4),
            ModelKind::Rnn => (40_000, 2),
        };
        TrainConfig {
            epochs: 20,
            minibatch_blocks,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            train_blocks,
            validation_blocks: 2_000,
            seed: 1,
            block_len: DEFAULT_BLOCK_LEN,
            hidden: DEFAULT_GRU_HIDDEN,
            quantizer: None,
            early_stopping_patience: None,
            threads: 1,
        }
    }

    /// Full budgets divided by 25.
    pub fn desk_scale(kind: ModelKind) -> Self {
        let full = Self::paper_scale(kind);
        TrainConfig {
            train_blocks: full.train_blocks / 25,
            ..full
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("minibatch_blocks", self.minibatch_blocks),
            ("train_blocks", self.train_blocks),
            ("validation_blocks", self.validation_blocks),
            ("block_len", self.block_len),
            ("hidden", self.hidden),
            ("threads", self.threads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("train.{name} must be positive")));
            }
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return Err(Error::invalid("adam betas must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0) {
            return Err(Error::invalid("learning rate and adam epsilon must be positive"));
        }
        if let Some(q) = &self.quantizer {
            q.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ber: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Validation BER of the freshly initialized model.
    pub initial_val_ber: f64,
    pub curve: Vec<EpochStats>,
}

/// Fraction of validation bits the model gets wrong.
pub fn validation_ber<M: Network>(model: &M, blocks: &[Block]) -> Result<f64> {
    let per_block: Vec<(usize, usize)> = blocks
        .par_iter()
        .map(|b| {
            let hard = hard_decision(&model.forward(&b.y)?);
            let errors = hard.iter().zip(&b.x).filter(|(a, b)| a != b).count();
            Ok((errors, b.len()))
        })
        .collect::<Result<_>>()?;
    let (errors, bits) = per_block.iter().fold((0, 0), |(e, n), (a, b)| (e + a, n + b));
    Ok(errors as f64 / bits.max(1) as f64)
}

/// Trains a freshly initialized model of `kind` on `params`.
pub fn train(kind: ModelKind, params: &ChannelParams, config: &TrainConfig) -> Result<TrainOutcome<Model>> {
    config.validate()?;
    let mut rng = purpose_rng(config.seed, Purpose::Init);
    let model = Model::init(kind, config.block_len, config.hidden, &mut rng);
    train_model(model, params, config)
}

/// Continues training `model` with the data and schedule given by `config`.
pub fn train_model<M: Network>(model: M, params: &ChannelParams, config: &TrainConfig) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if model.block_len() != config.block_len {
        return Err(Error::Shape {
            context: "training block length",
            expected: model.block_len(),
            got: config.block_len,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_training(model, params, config))
}

fn run_training<M: Network>(mut model: M, params: &ChannelParams, config: &TrainConfig) -> Result<TrainOutcome<M>> {
    let sampler = params.sampler()?;
    let n = config.block_len;
    let prepare = |blocks: Vec<Block>| -> Vec<Block> {
        match &config.quantizer {
            Some(q) => blocks.iter().map(|b| b.quantized(q)).collect(),
            None => blocks,
        }
    };
    let train_set = prepare(sampler.generate(n, config.train_blocks, config.seed, Purpose::Train, 0));
    let val_set = prepare(sampler.generate(n, config.validation_blocks, config.seed, Purpose::Validation, 0));

    let initial_val_ber = validation_ber(&model, &val_set)?;
    let adam = config.adam();
    let mut state = AdamState::new(model.params().iter().map(|p| p.data.len()));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = purpose_rng(config.seed, Purpose::Shuffle);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut step = 0;
    let parallel = config.threads > 1;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.minibatch_blocks) {
            // Each block's gradient lands in its own buffer and the buffers are
            // summed in batch order, so the thread count cannot change results.
            let one = |&i: &usize| -> Result<(M, f64)> {
                let b = &train_set[i];
                let mut g = model.zeros_like();
                let loss = model.accumulate_gradient(&b.y, &b.x, &mut g)?;
                Ok((g, loss))
            };
            let per_block: Vec<(M, f64)> = if parallel {
                batch.par_iter().map(one).collect::<Result<_>>()?
            } else {
                batch.iter().map(one).collect::<Result<_>>()?
            };
            let mut iter = per_block.into_iter();
            let (mut grads, mut batch_loss) = iter.next().expect("non-empty batch");
            for (g, l) in iter {
                for (acc, add) in grads.params_mut().into_iter().zip(g.params()) {
                    for (a, b) in acc.iter_mut().zip(add.data) {
                        *a += b;
                    }
                }
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let mut grad_blocks = grads.params_mut();
            for blk in grad_blocks.iter_mut() {
                blk.iter_mut().for_each(|v| *v *= inv);
            }
            let grad_views: Vec<&[f64]> = grad_blocks.iter().map(|b| &**b).collect();
            adam_step(&mut model.params_mut(), &grad_views, &mut state, &adam);
            if model.params().iter().any(|p| p.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            step += 1;
        }
        let val_ber = validation_ber(&model, &val_set)?;
        curve.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_ber,
        });
        if let Some(patience) = config.early_stopping_patience {
            if val_ber < best {
                best = val_ber;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        initial_val_ber,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseModel;

    fn small(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            train_blocks: 60,
            validation_blocks: 40,
            block_len: 12,
            hidden: 6,
            ..TrainConfig::desk_scale(kind)
        }
    }

    fn chan() -> ChannelParams {
        ChannelParams::stt_mram(0.05, -0.2, 0.04, NoiseModel::Gaussian).unwrap()
    }

    #[test]
    fn deterministic_and_thread_independent() {
        for kind in [ModelKind::Mlp, ModelKind::Rnn] {
            let cfg = small(kind);
            let a = train(kind, &chan(), &cfg).unwrap();
            let b = train(kind, &chan(), &cfg).unwrap();
            let c = train(kind, &chan(), &TrainConfig { threads: 3, ..cfg.clone() }).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.model, c.model);
            assert_eq!(a.curve, c.curve);
            assert_eq!(a.curve.len(), 2);
        }
    }

    #[test]
    fn fresh_model_is_uninformed() {
        let cfg = TrainConfig {
            epochs: 1,
            validation_blocks: 400,
            ..small(ModelKind::Rnn)
        };
        let out = train(ModelKind::Rnn, &chan(), &cfg).unwrap();
        assert!(out.initial_val_ber > 0.3 && out.initial_val_ber < 0.7, "{}", out.initial_val_ber);
        assert!(out.curve.iter().all(|e| e.val_ber.is_finite() && e.train_loss.is_finite()));
    }

    #[test]
    fn small_steps_do_not_increase_loss() {
        // Full-batch descent at a small learning rate on a fixed 100-block set.
        let cfg = TrainConfig {
            epochs: 6,
            train_blocks: 100,
            minibatch_blocks: 100,
            learning_rate: 1e-4,
            block_len: 16,
            ..small(ModelKind::Mlp)
        };
        let out = train(ModelKind::Mlp, &chan(), &cfg).unwrap();
        for w in out.curve.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{:?}", out.curve);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            epochs: 3,
            ..small(ModelKind::Mlp)
        };
        assert!(matches!(train(ModelKind::Mlp, &chan(), &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(ModelKind::Rnn);
        cfg.epochs = 0;
        assert!(train(ModelKind::Rnn, &chan(), &cfg).is_err());
        let mut cfg = small(ModelKind::Rnn);
        cfg.adam_beta1 = 1.0;
        assert!(cfg.validate().is_err());
    }
}
