//! Adagrad updates and the minibatch training loop. One optimizer step
//! per minibatch, batch gradient = arithmetic mean over examples, fully
//! deterministic given the config seed.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{nll_loss, ModelParams, TrainingExample};
use crate::numerics::{shuffle, Rng};
use crate::params::ParamBlocks;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Per-parameter accumulator of squared gradients. Accumulators start at
/// zero and never decrease.
#[derive(Debug, Clone)]
pub struct Adagrad<P: ParamBlocks> {
    learning_rate: f64,
    epsilon: f64,
    acc: P,
}

impl<P: ParamBlocks> Adagrad<P> {
    pub fn new(template: &P, learning_rate: f64) -> Self {
        Adagrad {
            learning_rate,
            epsilon: ADAGRAD_EPSILON,
            acc: template.zeros_like(),
        }
    }

    pub fn accumulator(&self) -> &P {
        &self.acc
    }

    /// acc += g², then θ -= lr · g / (√acc + ε), elementwise. Entries with
    /// zero gradient (untouched embedding columns) are left bit-identical.
    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        if !params.shape_congruent(grads) || !params.shape_congruent(&self.acc) {
            return Err(Error::dimension(
                "adagrad step with shape-incongruent parameters, gradients or state".to_string(),
            ));
        }
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (p, (g, a)) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks().into_iter().zip(self.acc.blocks_mut()))
        {
            for (pv, (&gv, av)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data().iter().zip(a.data_mut()))
            {
                if gv == 0.0 {
                    continue;
                }
                *av += gv * gv;
                *pv -= lr * gv / (av.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Training knobs. Defaults: batch size 32, learning rate 0.05,
/// Adagrad.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// History window used when building examples from sessions.
    pub history: usize,
    /// Optional global-norm gradient clipping. Off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.05,
            epochs: 10,
            seed: 42,
            history: 10,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1".to_string()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::argument(format!(
                "learning_rate must be nonnegative and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Anything the training loop can optimize: an example-level loss and
/// gradient on top of a parameter set.
pub trait Trainable: ParamBlocks + Clone {
    /// Loss of one example plus the full parameter gradient. `rng` drives
    /// dropout; implementations must consume it deterministically.
    fn example_loss_grad(&self, ex: &TrainingExample, rng: &mut Rng) -> Result<(f64, Self)>;
}

impl Trainable for ModelParams {
    fn example_loss_grad(&self, ex: &TrainingExample, rng: &mut Rng) -> Result<(f64, Self)> {
        let (log_probs, cache) = self.forward(ex, Mode::Train, rng)?;
        let loss = nll_loss(&log_probs, ex.target)?;
        let grads = self.backward(&cache, ex.target)?;
        Ok((loss, grads))
    }
}

/// Minibatch training: per epoch a seeded shuffle, mean-of-example batch
/// gradients, one Adagrad step per batch. Returns the trained parameters
/// and the mean loss of every epoch.
pub fn train<M: Trainable>(
    mut params: M,
    dataset: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(M, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::argument("training on an empty dataset".to_string()));
    }
    cfg.validate()?;

    let mut rng = Rng::new(cfg.seed);
    let mut opt = Adagrad::new(&params, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, &mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads = params.zeros_like();
            for &i in batch {
                let (loss, grads) = params.example_loss_grad(&dataset[i], &mut rng)?;
                epoch_loss += loss;
                batch_grads.add_scaled(&grads, 1.0);
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = cfg.clip_norm {
                let norm = batch_grads.global_norm();
                if norm > max_norm {
                    batch_grads.scale(max_norm / norm);
                }
            }
            opt.step(&mut params, &batch_grads)?;
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }

    Ok((params, trace))
}
