//! Shared mini-batch training driver used by pretraining and fine-tuning.

use crate::encoder::{DialogModel, ModelDims};
use crate::error::{Error, Result};
use crate::optim::{adam_step, clip_gradients, AdamParams, AdamState};
use crate::tape::{Tape, Var};
use crate::tensor::Real;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Hyperparameters for one training run. Defaults follow the published
/// setup: Adam at 0.001, gradient clipping 5.0, dropout 0.5, batch 64,
/// 15 epochs, vocabulary 1000, 150-unit RNNs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    pub vocab_size: usize,
    pub embed: usize,
    pub utt_hidden: usize,
    pub ctx_hidden: usize,
    pub dec_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    /// Negatives per retrieval training example.
    pub k_negatives: usize,
    /// Candidate-set size for retrieval evaluation.
    pub hits_k: usize,
    pub max_decode_len: usize,
    /// Keep the transferred encoder fixed during fine-tuning.
    pub freeze_encoder: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vocab_size: 1000,
            embed: 150,
            utt_hidden: 150,
            ctx_hidden: 150,
            dec_hidden: 150,
            epochs: 15,
            batch_size: 64,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            dropout: 0.5,
            k_negatives: 9,
            hits_k: 10,
            max_decode_len: 50,
            freeze_encoder: false,
        }
    }
}

impl PipelineConfig {
    /// A reduced geometry for fast desk-scale runs and tests.
    pub fn small() -> Self {
        PipelineConfig {
            vocab_size: 400,
            embed: 32,
            utt_hidden: 24,
            ctx_hidden: 24,
            dec_hidden: 24,
            batch_size: 16,
            dropout: 0.2,
            ..Default::default()
        }
    }

    pub fn dims(&self, vocab_len: usize) -> ModelDims {
        ModelDims {
            vocab: vocab_len,
            embed: self.embed,
            utt_hidden: self.utt_hidden,
            ctx_hidden: self.ctx_hidden,
            dec_hidden: self.dec_hidden,
        }
    }

    pub fn adam<F: Real>(&self) -> AdamParams<F> {
        AdamParams::new(self.lr, self.beta1, self.beta2, self.eps)
    }
}

/// Loss and validation trace for one epoch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_value: f64,
}

/// Whether validation selects the smallest value (losses) or the largest
/// (metrics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectBy {
    MinValid,
    MaxValid,
}

/// Seeded randomness handed to each batch: one stream for dropout masks,
/// one for data augmentation (negative sampling, corruption).
pub struct BatchRngs {
    pub dropout: ChaCha20Rng,
    pub sampling: ChaCha20Rng,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_value: f64,
}

/// Run shuffled mini-batch training: forward, backward, clip, Adam step,
/// with validation each epoch. On return the model holds the parameters of
/// the best validation epoch (the initialization, when `epochs` is zero or
/// nothing improves on it).
pub fn run_training<F, BL, VE>(
    model: &mut DialogModel<F>,
    n_examples: usize,
    config: &PipelineConfig,
    seed: u64,
    select: SelectBy,
    mut batch_loss: BL,
    mut validate: VE,
) -> Result<TrainOutcome>
where
    F: Real,
    BL: FnMut(&DialogModel<F>, &mut Tape<F>, &[usize], &mut BatchRngs) -> Result<Var>,
    VE: FnMut(&DialogModel<F>) -> Result<f64>,
{
    if n_examples == 0 {
        return Err(Error::InsufficientExamples {
            kind: "training examples",
            need: 1,
            have: 0,
        });
    }
    let adam = config.adam::<F>();
    let mut adam_state = AdamState::new(&model.store);
    let clip = F::from_f64c(config.clip_norm);

    let mut best_params = model.store.snapshot();
    let mut best_epoch = 0usize;
    let mut best_value = match select {
        SelectBy::MinValid => f64::INFINITY,
        SelectBy::MaxValid => f64::NEG_INFINITY,
    };
    if config.epochs == 0 {
        best_value = validate(model)?;
    }

    let mut log = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..n_examples).collect();
    for epoch in 1..=config.epochs {
        let mut shuffle_rng = crate::rng::stream(seed, "shuffle", epoch as u64);
        indices.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            let stream_idx = ((epoch as u64) << 32) | batch_idx as u64;
            let mut rngs = BatchRngs {
                dropout: crate::rng::stream(seed, "dropout", stream_idx),
                sampling: crate::rng::stream(seed, "sampling", stream_idx),
            };
            let mut tape = Tape::new();
            let loss = batch_loss(model, &mut tape, batch, &mut rngs)?;
            let loss_value = tape.scalar(loss).as_f64();
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss_value} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            tape.backward(loss)?;
            model.store.zero_grads();
            tape.write_param_grads(&mut model.store);
            clip_gradients(&mut model.store, clip);
            adam_step(&mut model.store, &mut adam_state, &adam);
            epoch_loss += loss_value * batch.len() as f64;
        }
        let train_loss = epoch_loss / n_examples as f64;
        let valid_value = validate(model)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_value,
        });
        let improved = match select {
            SelectBy::MinValid => valid_value < best_value,
            SelectBy::MaxValid => valid_value > best_value,
        };
        if improved {
            best_value = valid_value;
            best_epoch = epoch;
            best_params = model.store.snapshot();
        }
    }
    model.store.restore(&best_params);
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_value,
    })
}
