//! Deterministic training loop state.
//!
//! The data order is a pure function of `(shuffle_seed, step)`: the training
//! stream is the concatenation of per-epoch permutations, and step `s` takes
//! positions `s·batch .. (s+1)·batch` of it. Epoch `e` is shuffled by
//! ChaCha8 seeded with `shuffle_seed` on stream `e`. A trainer restored from
//! a checkpoint therefore continues exactly where the original left off.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{train_step, Model, TrainItem};
use crate::tensor::OptimizerState;

/// Permutation of `0..n` used for epoch `epoch`.
pub fn epoch_order(shuffle_seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Dataset indices of the batch trained at `step`.
pub fn batch_indices(shuffle_seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let start = step * batch_size as u64;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (start..start + batch_size as u64)
        .map(|k| {
            let epoch = k / n as u64;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((epoch, epoch_order(shuffle_seed, epoch, n)));
            }
            cached.as_ref().expect("just filled").1[(k % n as u64) as usize]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Steps completed so far.
    pub step: u64,
    pub shuffle_seed: u64,
    pub batch_size: usize,
    pub lr: f64,
}

impl Trainer {
    pub fn new(model: Model, lr: f64, batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let optimizer = OptimizerState::new(model.params());
        Ok(Trainer {
            model,
            optimizer,
            step: 0,
            shuffle_seed,
            batch_size,
            lr,
        })
    }

    /// Trains one batch and returns its mean loss in nats per coordinate.
    pub fn train_step(&mut self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("training dataset is empty".into()));
        }
        let idx = batch_indices(self.shuffle_seed, self.step, self.batch_size, data.len());
        let batch: Vec<TrainItem<'_>> = idx
            .iter()
            .map(|&i| TrainItem {
                cloud: &data.clouds()[i],
                condition: data.condition(i),
            })
            .collect();
        let loss = train_step(&mut self.model, &mut self.optimizer, &batch, self.lr)?;
        self.step += 1;
        Ok(loss)
    }
}
