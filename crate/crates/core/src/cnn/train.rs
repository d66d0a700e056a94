use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, loss_and_grad, AdamConfig, CnnModel, Gradients, OptimizerState};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::frame_io::Plane;

/// A feature stack with its clean ground-truth patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub stack: FeatureStack,
    /// Ground-truth luma over the same box.
    pub target: Plane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 50,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub state: OptimizerState,
    /// Mean sample loss of each epoch run in this call.
    pub history: Vec<f64>,
}

/// Mini-batch ADAM training; see [`train_with`].
pub fn train(dataset: &[TrainingSample], model: CnnModel, config: &TrainConfig) -> Result<TrainOutcome> {
    let state = OptimizerState::new(&model, config.adam);
    train_with(dataset, model, state, config, |_, _, _, _| Ok(()))
}

/// Runs `config.epochs` further epochs from `state`, calling `on_epoch`
/// with `(epoch, model, state, mean_loss)` after each one.
///
/// The sample order of epoch `e` depends only on `config.seed` and `e`, so
/// resuming from a checkpoint reproduces an uninterrupted run. Batch
/// gradients are reduced in sample order regardless of thread count.
pub fn train_with<F>(
    dataset: &[TrainingSample],
    mut model: CnnModel,
    mut state: OptimizerState,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &CnnModel, &OptimizerState, f64) -> Result<()>,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        let epoch = state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_grad(&model, &dataset[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Gradients::zeros_like(&model);
            for (loss, g) in &results {
                epoch_loss += loss;
                total.add_assign(g);
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(&mut model, &mut state, &total)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        state.epoch += 1;
        log::info!("epoch {}: mean loss {mean:.6e}", state.epoch);
        history.push(mean);
        on_epoch(state.epoch, &model, &state, mean)?;
    }
    Ok(TrainOutcome {
        model,
        state,
        history,
    })
}
