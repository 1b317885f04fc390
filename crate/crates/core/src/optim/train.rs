use serde::{Deserialize, Serialize};

use super::sgd::{sgd_step, SgdConfig, SgdState};
use crate::data::{batches, Dataset};
use crate::error::Result;
use crate::mask::Mask;
use crate::network::{loss_and_grads, predict, Network, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Percent correct, in `[0, 100]`.
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 256;

/// Mean cross-entropy and accuracy over a whole dataset.
pub fn evaluate(
    network: &Network,
    params: &ParamStore,
    mask: Option<&Mask>,
    data: &Dataset,
) -> Result<Evaluation> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let c = network.num_classes();
    for (x, y) in batches(data, EVAL_BATCH, 0, 0, false)? {
        let logits = predict(network, params, mask, x)?;
        for (i, &label) in y.iter().enumerate() {
            let row = &logits.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss_sum += lse - row[label];
            let argmax = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            if argmax == label {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy: 100.0 * correct as f64 / n,
    })
}

/// One shuffled pass over `data`. With `freeze`, the masked forward is used
/// and masked-out weights stay at zero. Returns the mean batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    network: &Network,
    params: &mut ParamStore,
    freeze: Option<&Mask>,
    state: &mut SgdState,
    config: &SgdConfig,
    lr: f64,
    data: &Dataset,
    seed: u64,
    epoch: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in batches(data, config.batch_size, seed, epoch, true)? {
        let (loss, grads) = loss_and_grads(network, params, freeze, x, &y)?;
        sgd_step(
            params,
            &grads,
            state,
            config.momentum,
            config.weight_decay,
            lr,
            freeze,
        )?;
        total += loss;
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}

/// Trains for `epochs` epochs under the config's LR schedule, starting at
/// epoch index 0. Returns the per-epoch mean training loss. `on_epoch` sees
/// the parameters after each completed epoch (1-based count).
#[allow(clippy::too_many_arguments)]
pub fn train(
    network: &Network,
    params: &mut ParamStore,
    freeze: Option<&Mask>,
    config: &SgdConfig,
    epochs: usize,
    data: &Dataset,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &ParamStore),
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut state = SgdState::new();
    let mut losses = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let lr = config.schedule.lr_at(e);
        losses.push(train_epoch(
            network, params, freeze, &mut state, config, lr, data, seed, e as u64,
        )?);
        on_epoch(e + 1, params);
    }
    Ok(losses)
}
