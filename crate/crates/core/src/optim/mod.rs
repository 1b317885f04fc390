//! Optimization: SGD with momentum, learning-rate schedules, the masked L2
//! penalty with its growing coefficient, and the extrusion loop that drives
//! penalized weights towards zero while the rest of the network trains.

mod lambda;
mod sgd;
mod train;

pub use lambda::{extra_cost, LambdaParams, LambdaSchedule};
pub use sgd::{sgd_step, LrSchedule, SgdConfig, SgdState, Warmup};
pub use train::{evaluate, train, train_epoch, Evaluation};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::network::{loss_and_grads, Network, ParamId, ParamStore};
use crate::tensor::Tensor;

/// `½ λ Σ θ²` over the entries picked by `selector`.
pub fn penalty_value(params: &ParamStore, selector: &Mask, lambda: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (id, l) in selector.layers() {
        let t = selected_param(params, *id, l.len())?;
        sq += t
            .data()
            .iter()
            .zip(l.bits())
            .filter(|(_, &b)| b)
            .map(|(v, _)| v * v)
            .sum::<f64>();
    }
    Ok(0.5 * lambda * sq)
}

fn selected_param(params: &ParamStore, id: ParamId, len: usize) -> Result<&Tensor> {
    let t = params
        .get(id)
        .ok_or_else(|| Error::Input(format!("selector names missing parameter {id}")))?;
    if t.len() != len {
        return Err(Error::Input(format!(
            "selector for {id} has {len} entries, parameter has {}",
            t.len()
        )));
    }
    Ok(t)
}

/// Adds `λ·θ` to the gradient of every entry picked by `selector`; all other
/// entries keep their data-loss gradient untouched.
pub fn add_penalty_grad(
    grads: &mut BTreeMap<ParamId, Tensor>,
    params: &ParamStore,
    selector: &Mask,
    lambda: f64,
) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Input(format!("lambda must be non-negative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(());
    }
    for (id, l) in selector.layers() {
        let t = selected_param(params, *id, l.len())?;
        let g = grads
            .get_mut(id)
            .ok_or_else(|| Error::Usage(format!("missing gradient for {id}")))?;
        for ((gv, pv), &b) in g.data_mut().iter_mut().zip(t.data()).zip(l.bits()) {
            if b {
                *gv += lambda * pv;
            }
        }
    }
    Ok(())
}

/// Loss and gradients of `L + ½ λ ‖θ*‖²` on one batch, where θ* are the
/// entries picked by `selector`.
#[derive(Debug, Clone)]
pub struct RegularizedStep {
    pub data_loss: f64,
    pub penalty: f64,
    pub grads: BTreeMap<ParamId, Tensor>,
}

impl RegularizedStep {
    pub fn total_loss(&self) -> f64 {
        self.data_loss + self.penalty
    }
}

pub fn regularized_backward(
    network: &Network,
    params: &ParamStore,
    selector: &Mask,
    lambda: f64,
    inputs: Tensor,
    labels: &[usize],
) -> Result<RegularizedStep> {
    let (data_loss, mut grads) = loss_and_grads(network, params, None, inputs, labels)?;
    add_penalty_grad(&mut grads, params, selector, lambda)?;
    Ok(RegularizedStep {
        data_loss,
        penalty: penalty_value(params, selector, lambda)?,
        grads,
    })
}

/// L2 norm of the entries picked by `selector`.
pub fn selected_norm(params: &ParamStore, selector: &Mask) -> Result<f64> {
    Ok((2.0 * penalty_value(params, selector, 1.0)?).sqrt())
}

/// Optimizer knobs for the extrusion phase (fixed learning rate, no weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrusionConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Record a trace point every this many iterations (and at the end).
    pub trace_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub lambda: f64,
    pub penalized_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ExtrusionOutcome {
    /// Parameters at the end of the run, penalized entries still present.
    pub trained: ParamStore,
    /// `trained` with every penalized entry set to zero.
    pub pruned: ParamStore,
    pub trace: Vec<TracePoint>,
    pub iterations: u64,
}

/// Trains the whole dense network on the regularized loss while the penalty
/// coefficient ramps from λ₀ to λ_b, then holds it for `v_s` more
/// iterations. The penalty acts only on the complement of `mask`. At the end
/// the penalized weights are removed.
pub fn extrusion_run(
    network: &Network,
    params: &ParamStore,
    mask: &Mask,
    lambda: &LambdaParams,
    data: &Dataset,
    config: &ExtrusionConfig,
    seed: u64,
) -> Result<ExtrusionOutcome> {
    extrusion_run_within(network, params, None, mask, lambda, data, config, seed)
}

/// [`extrusion_run`] on an already sparse network: weights outside
/// `survivors` stay frozen at zero and only `survivors ∧ ¬mask` is penalized.
#[allow(clippy::too_many_arguments)]
pub fn extrusion_run_within(
    network: &Network,
    params: &ParamStore,
    survivors: Option<&Mask>,
    mask: &Mask,
    lambda: &LambdaParams,
    data: &Dataset,
    config: &ExtrusionConfig,
    seed: u64,
) -> Result<ExtrusionOutcome> {
    if data.is_empty() {
        return Err(Error::Config("extrusion needs a non-empty dataset".into()));
    }
    mask.check_covers(network)?;
    if let Some(s) = survivors {
        s.check_covers(network)?;
        if !mask.is_subset_of(s) {
            return Err(Error::Input(
                "extrusion mask must be a subset of the surviving weights".into(),
            ));
        }
    }
    let mut schedule = LambdaSchedule::new(*lambda)?;
    let selector = match survivors {
        Some(s) => s.and_not(mask)?,
        None => mask.complement(),
    };
    let total = lambda.total_iterations();
    let trace_every = config.trace_every.max(1);

    let mut trained = params.clone();
    if let Some(s) = survivors {
        s.apply(&mut trained)?;
    }
    let mut state = SgdState::new();
    let mut stream = BatchStream::new(data, config.batch_size, seed)?;
    let mut trace = vec![TracePoint {
        iteration: 0,
        lambda: schedule.current(),
        penalized_norm: selected_norm(&trained, &selector)?,
    }];
    for it in 1..=total {
        let (x, y) = stream.next().expect("batch stream is endless");
        let (_, mut grads) = loss_and_grads(network, &trained, survivors, x, &y)?;
        add_penalty_grad(&mut grads, &trained, &selector, schedule.current())?;
        sgd_step(
            &mut trained,
            &grads,
            &mut state,
            config.momentum,
            0.0,
            config.lr,
            survivors,
        )?;
        schedule.step();
        if it % trace_every == 0 || it == total {
            trace.push(TracePoint {
                iteration: it,
                lambda: schedule.current(),
                penalized_norm: selected_norm(&trained, &selector)?,
            });
        }
    }
    let mut pruned = trained.clone();
    mask.apply(&mut pruned)?;
    Ok(ExtrusionOutcome {
        trained,
        pruned,
        trace,
        iterations: total,
    })
}
