use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::network::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Learning-rate warm-up prefix: the first `epochs` epochs run at `lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Warmup {
    pub epochs: usize,
    pub lr: f64,
}

/// Piecewise-constant learning rate over epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// `(start_epoch, lr)`, strictly increasing, first start is 0.
    pub breakpoints: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<Warmup>,
}

impl LrSchedule {
    pub fn new(breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        let s = Self {
            breakpoints,
            warmup: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            breakpoints: vec![(0, lr)],
            warmup: None,
        }
    }

    pub fn with_warmup(mut self, warmup: Warmup) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.breakpoints.first() {
            Some((0, _)) => {}
            _ => {
                return Err(Error::Config(
                    "learning-rate schedule must start at epoch 0".into(),
                ))
            }
        }
        if self.breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "learning-rate breakpoints must be strictly increasing".into(),
            ));
        }
        let warm = self.warmup.iter().map(|w| w.lr);
        if self
            .breakpoints
            .iter()
            .map(|b| b.1)
            .chain(warm)
            .any(|lr| !(lr > 0.0 && lr.is_finite()))
        {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// LR of the last breakpoint at or before `epoch`; warm-up epochs use the
    /// warm-up rate. Breakpoint epochs are absolute, not shifted by warm-up.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if let Some(w) = self.warmup {
            if epoch < w.epochs {
                return w.lr;
            }
        }
        self.breakpoints
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(self.breakpoints[0].1, |b| b.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self, id: ParamId) -> Option<&[f64]> {
        self.velocity.get(&id).map(Vec::as_slice)
    }
}

/// One SGD step with momentum and coupled weight decay:
///
/// `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`.
///
/// With `freeze`, masked-out entries of the masked parameters (and their
/// velocity) are held at exactly zero.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<ParamId, Tensor>,
    state: &mut SgdState,
    momentum: f64,
    weight_decay: f64,
    lr: f64,
    freeze: Option<&Mask>,
) -> Result<()> {
    for (id, p) in params.iter_mut() {
        let g = grads
            .get(&id)
            .ok_or_else(|| Error::Usage(format!("missing gradient for {id}")))?;
        if g.len() != p.len() {
            return Err(Error::Dimension {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let v = state
            .velocity
            .entry(id)
            .or_insert_with(|| vec![0.0; p.len()]);
        let keep = freeze.and_then(|m| m.layer(id)).map(|l| l.bits());
        let data = p.data_mut();
        for i in 0..data.len() {
            if keep.is_some_and(|k| !k[i]) {
                v[i] = 0.0;
                data[i] = 0.0;
                continue;
            }
            v[i] = momentum * v[i] + g.data()[i] + weight_decay * data[i];
            data[i] -= lr * v[i];
        }
    }
    Ok(())
}
