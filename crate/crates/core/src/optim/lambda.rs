use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the growing penalty coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaParams {
    /// Starting value λ₀.
    pub lambda0: f64,
    /// Increment η added at each growth step.
    pub eta: f64,
    /// Upper bound λ_b.
    pub lambda_b: f64,
    /// Iterations between increments.
    pub v_eta: u64,
    /// Iterations run after λ reaches its bound.
    pub v_s: u64,
}

impl LambdaParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda0, self.eta, self.lambda_b]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lambda0 < 0.0 || self.lambda_b < self.lambda0 {
            return Err(Error::Config(format!(
                "need 0 ≤ lambda0 ≤ lambda_b, got {} and {}",
                self.lambda0, self.lambda_b
            )));
        }
        if self.lambda_b > self.lambda0 && (self.eta.is_nan() || self.eta <= 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.v_eta == 0 {
            return Err(Error::Config("v_eta must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of increments needed to go from λ₀ to λ_b.
    pub fn increments_to_bound(&self) -> u64 {
        if self.lambda_b <= self.lambda0 {
            return 0;
        }
        let q = (self.lambda_b - self.lambda0) / self.eta;
        let r = q.round();
        if (q - r).abs() <= 1e-9 * r.max(1.0) {
            r as u64
        } else {
            q.ceil() as u64
        }
    }

    /// Iterations spent ramping λ up to its bound.
    pub fn ramp_iterations(&self) -> u64 {
        self.increments_to_bound() * self.v_eta
    }

    /// Ramp plus stability iterations.
    pub fn total_iterations(&self) -> u64 {
        self.ramp_iterations() + self.v_s
    }
}

/// Running state of the coefficient:
///
/// `λ ← min(λ + η, λ_b)` every `v_eta` calls while `λ < λ_b`, constant after.
///
/// The value is kept as `origin + increments·η` rather than a running sum so
/// that it lands on `λ_b` after exactly the expected number of increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    params: LambdaParams,
    origin: f64,
    increments: u64,
    current: f64,
    step_counter: u64,
}

impl LambdaSchedule {
    pub fn new(params: LambdaParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            origin: params.lambda0,
            increments: 0,
            current: params.lambda0,
            step_counter: 0,
        })
    }

    /// State resumed at a given coefficient value (clamped into range).
    pub fn starting_at(params: LambdaParams, current: f64) -> Result<Self> {
        let mut s = Self::new(params)?;
        s.origin = current.clamp(params.lambda0, params.lambda_b);
        s.current = s.origin;
        Ok(s)
    }

    pub fn params(&self) -> &LambdaParams {
        &self.params
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn at_bound(&self) -> bool {
        self.current >= self.params.lambda_b
    }

    /// Advances one optimizer iteration.
    pub fn step(&mut self) {
        self.step_counter += 1;
        if !self.step_counter.is_multiple_of(self.params.v_eta) || self.at_bound() {
            return;
        }
        self.increments += 1;
        let next = self.origin + self.increments as f64 * self.params.eta;
        let bound = self.params.lambda_b;
        self.current = if next >= bound - 1e-12 * bound.abs().max(1.0) {
            bound
        } else {
            next
        };
    }
}

/// Transformation cost in equivalent epochs:
/// `((λ_b / η)·v_η + v_s) · N_b / N_D`.
///
/// Numerator products are formed before the single division.
pub fn extra_cost(params: &LambdaParams, batch_size: usize, dataset_size: usize) -> Result<f64> {
    if dataset_size == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    let ramp = if params.lambda_b == 0.0 {
        0.0
    } else {
        params.lambda_b / params.eta * params.v_eta as f64
    };
    Ok((ramp + params.v_s as f64) * batch_size as f64 / dataset_size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scale(v_eta: u64, v_s: u64) -> LambdaParams {
        LambdaParams {
            lambda0: 0.0,
            eta: 1e-4,
            lambda_b: 1.0,
            v_eta,
            v_s,
        }
    }

    #[test]
    fn first_increment() {
        let mut s = LambdaSchedule::new(full_scale(1, 0)).unwrap();
        s.step();
        assert_eq!(s.current(), 1e-4);
    }

    #[test]
    fn bound_is_absorbing() {
        let mut s = LambdaSchedule::starting_at(full_scale(1, 0), 1.0).unwrap();
        for _ in 0..1000 {
            s.step();
            assert_eq!(s.current(), 1.0);
        }
    }

    #[test]
    fn clamps_onto_bound() {
        let mut s = LambdaSchedule::starting_at(full_scale(1, 0), 0.99995).unwrap();
        s.step();
        assert_eq!(s.current(), 1.0);
    }

    #[test]
    fn increments_only_every_v_eta() {
        let mut s = LambdaSchedule::new(full_scale(5, 0)).unwrap();
        for _ in 0..4 {
            s.step();
            assert_eq!(s.current(), 0.0);
        }
        s.step();
        assert_eq!(s.current(), 1e-4);
    }

    #[test]
    fn ramp_length() {
        assert_eq!(full_scale(5, 40_000).ramp_iterations(), 50_000);
        assert_eq!(full_scale(5, 40_000).total_iterations(), 90_000);
        let p = LambdaParams {
            lambda0: 0.0,
            eta: 0.3,
            lambda_b: 1.0,
            v_eta: 2,
            v_s: 0,
        };
        assert_eq!(p.ramp_iterations(), 8);
        let mut s = LambdaSchedule::new(p).unwrap();
        for _ in 0..7 {
            s.step();
        }
        assert!(s.current() < 1.0);
        s.step();
        assert_eq!(s.current(), 1.0);
    }

    #[test]
    fn cost_formula() {
        assert_eq!(extra_cost(&full_scale(5, 40_000), 64, 50_000).unwrap(), 115.2);
        assert_eq!(extra_cost(&full_scale(1, 10_000), 64, 50_000).unwrap(), 25.6);
        let none = LambdaParams {
            lambda0: 0.0,
            eta: 1e-4,
            lambda_b: 0.0,
            v_eta: 1,
            v_s: 0,
        };
        assert_eq!(extra_cost(&none, 64, 50_000).unwrap(), 0.0);
        assert!(extra_cost(&none, 64, 0).is_err());
    }

    #[test]
    fn invalid_params() {
        let mut p = full_scale(5, 0);
        p.v_eta = 0;
        assert!(LambdaSchedule::new(p).is_err());
        let mut p = full_scale(5, 0);
        p.lambda_b = -1.0;
        assert!(LambdaSchedule::new(p).is_err());
    }
}
