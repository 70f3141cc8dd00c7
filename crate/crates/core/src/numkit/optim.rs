use std::f64::consts::PI;

use super::mlp::{Mlp, Params};
use crate::error::{Error, Result};

/// `η₀·cos(7πk / 16K)`
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Argument("total steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Argument(format!(
            "step {step} exceeds total steps {total_steps}"
        )));
    }
    Ok(base_lr * (7.0 * PI * step as f64 / (16.0 * total_steps as f64)).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Cosine,
    Constant,
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `p ← p − ηv`.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    velocity: Params,
    momentum: f64,
    base_lr: f64,
    total_steps: usize,
    step: usize,
    schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &Params, momentum: f64, base_lr: f64, total_steps: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!("momentum {momentum} not in [0, 1)")));
        }
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate {base_lr} must be positive")));
        }
        if total_steps == 0 {
            return Err(Error::Argument("total steps must be positive".into()));
        }
        Ok(Self {
            velocity: params.zeros_like(),
            momentum,
            base_lr,
            total_steps,
            step: 0,
            schedule: LrSchedule::Cosine,
        })
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn velocity(&self) -> &Params {
        &self.velocity
    }

    /// Learning rate for the upcoming step.
    pub fn current_lr(&self) -> Result<f64> {
        match self.schedule {
            LrSchedule::Cosine => cosine_lr(self.step, self.total_steps, self.base_lr),
            LrSchedule::Constant => Ok(self.base_lr),
        }
    }

    pub fn apply(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        params.check_shape(grads, "gradient")?;
        params.check_shape(&self.velocity, "velocity")?;
        if self.step >= self.total_steps {
            return Err(Error::State(format!(
                "optimizer already took all {} steps",
                self.total_steps
            )));
        }
        let lr = self.current_lr()?;
        for ((p, v), g) in params
            .tensors_mut()
            .zip(self.velocity.tensors_mut())
            .zip(grads.tensors())
        {
            for ((p, v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(g.data())
            {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// One optimizer step on the live parameters of `model`.
pub fn sgd_step(model: &mut Mlp, grads: &Params, opt: &mut OptimizerState) -> Result<()> {
    opt.apply(model.params_mut(), grads)
}
