//! AdamW with linear warmup followed by cosine annealing.

use serde::{Deserialize, Serialize};

use super::params::{Group, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Learning-rate schedule measured in (fractional) epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            warmup_epochs: 5.0,
            total_epochs: 100.0,
        }
    }
}

impl LrSchedule {
    /// Linear ramp from 0 over the warmup, then half-cosine down to 0 at
    /// `total_epochs`; 0 afterwards.
    pub fn at_epoch(&self, epoch: f64) -> f64 {
        if epoch <= 0.0 {
            return 0.0;
        }
        if epoch < self.warmup_epochs {
            return self.base_lr * epoch / self.warmup_epochs;
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span <= 0.0 || epoch >= self.total_epochs {
            return if epoch >= self.total_epochs { 0.0 } else { self.base_lr };
        }
        let progress = (epoch - self.warmup_epochs) / span;
        (self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Optimizer state: moment estimates per parameter and step counters.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: OptimConfig,
    steps_per_epoch: usize,
    /// Global step counter; drives the learning-rate schedule.
    pub step: u64,
    group_steps: Vec<u64>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: OptimConfig, params: &ParamStore<T>, steps_per_epoch: usize) -> Self {
        let first: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            steps_per_epoch: steps_per_epoch.max(1),
            step: 0,
            group_steps: vec![0; first.len()],
            second: first.clone(),
            first,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config
            .schedule
            .at_epoch(self.step as f64 / self.steps_per_epoch as f64)
    }

    /// Applies one decoupled-weight-decay update to every group accepted by
    /// `update`, then advances the step counter. Returns the learning rate used.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        update: impl Fn(Group) -> bool,
    ) -> Result<f64> {
        params.check_finite_grads()?;
        let lr = self.current_lr();
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let eps = T::lit(c.eps);
        let lr_t = T::lit(lr);
        let decay = T::one() - T::lit(lr * c.weight_decay);
        for group in Group::ALL {
            if !update(group) {
                continue;
            }
            let gi = group.index();
            self.group_steps[gi] += 1;
            let t = self.group_steps[gi] as i32;
            let bc1 = T::one() - b1.powi(t);
            let bc2 = T::one() - b2.powi(t);
            let p = params.get_mut(group);
            let (m, v) = (&mut self.first[gi], &mut self.second[gi]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.value[i] = p.value[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            if p.value.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{} after update", group.name())));
            }
        }
        self.step += 1;
        Ok(lr)
    }
}
