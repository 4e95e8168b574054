use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::params::ParamStore;

/// Learning rate as a function of the 1-based step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    /// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`
    Noam { d_model: usize, warmup: usize, scale: f64 },
    Constant { lr: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        match *self {
            LrSchedule::Noam { d_model, warmup, scale } => {
                scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
            }
            LrSchedule::Constant { lr } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Noam { d_model, warmup, scale } => d_model > 0 && warmup > 0 && scale > 0.0,
            LrSchedule::Constant { lr } => lr > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(contract_err!("learning-rate schedule {self:?} is not strictly positive"))
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Adam { beta1: 0.9, beta2: 0.98, eps: 1e-9, schedule, step: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<f64> {
        for (name, p) in params.iter() {
            let g = grads.get(name).ok_or_else(|| contract_err!("no gradient for parameter `{name}`"))?;
            if g.len() != p.numel() {
                return Err(dim_err!("gradient for `{name}` has {} entries, parameter has {}", g.len(), p.numel()));
            }
        }
        self.step += 1;
        let lr = self.schedule.at(self.step);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(lr)
    }
}
