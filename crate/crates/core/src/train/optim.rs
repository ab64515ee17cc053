use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam moments and step count. Moments are indexed like the store's
/// parameters; buffers keep empty slots.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<T: Scalar>(store: &ParamStore<T>, cfg: &AdamConfig) -> Self {
        let sizes: Vec<usize> = store
            .entries()
            .map(|(_, e)| if e.trainable() { e.value().len() } else { 0 })
            .collect();
        OptimizerState {
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter; parameters
/// absent from `grads` see a zero gradient.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Gradients<T>, state: &mut OptimizerState) -> Result<()> {
    let by_id: Vec<(usize, &[T])> = grads.params().into_iter().map(|(id, g)| (id.0, g)).collect();
    for (i, g) in &by_id {
        if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
            let name = store.entries().nth(*i).map(|(_, e)| e.name().to_string()).unwrap_or_default();
            return Err(Error::Numerical(format!("non-finite gradient in {name} at element {bad}")));
        }
    }
    adam_apply(store, state, |i| by_id.iter().find(|(j, _)| *j == i).map(|(_, g)| *g))
}

pub(crate) fn adam_apply<'a, T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut OptimizerState,
    grad: impl Fn(usize) -> Option<&'a [T]>,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Mismatch(format!(
            "optimizer holds {} slots for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        if state.m[i].is_empty() {
            continue;
        }
        let g = grad(i);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.get_mut(id);
        if p.len() != m.len() {
            return Err(Error::Mismatch(format!("optimizer slot {i} holds {} values for {}", m.len(), p.len())));
        }
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.map_or(0.0, |g| g[k].as_f64());
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let step = state.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + state.epsilon);
            *w = T::of(w.as_f64() - step);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            patience: 3,
            factor: 0.5,
            floor: 1e-5,
        }
    }
}

/// Shrinks the learning rate after `patience` epochs without a new best
/// (lowest) validation metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub best: Option<f64>,
    pub since_improvement: usize,
    /// Set once a patience breach happens with the rate already at the floor.
    pub exhausted: bool,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        if config.patience == 0 || !(0.0 < config.factor && config.factor < 1.0) || !(config.floor > 0.0) {
            return Err(Error::Config(format!("invalid scheduler settings {config:?}")));
        }
        Ok(PlateauScheduler {
            config,
            best: None,
            since_improvement: 0,
            exhausted: false,
        })
    }

    /// Record one epoch's metric and return the learning rate for the next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.since_improvement = 0;
            return lr;
        }
        self.since_improvement += 1;
        if self.since_improvement < self.config.patience {
            return lr;
        }
        self.since_improvement = 0;
        if lr <= self.config.floor {
            self.exhausted = true;
        }
        (lr * self.config.factor).max(self.config.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_halves_every_third_bad_epoch() {
        let mut s = PlateauScheduler::new(SchedulerConfig::default()).unwrap();
        let mut lr = 3e-3;
        lr = s.step(1.0, lr);
        let mut seen = Vec::new();
        for k in 1..=7 {
            lr = s.step(1.0 + k as f64, lr);
            seen.push(lr);
        }
        assert_eq!(seen, vec![3e-3, 3e-3, 1.5e-3, 1.5e-3, 1.5e-3, 7.5e-4, 7.5e-4]);
    }

    #[test]
    fn plateau_floor_and_exhaustion() {
        let mut s = PlateauScheduler::new(SchedulerConfig::default()).unwrap();
        let mut lr = 3e-3;
        for k in 0..200 {
            lr = s.step(k as f64, lr);
            assert!(lr >= 1e-5);
        }
        assert_eq!(lr, 1e-5);
        assert!(s.exhausted);
    }
}
