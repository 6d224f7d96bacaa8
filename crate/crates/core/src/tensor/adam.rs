//! Adam with bias correction, keyed by parameter name so optimizer state
//! survives checkpointing.

use std::collections::HashMap;

use super::scalar::{s, Scalar};
use super::{Parameter, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot<S> {
    m: Vec<S>,
    v: Vec<S>,
}

pub struct Adam<S: Scalar> {
    pub config: AdamConfig,
    slots: HashMap<String, Slot<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            slots: HashMap::new(),
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One update over (parameter, gradient) pairs. A non-finite gradient
    /// aborts before touching any parameter.
    pub fn step(&mut self, grads: &[(Parameter<S>, Vec<S>)]) -> Result<(), TensorError> {
        for (p, g) in grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TensorError::NonFinite(format!("gradient of {}", p.name())));
            }
        }
        self.t += 1;
        let b1 = s::<S>(self.config.beta1);
        let b2 = s::<S>(self.config.beta2);
        let one = S::one();
        let corr1 = s::<S>(1.0 - self.config.beta1.powi(self.t as i32));
        let corr2 = s::<S>(1.0 - self.config.beta2.powi(self.t as i32));
        let lr = s::<S>(self.config.lr);
        let eps = s::<S>(self.config.eps);
        for (p, g) in grads {
            let slot = self.slots.entry(p.name().to_string()).or_insert_with(|| Slot {
                m: vec![S::zero(); g.len()],
                v: vec![S::zero(); g.len()],
            });
            p.update(|i, w| {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (one - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * gi * gi;
                let mhat = slot.m[i] / corr1;
                let vhat = slot.v[i] / corr2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }

    /// Flatten optimizer state for checkpointing: (name, m, v) per slot.
    pub fn export_state(&self) -> Vec<(String, Vec<S>, Vec<S>)> {
        let mut out: Vec<_> = self
            .slots
            .iter()
            .map(|(k, s)| (k.clone(), s.m.clone(), s.v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn import_state(&mut self, t: u64, slots: Vec<(String, Vec<S>, Vec<S>)>) {
        self.t = t;
        self.slots = slots
            .into_iter()
            .map(|(k, m, v)| (k, Slot { m, v }))
            .collect();
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<S: Scalar>(grads: &mut [(Parameter<S>, Vec<S>)], max_norm: f64) {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for &x in g {
            let x = Scalar::as_f64(x);
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = s::<S>(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }
}
