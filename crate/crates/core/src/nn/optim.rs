//! SGD with momentum and the cosine-decay-restart schedule.

use crate::error::Error;
use crate::nn::graph::Graph;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub restart_period_epochs: usize,
    pub period_multiplier: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 0.1,
            lr_min: 1e-5,
            restart_period_epochs: 10,
            period_multiplier: 2.0,
            momentum: 0.9,
            batch_size: 32,
            epochs: 60,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min >= self.lr_max {
            return Err(Error::config("lr_min must be below lr_max"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.period_multiplier <= 0.0 {
            return Err(Error::config("period_multiplier must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }

    /// Learning rate at a global step, with restart periods given in epochs.
    pub fn lr_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let period0 = (self.restart_period_epochs * steps_per_epoch.max(1)).max(1);
        cosine_restart_lr(
            step,
            period0,
            self.period_multiplier,
            self.lr_max,
            self.lr_min,
        )
    }
}

/// Cosine decay with warm restarts.
///
/// Within a cycle of length `T`, `lr = lr_min + (lr_max - lr_min)/2 ·
/// (1 + cos(π t/T))`, so `t = 0` gives `lr_max` and `t = T` gives `lr_min`.
/// The step after a cycle end starts the next cycle at `t = 0` with the
/// period multiplied; both cycle endpoints are therefore realized exactly.
pub fn cosine_restart_lr(
    step: usize,
    period0: usize,
    multiplier: f64,
    lr_max: f64,
    lr_min: f64,
) -> f64 {
    let mut t = step as f64;
    let mut period = period0.max(1) as f64;
    while t > period {
        t -= period + 1.0;
        period *= multiplier;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t / period).cos())
}

/// One momentum-SGD update on a flat parameter vector:
/// `v ← momentum·v + g; p ← p − lr·v`.
pub fn sgd_update(params: &mut [f64], grads: &[f64], lr: f64, momentum: f64, velocity: &mut [f64]) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

/// Momentum state for every trainable tensor of a graph, in traversal order.
#[derive(Debug, Default)]
pub struct SgdMomentum {
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new() -> Self {
        SgdMomentum::default()
    }

    /// Applies one update across the whole graph. Rejects non-finite
    /// gradients before touching any parameter, reporting the step and lr
    /// for diagnosis.
    pub fn step(&mut self, graph: &mut Graph, lr: f64, momentum: f64, step_idx: usize) -> Result<()> {
        // Validation pass: nothing is mutated if any gradient is bad.
        let mut sizes = Vec::new();
        let mut bad = false;
        graph.visit_layers(&mut |l| {
            for (p, g) in l.trainable() {
                sizes.push(p.len());
                if g.iter().any(|v| !v.is_finite()) {
                    bad = true;
                }
            }
        });
        if bad {
            return Err(Error::NonFinite {
                what: "gradient".into(),
                step: step_idx,
                lr,
            });
        }
        if self.velocity.is_empty() {
            self.velocity = sizes.iter().map(|&n| vec![0.0; n]).collect();
        }
        if self.velocity.len() != sizes.len() {
            return Err(Error::config(
                "optimizer state does not match graph parameters",
            ));
        }

        let velocity = &mut self.velocity;
        let mut idx = 0;
        graph.visit_layers_mut(&mut |l| {
            for (p, g) in l.trainable_mut() {
                sgd_update(p, g, lr, momentum, &mut velocity[idx]);
                idx += 1;
            }
        });
        Ok(())
    }
}
