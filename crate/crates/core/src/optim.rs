//! Stochastic gradient descent with optional momentum and weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Param, ParamGrad};

/// Plain update `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::shape("sgd_step", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

/// Momentum SGD over a network's parameter list. Batch-norm running
/// statistics are not touched; only gamma/beta are trainable.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.momentum) || config.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!("bad optimizer config {config:?}")));
        }
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Option<ParamGrad>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("optimizer grads", params.len(), grads.len()));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.trainable_count()]).collect();
        }
        let SgdConfig { momentum, weight_decay, .. } = self.config;
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(grad) = grad else { continue };
            // (slot, gradient, decays) pairs in a fixed flattening order
            let mut slots: Vec<(&mut [f64], &[f64], bool)> = Vec::new();
            match (param, grad) {
                (Param::Conv(w), ParamGrad::Conv(g)) => {
                    slots.push((&mut w.weights, &g.weights, true));
                    if let (Some(b), Some(gb)) = (w.bias.as_mut(), g.bias.as_ref()) {
                        slots.push((b, gb, false));
                    }
                }
                (Param::Bn(p), ParamGrad::Bn { gamma, beta }) => {
                    slots.push((&mut p.gamma, gamma, false));
                    slots.push((&mut p.beta, beta, false));
                }
                _ => return Err(Error::InvalidArgument("gradient kind does not match parameter".into())),
            }
            let mut offset = 0;
            for (values, g, decays) in slots {
                let v = &mut vel[offset..offset + values.len()];
                for ((p, gi), vi) in values.iter_mut().zip(g).zip(v.iter_mut()) {
                    let mut step = *gi;
                    if decays {
                        step += weight_decay * *p;
                    }
                    *vi = momentum * *vi + step;
                    *p -= lr * *vi;
                }
                offset += values.len();
            }
        }
        Ok(())
    }
}
