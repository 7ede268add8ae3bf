//! First-order stochastic optimizers used by the sampler.

use ndarray::Array1;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        eps_hat: f64,
    },
    Sgd {
        momentum: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub steps: usize,
}

impl OptimizerConfig {
    /// Adam with the momentum pair (0.9, 0.99) and eps-hat 1e-8.
    pub fn adam(lr: f64, steps: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.99,
                eps_hat: 1e-8,
            },
            lr,
            steps,
        }
    }

    pub fn sgd(lr: f64, momentum: f64, steps: usize) -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum },
            lr,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("optimizer needs steps >= 1".into()));
        }
        match self.kind {
            OptimizerKind::Adam {
                beta1,
                beta2,
                eps_hat,
            } => {
                if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "adam betas must lie in (0,1), got ({beta1}, {beta2})"
                    )));
                }
                if !(eps_hat > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "adam eps_hat must be positive, got {eps_hat}"
                    )));
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidParameter(format!(
                        "momentum must lie in [0,1), got {momentum}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mutable per-parameter optimizer state.
pub(crate) enum OptimizerState {
    Adam {
        beta1: f64,
        beta2: f64,
        eps_hat: f64,
        m: Array1<f64>,
        v: Array1<f64>,
        k: u32,
    },
    Sgd {
        momentum: f64,
        buf: Array1<f64>,
    },
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, dim: usize) -> Self {
        match config.kind {
            OptimizerKind::Adam {
                beta1,
                beta2,
                eps_hat,
            } => OptimizerState::Adam {
                beta1,
                beta2,
                eps_hat,
                m: Array1::zeros(dim),
                v: Array1::zeros(dim),
                k: 0,
            },
            OptimizerKind::Sgd { momentum } => OptimizerState::Sgd {
                momentum,
                buf: Array1::zeros(dim),
            },
        }
    }

    pub fn step(&mut self, lr: f64, param: &mut Array1<f64>, grad: &Array1<f64>) {
        match self {
            OptimizerState::Adam {
                beta1,
                beta2,
                eps_hat,
                m,
                v,
                k,
            } => {
                *k += 1;
                let b1 = *beta1;
                let b2 = *beta2;
                // bias-corrected first and second moment estimates
                let c1 = 1.0 - b1.powi(*k as i32);
                let c2 = 1.0 - b2.powi(*k as i32);
                for i in 0..param.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    param[i] -= lr * mhat / (vhat.sqrt() + *eps_hat);
                }
            }
            OptimizerState::Sgd { momentum, buf } => {
                for i in 0..param.len() {
                    buf[i] = *momentum * buf[i] + grad[i];
                    param[i] -= lr * buf[i];
                }
            }
        }
    }
}
