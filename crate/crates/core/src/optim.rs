//! Gradient-ascent optimizers over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_delta() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { beta1: default_beta1(), beta2: default_beta2(), delta: default_delta() }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if let OptimizerConfig::Adam { beta1, beta2, delta } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return invalid(format!("adam betas must lie in [0, 1), got ({beta1}, {beta2})"));
            }
            if !(delta > 0.0) {
                return invalid(format!("adam delta must be positive, got {delta}"));
            }
        }
        Ok(())
    }

    pub fn build(&self, dim: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Sgd => Optimizer::Sgd,
            OptimizerConfig::Adam { beta1, beta2, delta } => Optimizer::Adam(Adam {
                beta1,
                beta2,
                delta,
                step: 0,
                first: vec![0.0; dim],
                second: vec![0.0; dim],
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    delta: f64,
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    /// Moves `params` uphill along `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], learning_rate: f64) {
        debug_assert_eq!(params.len(), grad.len());
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += learning_rate * g;
                }
            }
            Optimizer::Adam(a) => {
                a.step += 1;
                let c1 = 1.0 - a.beta1.powi(a.step);
                let c2 = 1.0 - a.beta2.powi(a.step);
                for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                    a.first[i] = a.beta1 * a.first[i] + (1.0 - a.beta1) * g;
                    a.second[i] = a.beta2 * a.second[i] + (1.0 - a.beta2) * g * g;
                    let m_hat = a.first[i] / c1;
                    let v_hat = a.second[i] / c2;
                    *p += learning_rate * m_hat / (v_hat.sqrt() + a.delta);
                }
            }
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}
