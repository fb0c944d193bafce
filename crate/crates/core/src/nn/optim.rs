use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter tensor,
/// allocated on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    steps: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// untouched; callers zero them.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
                .collect();
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|(m, p)| m.0.len() != p.value.len())
        {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for p in params.iter_mut() {
                    let Param { value, grad, .. } = &mut **p;
                    for (x, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *x -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
                    let Param { value, grad, .. } = &mut **p;
                    for (((x, &g), m), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let (mh, vh) = (*m / c1, *v / c2);
                        *x -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: &[f64], grads: &[f64]) -> Param {
        let shape = [values.len(), 1, 1, 1];
        let mut p = Param::new("p", Tensor::from_vec(shape, values.to_vec()).unwrap());
        p.grad = Tensor::from_vec(shape, grads.to_vec()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for cfg in [OptimizerConfig::default(), OptimizerConfig::Sgd { lr: 0.1 }] {
            let mut p = param(&[1.0, -2.0], &[0.0, 0.0]);
            let mut opt = Optimizer::new(cfg);
            for _ in 0..3 {
                opt.step(&mut [&mut p]).unwrap();
            }
            assert_eq!(p.value.data(), &[1.0, -2.0]);
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = param(&[1.0], &[0.5]);
        Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 }).step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g| + eps).
        for g in [1.0, 1e-3, 250.0] {
            let mut p = param(&[0.0], &[g]);
            Optimizer::new(OptimizerConfig::default()).step(&mut [&mut p]).unwrap();
            let expected = 1e-3 * g / (g + 1e-8);
            assert!((-p.value.data()[0] - expected).abs() < 1e-15);
        }
        let mut p = param(&[0.0], &[1.0]);
        Optimizer::new(OptimizerConfig::default()).step(&mut [&mut p]).unwrap();
        assert!((-p.value.data()[0] - 1e-3 * (1.0 - 1e-8)).abs() < 1e-15);
    }
}
