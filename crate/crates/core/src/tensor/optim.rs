//! SGD with momentum.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Optimizer hyperparameters: learning rate alpha and momentum beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    /// The training defaults: alpha 1e-3, beta 0.9.
    fn default() -> Self {
        OptimizerConfig { learning_rate: 1e-3, momentum: 0.9 }
    }
}

/// Holds one zero-initialized velocity buffer per parameter.
///
/// Per step: v <- beta*v + g; p <- p - alpha*v; then the gradient is cleared.
pub struct SgdMomentum<S: Scalar> {
    config: OptimizerConfig,
    names: Vec<String>,
    velocities: Vec<Vec<S>>,
}

impl<S: Scalar> SgdMomentum<S> {
    pub fn new(config: OptimizerConfig, params: &[(String, Tensor<S>)]) -> Result<SgdMomentum<S>> {
        config.validate()?;
        Ok(SgdMomentum {
            config,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            velocities: params.iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect(),
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// Apply one update. `params` must be the same list (same order, names and
    /// shapes) the optimizer was built with, with gradients populated.
    pub fn step(&mut self, params: &[(String, Tensor<S>)]) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Optimizer(format!(
                "parameter list changed: expected {} entries, got {}",
                self.names.len(),
                params.len()
            )));
        }
        let alpha = S::from_f64(self.config.learning_rate);
        let beta = S::from_f64(self.config.momentum);
        for (i, (name, p)) in params.iter().enumerate() {
            if name != &self.names[i] {
                return Err(Error::Optimizer(format!(
                    "parameter order changed: expected {:?} at index {i}, got {name:?}",
                    self.names[i]
                )));
            }
            let v = &mut self.velocities[i];
            if v.len() != p.numel() {
                return Err(Error::Optimizer(format!(
                    "velocity/parameter shape mismatch for {name:?}"
                )));
            }
            let grad_guard = p.grad_ref();
            let Some(g) = grad_guard.as_ref() else {
                return Err(Error::Optimizer(format!("parameter {name:?} has no gradient")));
            };
            {
                let mut data = p.data_mut();
                for ((pv, vv), gv) in data.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                    *vv = beta * *vv + *gv;
                    *pv = *pv - alpha * *vv;
                }
            }
            drop(grad_guard);
            p.clear_grad();
        }
        Ok(())
    }
}
