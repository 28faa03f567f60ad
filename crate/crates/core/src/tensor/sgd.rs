use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Classical (heavy-ball) momentum SGD with weight decay coupled into the
/// gradient:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub config: SgdConfig,
    velocity: Vec<Tensor4<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(config: SgdConfig, params: &[Tensor4<T>]) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.momentum) || config.weight_decay < 0.0 {
            return Err(Error::invalid("sgd", format!("bad hyperparameters {config:?}")));
        }
        Ok(Self {
            config,
            velocity: params.iter().map(|p| Tensor4::zeros(p.dims())).collect(),
        })
    }

    /// Resume from stored velocity slots.
    pub fn with_velocity(config: SgdConfig, velocity: Vec<Tensor4<T>>) -> Self {
        Self { config, velocity }
    }

    pub fn velocity(&self) -> &[Tensor4<T>] {
        &self.velocity
    }

    /// Update every parameter in place from its gradient.
    pub fn step(&mut self, params: &mut [Tensor4<T>], grads: &[Tensor4<T>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::invalid(
                "sgd_step",
                format!("{} params, {} grads, {} velocity slots", params.len(), grads.len(), self.velocity.len()),
            ));
        }
        let lr = T::lit(self.config.learning_rate);
        let mu = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.dims() != g.dims() || p.dims() != v.dims() {
                return Err(Error::shape("sgd_step", p.dims(), g.dims()));
            }
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi + wd * *pi;
                *pi = *pi - lr * *vi;
            }
        }
        Ok(())
    }
}
