//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::params::Params;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FusionError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One descent step on `params` using `grads`. A zero learning rate
    /// leaves `params` untouched (moments still advance).
    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| FusionError::Config(format!("no parameter for gradient `{name}`")))?;
            p.expect_shape(g.shape(), name)?;
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| FusionError::Config(format!("no first moment for `{name}`")))?;
            for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| FusionError::Config(format!("no second moment for `{name}`")))?;
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            if c.lr == 0.0 {
                continue;
            }
            let m = self.m.get(name)?;
            let v = self.v.get(name)?;
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mh = mi / bc1;
                let vh = vi / bc2;
                *pi -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
