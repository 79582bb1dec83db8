use serde::{Deserialize, Serialize};

use super::model::{GnnModel, Gradients};
use super::NnError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the model parameters.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &GnnModel<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = model
            .params()
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with step counter `t + 1`. Non-finite gradients leave the
    /// model untouched and return [`NnError::TrainingDiverged`].
    pub fn step(&mut self, model: &mut GnnModel<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        self.step_at(model, grads, self.t + 1)
    }

    /// Update using an explicit 1-based step index for the bias correction.
    pub fn step_at(
        &mut self,
        model: &mut GnnModel<T>,
        grads: &Gradients<T>,
        t: u64,
    ) -> Result<(), NnError> {
        if t == 0 {
            return Err(NnError::Contract("adam step index starts at 1".into()));
        }
        if grads.shapes() != self.m.iter().map(Vec::len).collect::<Vec<_>>() {
            return Err(NnError::Contract("gradient shapes do not match model".into()));
        }
        if !grads.is_finite() {
            return Err(NnError::TrainingDiverged("non-finite gradient".into()));
        }
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = one - T::lit(c.beta1.powf(t as f64));
        let bc2 = one - T::lit(c.beta2.powf(t as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.t = t;
        if !model.is_finite() {
            return Err(NnError::TrainingDiverged("non-finite parameter".into()));
        }
        Ok(())
    }
}
