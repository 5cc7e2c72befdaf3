use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::graph::Matrix;
use super::net::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// β = (0.5, 0.9), the usual choice for adversarial pairs.
    pub fn adversarial(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    pub fn standard(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, tensors: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (first, second) = tensors
            .into_iter()
            .map(|t| (Matrix::zeros(t.dim()), Matrix::zeros(t.dim())))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn for_params(config: AdamConfig, params: &Parameters) -> Self {
        Self::new(config, params.tensors())
    }

    /// Applies one update. All gradients are validated before any tensor is
    /// touched, so a rejected step leaves parameters and state unchanged.
    pub fn update<'a>(
        &mut self,
        tensors: impl IntoIterator<Item = &'a mut Matrix>,
        grads: &[Matrix],
    ) -> Result<()> {
        if grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} tensors",
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.first).enumerate() {
            if g.dim() != m.dim() {
                return Err(Error::Shape(format!(
                    "gradient {i} has shape {:?}",
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient {i}")));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut count = 0;
        for (((p, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
            count += 1;
        }
        debug_assert_eq!(count, grads.len());
        Ok(())
    }

    pub fn step_params(&mut self, params: &mut Parameters, grads: &[Matrix]) -> Result<()> {
        self.update(params.tensors_mut(), grads)
    }
}
