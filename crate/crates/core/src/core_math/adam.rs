use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..AdamConfig::default() }
    }
}

/// Bias-corrected Adam. Moment buffers are created lazily on the first step
/// so the state can be built before the parameter shapes are known.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }

    /// Updates the moments and returns the raw step `Δθ` for each tensor
    /// without touching any parameter.
    pub fn direction(&mut self, grads: &[Matrix]) -> Result<Vec<Matrix>> {
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        if grads.len() != self.first.len() {
            return Err(Error::shape(format!(
                "{} gradient tensors for {} moment buffers",
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.first).enumerate() {
            if g.shape() != m.shape() {
                return Err(Error::shape(format!("gradient {i} is {:?}, moments are {:?}", g.shape(), m.shape())));
            }
        }

        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        let mut deltas = Vec::with_capacity(grads.len());
        for ((g, m), v) in grads.iter().zip(&mut self.first).zip(&mut self.second) {
            let mut d = Matrix::zeros(g.rows(), g.cols());
            for (((gi, mi), vi), di) in
                g.as_slice().iter().zip(m.as_mut_slice()).zip(v.as_mut_slice()).zip(d.as_mut_slice())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *di = -learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
            deltas.push(d);
        }
        Ok(deltas)
    }

    /// One Adam update applied in place.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Matrix]) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Matrix>,
    {
        let params: Vec<&mut Matrix> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} parameter tensors but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("parameter {i} is {:?}, gradient is {:?}", p.shape(), g.shape())));
            }
        }
        let deltas = self.direction(grads)?;
        for (p, d) in params.into_iter().zip(&deltas) {
            p.add_assign(d);
        }
        Ok(())
    }
}
