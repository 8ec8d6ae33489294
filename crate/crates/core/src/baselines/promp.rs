//! Classic probabilistic movement primitives.
//!
//! Each output dimension is a weighted sum of normalized Gaussian bases over
//! a linear phase. Per-demo weights come from ridge regression, and the
//! population of weight vectors is summarized by its mean and covariance.
//! Low-dimensional context channels can be appended to the weight vector so
//! that conditioning on a context is ordinary Gaussian conditioning too.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Demonstration};
use crate::error::{Error, Result};
use crate::model::{Evidence, ViaPoint};
use crate::phase::PhaseMode;

pub const DEFAULT_BASES: usize = 20;
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrompConfig {
    pub bases: usize,
    pub ridge: f64,
    /// Observation noise used when none is given to conditioning.
    pub sigma_obs: f64,
    /// Context channels appended to the weight vector.
    pub channels: Vec<String>,
}

impl Default for PrompConfig {
    fn default() -> Self {
        PrompConfig { bases: DEFAULT_BASES, ridge: DEFAULT_RIDGE, sigma_obs: 0.0, channels: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrompModel {
    pub bases: usize,
    pub centers: Vec<f64>,
    pub width: f64,
    pub config_dim: usize,
    pub sigma_obs: f64,
    /// `(name, width)` of each appended context block, in order.
    pub channels: Vec<(String, usize)>,
    /// Stacked `[w₁; …; w_d; c₁; …]`.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Normalized Gaussian features at phase `x`.
pub fn basis(centers: &[f64], width: f64, x: f64) -> Vec<f64> {
    let raw: Vec<f64> = centers.iter().map(|c| (-(x - c) * (x - c) / (2.0 * width * width)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn linear_x(phase: &[f64]) -> Result<f64> {
    match phase {
        [x] if (0.0..=1.0).contains(x) => Ok(*x),
        _ => Err(Error::arg(format!("ProMP takes a linear phase in [0, 1], got {phase:?}"))),
    }
}

fn demo_weights(demo: &Demonstration, centers: &[f64], width: f64, ridge: f64) -> Result<Vec<f64>> {
    let k = centers.len();
    let n = demo.points.len();
    let d = demo.config_dim();
    let mut phi = DMatrix::zeros(n, k);
    for (r, x) in demo.phases(PhaseMode::Linear)?.iter().enumerate() {
        for (c, v) in basis(centers, width, x[0]).into_iter().enumerate() {
            phi[(r, c)] = v;
        }
    }
    let gram = phi.transpose() * &phi + DMatrix::identity(k, k) * ridge;
    let chol =
        gram.cholesky().ok_or_else(|| Error::Numeric { location: format!("ridge system of demo {}", demo.id) })?;
    let mut w = Vec::with_capacity(k * d);
    for j in 0..d {
        let y = DVector::from_iterator(n, demo.points.iter().map(|p| p.y[j]));
        let sol = chol.solve(&(phi.transpose() * y));
        w.extend(sol.iter());
    }
    Ok(w)
}

pub fn promp_fit(dataset: &Dataset, config: &PrompConfig) -> Result<PrompModel> {
    dataset.validate()?;
    if dataset.phase_mode != PhaseMode::Linear {
        return Err(Error::arg("ProMP supports linear phase only"));
    }
    if dataset.demos.len() < 2 {
        return Err(Error::arg("ProMP needs at least two demonstrations"));
    }
    if config.bases < 2 || !(config.ridge >= 0.0) || !(config.sigma_obs >= 0.0) {
        return Err(Error::arg("ProMP needs at least two bases and non-negative ridge and noise"));
    }
    let k = config.bases;
    let centers: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let width = 1.0 / k as f64;
    let widths = dataset.channels();
    let channels = config
        .channels
        .iter()
        .map(|c| widths.get(c).map(|&w| (c.clone(), w)).ok_or_else(|| Error::Channel(c.clone())))
        .collect::<Result<Vec<_>>>()?;
    let dim = k * dataset.config_dim + channels.iter().map(|c| c.1).sum::<usize>();

    let vectors = dataset
        .demos
        .iter()
        .map(|d| {
            let mut v = demo_weights(d, &centers, width, config.ridge)?;
            for (c, _) in &channels {
                v.extend_from_slice(&d.contexts[c]);
            }
            Ok(DVector::from_vec(v))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = vectors.len() as f64;
    let mean = vectors.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in &vectors {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    cov /= n;
    Ok(PrompModel {
        bases: k,
        centers,
        width,
        config_dim: dataset.config_dim,
        sigma_obs: config.sigma_obs,
        channels,
        mean,
        cov,
    })
}

impl PrompModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `d × dim` observation matrix of the configuration at phase `x`.
    pub fn observation_matrix(&self, x: f64) -> DMatrix<f64> {
        let k = self.bases;
        let b = basis(&self.centers, self.width, x);
        let mut h = DMatrix::zeros(self.config_dim, self.dim());
        for j in 0..self.config_dim {
            for (i, v) in b.iter().enumerate() {
                h[(j, j * k + i)] = *v;
            }
        }
        h
    }

    fn context_matrix(&self, channel: &str) -> Result<DMatrix<f64>> {
        let mut offset = self.bases * self.config_dim;
        for (name, w) in &self.channels {
            if name == channel {
                let mut h = DMatrix::zeros(*w, self.dim());
                for i in 0..*w {
                    h[(i, offset + i)] = 1.0;
                }
                return Ok(h);
            }
            offset += w;
        }
        Err(Error::Channel(channel.to_string()))
    }

    /// Mean configuration at a linear phase.
    pub fn predict(&self, phase: &[f64]) -> Result<Vec<f64>> {
        let h = self.observation_matrix(linear_x(phase)?);
        Ok((h * &self.mean).iter().copied().collect())
    }

    /// Configuration covariance at a linear phase, including observation noise.
    pub fn predict_cov(&self, phase: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.observation_matrix(linear_x(phase)?);
        let s2 = self.sigma_obs * self.sigma_obs;
        Ok(&h * &self.cov * h.transpose() + DMatrix::identity(self.config_dim, self.config_dim) * s2)
    }

    /// One Gaussian update with observation `y = H v + noise`.
    fn update(&mut self, h: &DMatrix<f64>, y: &[f64], sigma: f64) -> Result<()> {
        let r = h.nrows();
        let s = h * &self.cov * h.transpose() + DMatrix::identity(r, r) * (sigma * sigma);
        let s_inv = match s.clone().cholesky() {
            Some(c) if sigma > 0.0 => c.inverse(),
            _ => s
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Numeric { location: format!("ProMP innovation inverse: {e}") })?,
        };
        let gain = &self.cov * h.transpose() * s_inv;
        let innov = DVector::from_column_slice(y) - h * &self.mean;
        self.mean += &gain * innov;
        let cov = &self.cov - &gain * h * &self.cov;
        self.cov = (&cov + cov.transpose()) * 0.5;
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: "ProMP conditioning".into() });
        }
        Ok(())
    }

    /// Posterior after observing via-points with noise `sigma_cond` (zero
    /// allowed). Observations are applied one after another.
    pub fn condition(&self, via: &[ViaPoint], sigma_cond: f64) -> Result<PrompModel> {
        if !(sigma_cond >= 0.0) {
            return Err(Error::arg("conditioning noise must be non-negative"));
        }
        let mut post = self.clone();
        for v in via {
            if v.y.len() != self.config_dim {
                return Err(Error::shape("via-point dimension does not match the model"));
            }
            let h = self.observation_matrix(linear_x(&v.phase)?);
            post.update(&h, &v.y, sigma_cond)?;
        }
        Ok(post)
    }

    /// Conditions on via-points and on any appended context channels.
    pub fn condition_evidence(&self, ev: &Evidence, sigma_cond: f64) -> Result<PrompModel> {
        let mut post = self.condition(&ev.via_points, sigma_cond)?;
        for (name, c) in &ev.contexts {
            let h = self.context_matrix(name)?;
            if c.len() != h.nrows() {
                return Err(Error::shape(format!("context `{name}` has the wrong width")));
            }
            post.update(&h, c, sigma_cond)?;
        }
        Ok(post)
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.iter().any(|(c, _)| c == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrajPoint;
    use std::collections::BTreeMap;

    fn in_span_dataset(k: usize, seed_weights: &[Vec<f64>]) -> Dataset {
        let centers: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        let width = 1.0 / k as f64;
        let demos = seed_weights
            .iter()
            .enumerate()
            .map(|(i, w)| Demonstration {
                id: format!("d{i}"),
                duration: 1.0,
                points: (0..40)
                    .map(|p| {
                        let t = p as f64 / 39.0;
                        let y = basis(&centers, width, t).iter().zip(w).map(|(a, b)| a * b).sum();
                        TrajPoint { t, y: vec![y] }
                    })
                    .collect(),
                contexts: BTreeMap::new(),
            })
            .collect();
        Dataset { phase_mode: PhaseMode::Linear, config_dim: 1, demos }
    }

    #[test]
    fn identical_demos_have_no_spread() {
        let ds = in_span_dataset(5, &vec![vec![0.3, -1.0, 0.5, 2.0, 0.1]; 4]);
        let m = promp_fit(&ds, &PrompConfig { bases: 5, ..PrompConfig::default() }).unwrap();
        assert!(m.cov.norm() < 1e-8);
    }

    #[test]
    fn representable_trajectories_reconstruct() {
        let ws = vec![vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![1.0, 0.5, 0.0, -0.5, -1.0]];
        let ds = in_span_dataset(5, &ws);
        let m = promp_fit(&ds, &PrompConfig { bases: 5, ..PrompConfig::default() }).unwrap();
        let mean_w: Vec<f64> = (0..5).map(|i| (ws[0][i] + ws[1][i]) / 2.0).collect();
        for (a, b) in m.mean.iter().zip(&mean_w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // The mean trajectory is the decode of the mean weights.
        let x = 0.37;
        let direct: f64 = basis(&m.centers, m.width, x).iter().zip(m.mean.iter()).map(|(a, b)| a * b).sum();
        assert!((m.predict(&[x]).unwrap()[0] - direct).abs() < 1e-14);
    }

    #[test]
    fn rejects_rhythmic_phase() {
        let mut ds = in_span_dataset(5, &[vec![0.0; 5], vec![1.0; 5]]);
        ds.phase_mode = PhaseMode::Rhythmic;
        assert!(promp_fit(&ds, &PrompConfig::default()).is_err());
    }
}
