use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core_math::{Matrix, MlpParams};
use crate::error::{Error, Result};

/// Output noise in normalized configuration units.
pub const DEFAULT_SIGMA_Y: f64 = 0.05;

/// Mean network over `[z, phase]` with a fixed scalar output noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub net: MlpParams,
    pub sigma_y: f64,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        phase_width: usize,
        config_dim: usize,
        hidden: usize,
        sigma_y: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma_y > 0.0) || !sigma_y.is_finite() {
            return Err(Error::arg(format!("sigma_y must be positive, got {sigma_y}")));
        }
        Ok(Decoder { net: MlpParams::new(&[latent_dim + phase_width, hidden, hidden, config_dim], rng)?, sigma_y })
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn decode(&self, z: &[f64], phase: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&[z, phase].concat())
    }

    /// Row `i` of the output decodes `zs[i]` at `phases[i]`.
    pub fn decode_batch(&self, zs: &[Vec<f64>], phases: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if zs.len() != phases.len() {
            return Err(Error::shape(format!("{} latents for {} phases", zs.len(), phases.len())));
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let width = self.input_dim();
        let mut x = Matrix::zeros(zs.len(), width);
        for (r, (z, p)) in zs.iter().zip(phases).enumerate() {
            if z.len() + p.len() != width {
                return Err(Error::shape(format!(
                    "decoder input width {width}, got latent {} + phase {}",
                    z.len(),
                    p.len()
                )));
            }
            let row = x.row_mut(r);
            row[..z.len()].copy_from_slice(z);
            row[z.len()..].copy_from_slice(p);
        }
        let y = self.net.forward_batch(&x)?;
        Ok((0..y.rows()).map(|r| y.row(r).to_vec()).collect())
    }

    /// `n·d·ln(σ_y √(2π))`, the normalization of `n` Gaussian points.
    pub fn log_norm(&self, n_values: usize) -> f64 {
        n_values as f64 * (self.sigma_y * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }
}
