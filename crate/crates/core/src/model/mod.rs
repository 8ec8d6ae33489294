//! The deep movement-primitive model and its operations.
//!
//! A [`DeepProMP`] owns an [`EncoderBank`] and a [`Decoder`]. Conditioning
//! information is passed as [`Evidence`]; every encoded item becomes one
//! Gaussian message and the messages are fused with the standard prior.

mod decoder;
mod elbo;
mod encoder;
mod refine;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core_math::Matrix;
use crate::data::{Conditioning, Demonstration};
use crate::error::{Error, Result};
use crate::latent_bayes::{aggregate_weighted, blend, sample, standard_prior, DiagGaussian, LatentObservation, Source};
use crate::phase::PhaseMode;

pub use decoder::{Decoder, DEFAULT_SIGMA_Y};
pub use elbo::{elbo_loss, elbo_value, ElboBatch, ElboExample, KlMode};
pub use encoder::{EncoderBank, EncoderNets};
pub use refine::{refine_objective, refine_viapoints, RefineConfig, RefineObjective, RefineResult};
pub use train::{train, train_with, TrainedModel, TrainingConfig};

/// A conditioning via-point in phase coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub phase: Vec<f64>,
    pub y: Vec<f64>,
}

/// Via-points and context observations to condition on. Either part may be
/// empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub via_points: Vec<ViaPoint>,
    pub contexts: Vec<(String, Vec<f64>)>,
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        self.via_points.is_empty() && self.contexts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.via_points.len() + self.contexts.len()
    }

    /// Collects the selected points and channels of a demonstration.
    pub fn from_demo(demo: &Demonstration, mode: PhaseMode, sel: &Conditioning) -> Result<Self> {
        let spec = demo.phase_spec(mode)?;
        let via_points = sel
            .via_points
            .iter()
            .map(|&i| {
                let p = demo.points.get(i).ok_or_else(|| Error::arg(format!("point index {i} out of range")))?;
                Ok(ViaPoint { phase: spec.phase(p.t)?, y: p.y.clone() })
            })
            .collect::<Result<_>>()?;
        let contexts = sel
            .channels
            .iter()
            .map(|c| demo.contexts.get(c).map(|v| (c.clone(), v.clone())).ok_or_else(|| Error::Channel(c.clone())))
            .collect::<Result<_>>()?;
        Ok(Evidence { via_points, contexts })
    }
}

/// Posterior over the latent together with the phase mode it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPosterior {
    pub q: DiagGaussian,
    pub phase_mode: PhaseMode,
}

/// Monte-Carlo summary of a conditioned trajectory distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDistribution {
    pub mean: Vec<Vec<f64>>,
    /// Per-point, per-dimension variance of the decoded means across samples.
    pub var: Vec<Vec<f64>>,
    pub posterior: MotionPosterior,
}

/// Output of [`DeepProMP::blend_trajectories`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedTrajectory {
    pub y: Vec<Vec<f64>>,
    /// The latent used at each timestamp.
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepProMP {
    pub phase_mode: PhaseMode,
    pub config_dim: usize,
    pub encoders: EncoderBank,
    pub decoder: Decoder,
}

impl DeepProMP {
    pub fn new<R: Rng + ?Sized>(
        phase_mode: PhaseMode,
        config_dim: usize,
        channels: &BTreeMap<String, usize>,
        latent_dim: usize,
        hidden: usize,
        sigma_y: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if config_dim == 0 || latent_dim == 0 || hidden == 0 {
            return Err(Error::arg("dimensions must be positive"));
        }
        let pw = phase_mode.width();
        let encoders = EncoderBank::new(pw + config_dim, channels, hidden, latent_dim, rng)?;
        let decoder = Decoder::new(latent_dim, pw, config_dim, hidden, sigma_y, rng)?;
        Ok(DeepProMP { phase_mode, config_dim, encoders, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoders.latent_dim()
    }

    pub fn channels(&self) -> BTreeMap<String, usize> {
        self.encoders.channels.iter().map(|(k, n)| (k.clone(), n.input_dim())).collect()
    }

    /// Parameter tensors: encoders first, then the decoder.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.encoders.params();
        p.extend(self.decoder.net.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.encoders.params_mut();
        p.extend(self.decoder.net.params_mut());
        p
    }

    pub fn tensor_count(&self) -> usize {
        self.encoders.tensor_count() + self.decoder.net.tensor_count()
    }

    pub fn prior(&self) -> MotionPosterior {
        MotionPosterior {
            q: standard_prior(self.latent_dim()).expect("latent dim is positive"),
            phase_mode: self.phase_mode,
        }
    }

    fn check_phase(&self, phase: &[f64]) -> Result<()> {
        if phase.len() != self.phase_mode.width() {
            return Err(Error::shape(format!(
                "{} phase takes {} values, got {}",
                self.phase_mode.as_str(),
                self.phase_mode.width(),
                phase.len()
            )));
        }
        Ok(())
    }

    pub fn encode_viapoint(&self, v: &ViaPoint) -> Result<LatentObservation> {
        self.check_phase(&v.phase)?;
        if v.y.len() != self.config_dim {
            return Err(Error::shape(format!(
                "configuration has {} entries, model expects {}",
                v.y.len(),
                self.config_dim
            )));
        }
        let row = Matrix::row_vector(&[v.phase.as_slice(), v.y.as_slice()].concat());
        Ok(self.encoders.encode_rows(&Source::ViaPoint, &row)?.remove(0))
    }

    pub fn encode_context(&self, channel: &str, c: &[f64]) -> Result<LatentObservation> {
        let row = Matrix::row_vector(c);
        Ok(self.encoders.encode_rows(&Source::Context(channel.to_string()), &row)?.remove(0))
    }

    /// Encodes every item of `ev`: via-points first, then contexts.
    pub fn encode(&self, ev: &Evidence) -> Result<Vec<LatentObservation>> {
        let mut obs = Vec::with_capacity(ev.len());
        if !ev.via_points.is_empty() {
            let pw = self.phase_mode.width();
            let mut rows = Matrix::zeros(ev.via_points.len(), pw + self.config_dim);
            for (r, v) in ev.via_points.iter().enumerate() {
                self.check_phase(&v.phase)?;
                if v.y.len() != self.config_dim {
                    return Err(Error::shape(format!(
                        "via-point {r} has {} entries, model expects {}",
                        v.y.len(),
                        self.config_dim
                    )));
                }
                rows.row_mut(r)[..pw].copy_from_slice(&v.phase);
                rows.row_mut(r)[pw..].copy_from_slice(&v.y);
            }
            obs.extend(self.encoders.encode_rows(&Source::ViaPoint, &rows)?);
        }
        for (name, c) in &ev.contexts {
            obs.push(self.encode_context(name, c)?);
        }
        Ok(obs)
    }

    /// Weighted Bayesian aggregation of the evidence with the standard prior.
    /// `weights` follow the order of [`DeepProMP::encode`].
    pub fn posterior(&self, ev: &Evidence, weights: Option<&[f64]>) -> Result<MotionPosterior> {
        let obs = self.encode(ev)?;
        let ones;
        let w = match weights {
            Some(w) => w,
            None => {
                ones = vec![1.0; obs.len()];
                &ones
            }
        };
        let q = aggregate_weighted(&standard_prior(self.latent_dim())?, &obs, w)?;
        Ok(MotionPosterior { q, phase_mode: self.phase_mode })
    }

    pub fn decode(&self, z: &[f64], phase: &[f64]) -> Result<Vec<f64>> {
        self.check_phase(phase)?;
        self.decoder.decode(z, phase)
    }

    /// Decodes one latent at many phases.
    pub fn decode_path(&self, z: &[f64], phases: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for p in phases {
            self.check_phase(p)?;
        }
        let zs = vec![z.to_vec(); phases.len()];
        self.decoder.decode_batch(&zs, phases)
    }

    fn check_mode(&self, post: &MotionPosterior) -> Result<()> {
        if post.phase_mode != self.phase_mode || post.q.dim() != self.latent_dim() {
            return Err(Error::arg("posterior was built for a different model"));
        }
        Ok(())
    }

    /// Draws one latent with `noise` and decodes it at every phase.
    pub fn generate(&self, post: &MotionPosterior, phases: &[Vec<f64>], noise: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_mode(post)?;
        let z = sample(&post.q, noise)?;
        self.decode_path(&z, phases)
    }

    /// Monte-Carlo predictive mean and variance from `k` latent samples.
    pub fn condition<R: Rng + ?Sized>(
        &self,
        ev: &Evidence,
        weights: Option<&[f64]>,
        phases: &[Vec<f64>],
        k: usize,
        rng: &mut R,
    ) -> Result<TrajectoryDistribution> {
        if ev.is_empty() {
            return Err(Error::arg("no via-points or contexts to condition on; use generate for prior samples"));
        }
        if k == 0 {
            return Err(Error::arg("at least one sample is required"));
        }
        let post = self.posterior(ev, weights)?;
        let d = self.config_dim;
        let mut sum = vec![vec![0.0; d]; phases.len()];
        let mut sum_sq = vec![vec![0.0; d]; phases.len()];
        for _ in 0..k {
            let noise: Vec<f64> = (0..self.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let traj = self.generate(&post, phases, &noise)?;
            for (i, y) in traj.iter().enumerate() {
                for j in 0..d {
                    sum[i][j] += y[j];
                    sum_sq[i][j] += y[j] * y[j];
                }
            }
        }
        let kf = k as f64;
        let mean: Vec<Vec<f64>> = sum.iter().map(|r| r.iter().map(|s| s / kf).collect()).collect();
        let var = sum_sq
            .iter()
            .zip(&mean)
            .map(|(r, m)| r.iter().zip(m).map(|(s, m)| (s / kf - m * m).max(0.0)).collect())
            .collect();
        Ok(TrajectoryDistribution { mean, var, posterior: post })
    }

    /// Time-varying product `q1^ω(t) · q2^(1−ω(t))`, decoded with a single
    /// noise vector shared by every timestamp.
    pub fn blend_trajectories(
        &self,
        q1: &MotionPosterior,
        q2: &MotionPosterior,
        omega: &[f64],
        phases: &[Vec<f64>],
        noise: &[f64],
    ) -> Result<BlendedTrajectory> {
        self.check_mode(q1)?;
        self.check_mode(q2)?;
        if omega.len() != phases.len() {
            return Err(Error::shape(format!("{} blend weights for {} timestamps", omega.len(), phases.len())));
        }
        if let Some((i, w)) = omega.iter().enumerate().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(Error::arg(format!("blend weight {w} at timestamp {i} is outside [0, 1]")));
        }
        let z = omega.iter().map(|&w| sample(&blend(&q1.q, &q2.q, w)?, noise)).collect::<Result<Vec<_>>>()?;
        for p in phases {
            self.check_phase(p)?;
        }
        let y = self.decoder.decode_batch(&z, phases)?;
        Ok(BlendedTrajectory { y, z })
    }
}
