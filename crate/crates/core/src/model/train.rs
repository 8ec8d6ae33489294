use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_loss, ElboBatch, ElboExample, KlMode};
use super::{DeepProMP, Evidence, DEFAULT_SIGMA_Y};
use crate::core_math::{AdamConfig, AdamState};
use crate::data::{subsample_conditioning, Dataset, SubsamplePolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub latent_dim: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta_max: f64,
    /// Fraction of epochs over which β ramps linearly from 0 to `beta_max`.
    pub anneal_fraction: f64,
    pub sigma_y: f64,
    pub policy: SubsamplePolicy,
    pub kl_mode: KlMode,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            latent_dim: 16,
            hidden: 128,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 2000,
            beta_max: 1.0,
            anneal_fraction: 0.2,
            sigma_y: DEFAULT_SIGMA_Y,
            policy: SubsamplePolicy::default(),
            kl_mode: KlMode::Analytic,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("latent_dim, hidden, batch_size and epochs must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta_max >= 0.0) {
            return bad("beta_max must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return bad("anneal_fraction must lie in [0, 1]");
        }
        if !(self.sigma_y > 0.0) {
            return bad("sigma_y must be positive");
        }
        if self.policy.min_points > self.policy.max_points || !(0.0..=1.0).contains(&self.policy.channel_prob) {
            return bad("subsampling policy is inconsistent");
        }
        Ok(())
    }

    /// KL weight for a 0-based epoch.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let ramp = self.anneal_fraction * self.epochs as f64;
        if ramp <= 0.0 {
            return self.beta_max;
        }
        self.beta_max * ((epoch + 1) as f64 / ramp).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: DeepProMP,
    /// Mean negative ELBO per example for each epoch.
    pub loss_trace: Vec<f64>,
}

/// Fits a model by minimizing the negative ELBO over randomly subsampled
/// conditioning sets. Every random choice comes from `config.seed`.
pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainedModel> {
    train_with(dataset, config, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss)` after each epoch.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel> {
    dataset.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DeepProMP::new(
        dataset.phase_mode,
        dataset.config_dim,
        &dataset.channels(),
        config.latent_dim,
        config.hidden,
        config.sigma_y,
        &mut rng,
    )?;
    let phases = dataset.demos.iter().map(|d| d.phases(dataset.phase_mode)).collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
    let mut order: Vec<usize> = (0..dataset.demos.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let beta = config.beta_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let examples = chunk
                .iter()
                .map(|&i| {
                    let demo = &dataset.demos[i];
                    let sel = subsample_conditioning(demo, &config.policy, &mut rng);
                    Ok(ElboExample {
                        evidence: Evidence::from_demo(demo, dataset.phase_mode, &sel)?,
                        target_phases: phases[i].clone(),
                        targets: demo.points.iter().map(|p| p.y.clone()).collect(),
                        noise: (0..config.latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = ElboBatch::new(&model, &examples)?;
            let (loss, mut grads) = elbo_loss(&model, &batch, beta, config.kl_mode)?;
            let n = chunk.len() as f64;
            for g in &mut grads {
                g.scale_assign(1.0 / n);
            }
            adam.step(model.params_mut(), &grads)?;
            total += loss;
        }
        let mean = total / dataset.demos.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric { location: format!("training epoch {}", epoch + 1) });
        }
        on_epoch(epoch, mean);
        trace.push(mean);
    }
    Ok(TrainedModel { model, loss_trace: trace })
}
