//! Conditional neural movement primitives and their variational and
//! zero-padded relatives.
//!
//! Observations are encoded row by row and averaged; the decoder predicts a
//! mean and a clamped standard deviation for every output dimension. Context
//! channels are concatenated onto every via-point row. The joint variants
//! require every channel; the independent variants zero-pad missing slots
//! and add one presence bit per slot.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core_math::{AdamConfig, AdamState, Matrix, MlpParams, Tape, Var};
use crate::data::{subsample_conditioning, Conditioning, Dataset, SubsamplePolicy};
use crate::error::{Error, Result};
use crate::latent_bayes::VARIANCE_FLOOR;
use crate::model::Evidence;
use crate::phase::PhaseMode;

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnmpKind {
    Cnmp,
    VaeCnmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Every row carries the via-point and all channels.
    Joint,
    /// Missing slots are zero with a cleared presence bit.
    IndepZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnmpVariant {
    pub kind: CnmpKind,
    pub padding: Padding,
}

impl CnmpVariant {
    pub const CNMP: CnmpVariant = CnmpVariant { kind: CnmpKind::Cnmp, padding: Padding::Joint };
    pub const VAE_CNMP: CnmpVariant = CnmpVariant { kind: CnmpKind::VaeCnmp, padding: Padding::Joint };
    pub const CNMP_INDEP: CnmpVariant = CnmpVariant { kind: CnmpKind::Cnmp, padding: Padding::IndepZeroPad };
    pub const VAE_CNMP_INDEP: CnmpVariant = CnmpVariant { kind: CnmpKind::VaeCnmp, padding: Padding::IndepZeroPad };

    pub fn name(self) -> &'static str {
        match (self.kind, self.padding) {
            (CnmpKind::Cnmp, Padding::Joint) => "cnmp",
            (CnmpKind::VaeCnmp, Padding::Joint) => "vae_cnmp",
            (CnmpKind::Cnmp, Padding::IndepZeroPad) => "cnmp_indep",
            (CnmpKind::VaeCnmp, Padding::IndepZeroPad) => "vae_cnmp_indep",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::CNMP, Self::VAE_CNMP, Self::CNMP_INDEP, Self::VAE_CNMP_INDEP].into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnmpConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// KL weight of the variational kind, annealed like the main model.
    pub beta_max: f64,
    pub anneal_fraction: f64,
    pub policy: SubsamplePolicy,
    pub seed: u64,
}

impl Default for CnmpConfig {
    fn default() -> Self {
        CnmpConfig {
            latent_dim: 16,
            hidden: 128,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 2000,
            beta_max: 1.0,
            anneal_fraction: 0.2,
            policy: SubsamplePolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnmpModel {
    pub variant: CnmpVariant,
    pub phase_mode: PhaseMode,
    pub config_dim: usize,
    /// Context channels and widths, in row layout order.
    pub channels: Vec<(String, usize)>,
    /// Row encoder; outputs the latent (plain kind) or features (variational).
    pub encoder: MlpParams,
    /// Variational heads over averaged features.
    pub head_mean: Option<MlpParams>,
    pub head_var: Option<MlpParams>,
    /// `[z, phase] → [μ_y, log σ_y]`.
    pub decoder: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnmpPrediction {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl CnmpModel {
    pub fn new<R: Rng + ?Sized>(
        variant: CnmpVariant,
        phase_mode: PhaseMode,
        config_dim: usize,
        channels: &BTreeMap<String, usize>,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let channels: Vec<(String, usize)> = channels.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let pw = phase_mode.width();
        let bits = usize::from(variant.padding == Padding::IndepZeroPad);
        let row = pw + config_dim + bits + channels.iter().map(|(_, w)| w + bits).sum::<usize>();
        let (encoder, head_mean, head_var) = match variant.kind {
            CnmpKind::Cnmp => (MlpParams::new(&[row, hidden, hidden, latent_dim], rng)?, None, None),
            CnmpKind::VaeCnmp => (
                MlpParams::new(&[row, hidden, hidden], rng)?,
                Some(MlpParams::new(&[hidden, latent_dim], rng)?),
                Some(MlpParams::new(&[hidden, latent_dim], rng)?),
            ),
        };
        let decoder = MlpParams::new(&[latent_dim + pw, hidden, hidden, 2 * config_dim], rng)?;
        Ok(CnmpModel { variant, phase_mode, config_dim, channels, encoder, head_mean, head_var, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.in_dim() - self.phase_mode.width()
    }

    pub fn row_width(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p: Vec<&mut Matrix> = self.encoder.params_mut().collect();
        if let Some(h) = self.head_mean.as_mut() {
            p.extend(h.params_mut());
        }
        if let Some(h) = self.head_var.as_mut() {
            p.extend(h.params_mut());
        }
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p: Vec<&Matrix> = self.encoder.params().collect();
        if let Some(h) = self.head_mean.as_ref() {
            p.extend(h.params());
        }
        if let Some(h) = self.head_var.as_ref() {
            p.extend(h.params());
        }
        p.extend(self.decoder.params());
        p
    }

    /// Observation rows for one conditioning set.
    pub fn rows(&self, ev: &Evidence) -> Result<Vec<Vec<f64>>> {
        let indep = self.variant.padding == Padding::IndepZeroPad;
        let pw = self.phase_mode.width();
        let given: BTreeMap<&str, &Vec<f64>> = ev.contexts.iter().map(|(k, v)| (k.as_str(), v)).collect();
        for name in given.keys() {
            if !self.channels.iter().any(|(c, _)| c == name) {
                return Err(Error::Channel(name.to_string()));
            }
        }
        if !indep {
            if ev.via_points.is_empty() {
                return Err(Error::arg(format!("{} needs at least one via-point", self.variant.name())));
            }
            if let Some((c, _)) = self.channels.iter().find(|(c, _)| !given.contains_key(c.as_str())) {
                return Err(Error::arg(format!(
                    "{} needs every context channel; `{c}` is missing",
                    self.variant.name()
                )));
            }
        }
        let mut ctx = Vec::new();
        for (name, w) in &self.channels {
            match given.get(name.as_str()) {
                Some(v) if v.len() != *w => {
                    return Err(Error::shape(format!("context `{name}` has width {}, expected {w}", v.len())))
                }
                Some(v) => {
                    ctx.extend_from_slice(v);
                    if indep {
                        ctx.push(1.0);
                    }
                }
                None => {
                    ctx.extend(std::iter::repeat_n(0.0, *w + 1));
                }
            }
        }
        let mut rows = Vec::new();
        for v in &ev.via_points {
            if v.phase.len() != pw || v.y.len() != self.config_dim {
                return Err(Error::shape("via-point does not match the model's widths"));
            }
            let mut r = [v.phase.as_slice(), v.y.as_slice()].concat();
            if indep {
                r.push(1.0);
            }
            r.extend_from_slice(&ctx);
            rows.push(r);
        }
        if rows.is_empty() {
            if ev.contexts.is_empty() {
                return Err(Error::arg("nothing to condition on"));
            }
            let mut r = vec![0.0; pw + self.config_dim + 1];
            r.extend_from_slice(&ctx);
            rows.push(r);
        }
        Ok(rows)
    }

    /// Mean-aggregated latent. The variational kind returns its mean.
    pub fn latent(&self, ev: &Evidence) -> Result<Vec<f64>> {
        let rows = self.rows(ev)?;
        let n = rows.len();
        let x = Matrix::from_vec(n, self.row_width(), rows.concat())?;
        let mut h = self.encoder.forward_batch(&x)?;
        if self.variant.kind == CnmpKind::VaeCnmp {
            for v in h.as_mut_slice() {
                *v = v.max(0.0);
            }
        }
        let mut avg = vec![0.0; h.cols()];
        for r in 0..n {
            for (a, v) in avg.iter_mut().zip(h.row(r)) {
                *a += v;
            }
        }
        for a in &mut avg {
            *a /= n as f64;
        }
        match &self.head_mean {
            Some(head) => head.forward(&avg),
            None => Ok(avg),
        }
    }

    pub fn forward(&self, ev: &Evidence, phases: &[Vec<f64>]) -> Result<CnmpPrediction> {
        let z = self.latent(ev)?;
        let pw = self.phase_mode.width();
        let mut x = Matrix::zeros(phases.len(), z.len() + pw);
        for (r, p) in phases.iter().enumerate() {
            if p.len() != pw {
                return Err(Error::shape("phase width does not match the model"));
            }
            x.row_mut(r)[..z.len()].copy_from_slice(&z);
            x.row_mut(r)[z.len()..].copy_from_slice(p);
        }
        let out = self.decoder.forward_batch(&x)?;
        let d = self.config_dim;
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        Ok(CnmpPrediction {
            mean: (0..out.rows()).map(|r| out.row(r)[..d].to_vec()).collect(),
            std: (0..out.rows()).map(|r| out.row(r)[d..].iter().map(|s| s.clamp(lo, hi).exp()).collect()).collect(),
        })
    }
}

/// One training example in row form.
struct Example {
    rows: Vec<Vec<f64>>,
    phases: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    noise: Vec<f64>,
}

fn batch_loss(model: &CnmpModel, batch: &[Example], beta: f64) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let b = batch.len();
    let width = model.row_width();
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut inv_counts = Vec::new();
    let mut phase = Vec::new();
    let mut target = Vec::new();
    let mut point_ids = Vec::new();
    let mut noise = Vec::new();
    for (i, ex) in batch.iter().enumerate() {
        for r in &ex.rows {
            data.extend_from_slice(r);
            ids.push(i);
        }
        for (p, y) in ex.phases.iter().zip(&ex.targets) {
            phase.extend_from_slice(p);
            target.extend_from_slice(y);
            point_ids.push(i);
        }
        noise.extend_from_slice(&ex.noise);
        inv_counts.push(1.0 / ex.rows.len() as f64);
    }
    let feat_dim = model.encoder.out_dim();
    let scale =
        Matrix::from_vec(b, feat_dim, inv_counts.iter().flat_map(|&c| std::iter::repeat_n(c, feat_dim)).collect())?;

    let mut slot = 0;
    let enc = model.encoder.on_tape(&mut tape, Some(slot));
    slot += model.encoder.tensor_count();
    let x = tape.constant(Matrix::from_vec(ids.len(), width, data)?);
    let mut h = enc.forward(&mut tape, x)?;
    let vae = model.variant.kind == CnmpKind::VaeCnmp;
    if vae {
        h = tape.relu(h);
    }
    let s = tape.segment_sum_into(h, ids, b)?;
    let sc = tape.constant(scale);
    let avg = tape.mul(s, sc)?;
    let mut kl: Option<Var> = None;
    let z = match (&model.head_mean, &model.head_var) {
        (Some(hm), Some(hv)) => {
            let hm_v = hm.on_tape(&mut tape, Some(slot));
            slot += hm.tensor_count();
            let hv_v = hv.on_tape(&mut tape, Some(slot));
            slot += hv.tensor_count();
            let mean = hm_v.forward(&mut tape, avg)?;
            let raw = hv_v.forward(&mut tape, avg)?;
            let sp = tape.softplus(raw);
            let var = tape.add_scalar(sp, VARIANCE_FLOOR);
            let std = tape.sqrt(var);
            let eps = tape.constant(Matrix::from_vec(b, model.latent_dim(), noise)?);
            let spread = tape.mul(eps, std)?;
            let sv = tape.sum(var);
            let m2 = tape.square(mean);
            let sm = tape.sum(m2);
            let lv = tape.ln(var);
            let sl = tape.sum(lv);
            let k = tape.add(sv, sm)?;
            let k = tape.sub(k, sl)?;
            let k = tape.scale(k, 0.5);
            kl = Some(tape.add_scalar(k, -0.5 * (b * model.latent_dim()) as f64));
            tape.add(mean, spread)?
        }
        _ => avg,
    };
    let dec = model.decoder.on_tape(&mut tape, Some(slot));
    let zp = tape.gather_rows(z, point_ids)?;
    let n = zp;
    let npts = tape.value(n).rows();
    let ph = tape.constant(Matrix::from_vec(npts, model.phase_mode.width(), phase)?);
    let input = tape.concat_cols(zp, ph)?;
    let out = dec.forward(&mut tape, input)?;
    let d = model.config_dim;
    let mu = tape.slice_cols(out, 0, d)?;
    let raw = tape.slice_cols(out, d, 2 * d)?;
    let log_sigma = tape.clamp(raw, SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let inv_var = {
        let m2 = tape.scale(log_sigma, -2.0);
        tape.exp(m2)
    };
    let y = tape.constant(Matrix::from_vec(npts, d, target)?);
    let r = tape.sub(mu, y)?;
    let r2 = tape.square(r);
    let w = tape.mul(r2, inv_var)?;
    let quad = tape.sum(w);
    let quad = tape.scale(quad, 0.5);
    let ls = tape.sum(log_sigma);
    let nll = tape.add(quad, ls)?;
    let nll = tape.add_scalar(nll, 0.5 * (npts * d) as f64 * (2.0 * std::f64::consts::PI).ln());
    let loss = match kl {
        Some(k) => {
            let k = tape.scale(k, beta);
            tape.add(nll, k)?
        }
        None => nll,
    };
    let mut grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    let out = model
        .params()
        .into_iter()
        .enumerate()
        .map(|(s, p)| grads.take(s).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCnmp {
    pub model: CnmpModel,
    pub loss_trace: Vec<f64>,
}

/// Gaussian negative log-likelihood training (plus annealed KL for the
/// variational kind) over subsampled conditioning sets. The joint variants
/// always see every channel.
pub fn cnmp_train(dataset: &Dataset, variant: CnmpVariant, config: &CnmpConfig) -> Result<TrainedCnmp> {
    dataset.validate()?;
    if config.latent_dim == 0 || config.hidden == 0 || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Validation("latent_dim, hidden, batch_size and epochs must be positive".into()));
    }
    if !(config.learning_rate > 0.0) || !(0.0..=1.0).contains(&config.anneal_fraction) || !(config.beta_max >= 0.0) {
        return Err(Error::Validation("learning_rate, anneal_fraction or beta_max out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CnmpModel::new(
        variant,
        dataset.phase_mode,
        dataset.config_dim,
        &dataset.channels(),
        config.latent_dim,
        config.hidden,
        &mut rng,
    )?;
    let phases = dataset.demos.iter().map(|d| d.phases(dataset.phase_mode)).collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
    let mut order: Vec<usize> = (0..dataset.demos.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let ramp = config.anneal_fraction * config.epochs as f64;
    for epoch in 0..config.epochs {
        let beta = if ramp > 0.0 { config.beta_max * ((epoch + 1) as f64 / ramp).min(1.0) } else { config.beta_max };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let demo = &dataset.demos[i];
                    let mut sel: Conditioning = subsample_conditioning(demo, &config.policy, &mut rng);
                    if variant.padding == Padding::Joint {
                        sel.channels = demo.contexts.keys().cloned().collect();
                        if sel.via_points.is_empty() {
                            sel.via_points = vec![rng.random_range(0..demo.points.len())];
                        }
                    }
                    let ev = Evidence::from_demo(demo, dataset.phase_mode, &sel)?;
                    Ok(Example {
                        rows: model.rows(&ev)?,
                        phases: phases[i].clone(),
                        targets: demo.points.iter().map(|p| p.y.clone()).collect(),
                        noise: (0..config.latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = batch_loss(&model, &batch, beta)?;
            for g in &mut grads {
                g.scale_assign(1.0 / chunk.len() as f64);
            }
            adam.step(model.params_mut(), &grads)?;
            total += loss;
        }
        let mean = total / dataset.demos.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric { location: format!("training epoch {}", epoch + 1) });
        }
        trace.push(mean);
    }
    Ok(TrainedCnmp { model, loss_trace: trace })
}
