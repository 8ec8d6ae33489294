use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DeepProMP, Evidence};
use crate::core_math::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::latent_bayes::{Source, VARIANCE_FLOOR};

/// Which KL regularizer the training objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `KL(q(z | A, C) ‖ p₀)` of the aggregated posterior.
    #[default]
    Analytic,
    /// `Σᵢ KL(q(z | oᵢ) ‖ p₀)` summed over the individual messages.
    PerObservation,
}

/// One training example: what the encoder sees, the points the decoder must
/// reconstruct, and the standard-normal draw for the reparameterized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboExample {
    pub evidence: Evidence,
    pub target_phases: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

struct SourceRows {
    source: Source,
    rows: Matrix,
    ids: Vec<usize>,
}

/// A mini-batch flattened into matrices, ready to put on a tape.
pub struct ElboBatch {
    size: usize,
    sources: Vec<SourceRows>,
    decoder_phase: Matrix,
    targets: Matrix,
    point_ids: Vec<usize>,
    noise: Matrix,
}

impl ElboBatch {
    pub fn new(model: &DeepProMP, examples: &[ElboExample]) -> Result<Self> {
        let pw = model.phase_mode.width();
        let d = model.config_dim;
        let l = model.latent_dim();
        let mut via = Vec::new();
        let mut via_ids = Vec::new();
        let mut ctx: BTreeMap<&str, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
        let mut dphase = Vec::new();
        let mut targets = Vec::new();
        let mut point_ids = Vec::new();
        let mut noise = Vec::with_capacity(examples.len() * l);
        for (b, ex) in examples.iter().enumerate() {
            for v in &ex.evidence.via_points {
                if v.phase.len() != pw || v.y.len() != d {
                    return Err(Error::shape(format!("example {b}: via-point has the wrong width")));
                }
                via.extend_from_slice(&v.phase);
                via.extend_from_slice(&v.y);
                via_ids.push(b);
            }
            for (name, c) in &ex.evidence.contexts {
                let width = model.encoders.nets(&Source::Context(name.clone()))?.input_dim();
                if c.len() != width {
                    return Err(Error::shape(format!(
                        "example {b}: channel `{name}` has width {}, encoder takes {width}",
                        c.len()
                    )));
                }
                let e = ctx.entry(name.as_str()).or_default();
                e.0.extend_from_slice(c);
                e.1.push(b);
            }
            if ex.target_phases.len() != ex.targets.len() {
                return Err(Error::shape(format!("example {b}: phases and targets differ in length")));
            }
            for (p, y) in ex.target_phases.iter().zip(&ex.targets) {
                if p.len() != pw || y.len() != d {
                    return Err(Error::shape(format!("example {b}: target has the wrong width")));
                }
                dphase.extend_from_slice(p);
                targets.extend_from_slice(y);
                point_ids.push(b);
            }
            if ex.noise.len() != l {
                return Err(Error::shape(format!("example {b}: noise has {} entries, latent {l}", ex.noise.len())));
            }
            noise.extend_from_slice(&ex.noise);
        }
        let mut sources = Vec::new();
        if !via_ids.is_empty() {
            sources.push(SourceRows {
                source: Source::ViaPoint,
                rows: Matrix::from_vec(via_ids.len(), pw + d, via)?,
                ids: via_ids,
            });
        }
        for (name, (data, ids)) in ctx {
            sources.push(SourceRows {
                source: Source::Context(name.to_string()),
                rows: Matrix::from_vec(ids.len(), data.len() / ids.len(), data)?,
                ids,
            });
        }
        let n = point_ids.len();
        Ok(ElboBatch {
            size: examples.len(),
            sources,
            decoder_phase: Matrix::from_vec(n, pw, dphase)?,
            targets: Matrix::from_vec(n, d, targets)?,
            point_ids,
            noise: Matrix::from_vec(examples.len(), l, noise)?,
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

fn kl_rows(tape: &mut Tape, mean: Var, var: Var) -> Result<Var> {
    let (r, c) = tape.value(mean).shape();
    let sv = tape.sum(var);
    let m2 = tape.square(mean);
    let sm = tape.sum(m2);
    let lv = tape.ln(var);
    let sl = tape.sum(lv);
    let a = tape.add(sv, sm)?;
    let a = tape.sub(a, sl)?;
    let a = tape.scale(a, 0.5);
    Ok(tape.add_scalar(a, -0.5 * (r * c) as f64))
}

/// Builds the summed negative ELBO of a batch. With `differentiable` the
/// model's tensors are tape parameters in [`DeepProMP::params`] order.
fn build(
    model: &DeepProMP,
    batch: &ElboBatch,
    beta: f64,
    kl: KlMode,
    tape: &mut Tape,
    differentiable: bool,
) -> Result<Var> {
    let base = differentiable.then_some(0);
    let heads = model.encoders.heads_on_tape(tape, base);
    let b = batch.size;
    let mut prec: Option<Var> = None;
    let mut info: Option<Var> = None;
    let mut kl_obs: Option<Var> = None;
    for s in &batch.sources {
        let (m, v) = model.encoders.encode_on_tape(tape, base, &heads, &s.source, s.rows.clone())?;
        let p = tape.recip(v);
        let h = tape.mul(m, p)?;
        let ps = tape.segment_sum_into(p, s.ids.clone(), b)?;
        let hs = tape.segment_sum_into(h, s.ids.clone(), b)?;
        prec = Some(match prec {
            Some(acc) => tape.add(acc, ps)?,
            None => ps,
        });
        info = Some(match info {
            Some(acc) => tape.add(acc, hs)?,
            None => hs,
        });
        if kl == KlMode::PerObservation {
            let k = kl_rows(tape, m, v)?;
            kl_obs = Some(match kl_obs {
                Some(acc) => tape.add(acc, k)?,
                None => k,
            });
        }
    }
    let l = model.latent_dim();
    let (mean_z, var_z) = match (prec, info) {
        (Some(p), Some(h)) => {
            let p = tape.add_scalar(p, 1.0);
            let v = tape.recip(p);
            let v = tape.clamp(v, VARIANCE_FLOOR, f64::INFINITY);
            (tape.mul(v, h)?, v)
        }
        _ => (tape.constant(Matrix::zeros(b, l)), tape.constant(Matrix::filled(b, l, 1.0))),
    };
    let std = tape.sqrt(var_z);
    let eps = tape.constant(batch.noise.clone());
    let spread = tape.mul(eps, std)?;
    let z = tape.add(mean_z, spread)?;

    let zp = tape.gather_rows(z, batch.point_ids.clone())?;
    let ph = tape.constant(batch.decoder_phase.clone());
    let input = tape.concat_cols(zp, ph)?;
    let dec = model.decoder.net.on_tape(tape, base.map(|_| model.encoders.tensor_count()));
    let yhat = dec.forward(tape, input)?;
    let target = tape.constant(batch.targets.clone());
    let r = tape.sub(yhat, target)?;
    let r2 = tape.square(r);
    let sse = tape.sum(r2);
    let sigma = model.decoder.sigma_y;
    let recon = tape.scale(sse, 1.0 / (2.0 * sigma * sigma));
    let recon = tape.add_scalar(recon, model.decoder.log_norm(batch.targets.len()));

    let kl_term = match kl {
        KlMode::Analytic => kl_rows(tape, mean_z, var_z)?,
        KlMode::PerObservation => match kl_obs {
            Some(k) => k,
            None => tape.constant(Matrix::zeros(1, 1)),
        },
    };
    let kl_term = tape.scale(kl_term, beta);
    tape.add(recon, kl_term)
}

/// Negative ELBO summed over the batch, one reparameterized sample per
/// example, and its gradient with respect to every model tensor.
pub fn elbo_loss(model: &DeepProMP, batch: &ElboBatch, beta: f64, kl: KlMode) -> Result<(f64, Vec<Matrix>)> {
    if !(beta >= 0.0) {
        return Err(Error::arg(format!("KL weight {beta} must be non-negative")));
    }
    let mut tape = Tape::new();
    let loss = build(model, batch, beta, kl, &mut tape, true)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    let out = model
        .params()
        .into_iter()
        .enumerate()
        .map(|(slot, p)| grads.take(slot).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, out))
}

/// Loss value only.
pub fn elbo_value(model: &DeepProMP, batch: &ElboBatch, beta: f64, kl: KlMode) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = build(model, batch, beta, kl, &mut tape, false)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numeric { location: "negative ELBO".into() });
    }
    Ok(v)
}
