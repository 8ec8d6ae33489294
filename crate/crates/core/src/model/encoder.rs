use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core_math::{softplus, Matrix, MlpParams, MlpVars, Tape, Var};
use crate::error::{Error, Result};
use crate::latent_bayes::{LatentObservation, Source, VARIANCE_FLOOR};

/// Mean and variance trunks for one input type. Each trunk is two ReLU
/// layers; their features go to the bank's shared affine head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderNets {
    pub mean_net: MlpParams,
    pub var_net: MlpParams,
}

impl EncoderNets {
    fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(EncoderNets {
            mean_net: MlpParams::new(&[input, hidden, hidden], rng)?,
            var_net: MlpParams::new(&[input, hidden, hidden], rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean_net.in_dim()
    }
}

/// Per-input-type encoders sharing one affine head that maps features to a
/// latent mean and a raw variance; variance is `softplus(raw) + floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBank {
    pub via: EncoderNets,
    pub channels: BTreeMap<String, EncoderNets>,
    pub head_mean: MlpParams,
    pub head_var: MlpParams,
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

impl EncoderBank {
    pub fn new<R: Rng + ?Sized>(
        via_input: usize,
        channels: &BTreeMap<String, usize>,
        hidden: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let via = EncoderNets::new(via_input, hidden, rng)?;
        let channels = channels
            .iter()
            .map(|(name, &w)| Ok((name.clone(), EncoderNets::new(w, hidden, rng)?)))
            .collect::<Result<_>>()?;
        Ok(EncoderBank {
            via,
            channels,
            head_mean: MlpParams::new(&[hidden, latent_dim], rng)?,
            head_var: MlpParams::new(&[hidden, latent_dim], rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head_mean.out_dim()
    }

    pub fn nets(&self, source: &Source) -> Result<&EncoderNets> {
        match source {
            Source::ViaPoint => Ok(&self.via),
            Source::Context(name) => self.channels.get(name).ok_or_else(|| Error::Channel(name.clone())),
        }
    }

    /// Encodes a batch of rows from one input type.
    pub fn encode_rows(&self, source: &Source, rows: &Matrix) -> Result<Vec<LatentObservation>> {
        let nets = self.nets(source)?;
        if rows.cols() != nets.input_dim() {
            return Err(Error::shape(format!(
                "{source:?} encoder takes width {}, got {}",
                nets.input_dim(),
                rows.cols()
            )));
        }
        let mut fm = nets.mean_net.forward_batch(rows)?;
        relu_in_place(&mut fm);
        let mut fv = nets.var_net.forward_batch(rows)?;
        relu_in_place(&mut fv);
        let mean = self.head_mean.forward_batch(&fm)?;
        let raw = self.head_var.forward_batch(&fv)?;
        (0..rows.rows())
            .map(|r| {
                LatentObservation::new(
                    mean.row(r).to_vec(),
                    raw.row(r).iter().map(|&s| softplus(s) + VARIANCE_FLOOR).collect(),
                    source.clone(),
                )
            })
            .collect()
    }

    /// Parameter tensors in slot order: via trunks, channel trunks in name
    /// order, then the two heads.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        out.extend(self.via.mean_net.params());
        out.extend(self.via.var_net.params());
        for nets in self.channels.values() {
            out.extend(nets.mean_net.params());
            out.extend(nets.var_net.params());
        }
        out.extend(self.head_mean.params());
        out.extend(self.head_var.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.via.mean_net.params_mut());
        out.extend(self.via.var_net.params_mut());
        for nets in self.channels.values_mut() {
            out.extend(nets.mean_net.params_mut());
            out.extend(nets.var_net.params_mut());
        }
        out.extend(self.head_mean.params_mut());
        out.extend(self.head_var.params_mut());
        out
    }

    fn slot_of(&self, source: &Source) -> Result<usize> {
        let per = |n: &EncoderNets| n.mean_net.tensor_count() + n.var_net.tensor_count();
        match source {
            Source::ViaPoint => Ok(0),
            Source::Context(name) => {
                let mut slot = per(&self.via);
                for (k, nets) in &self.channels {
                    if k == name {
                        return Ok(slot);
                    }
                    slot += per(nets);
                }
                Err(Error::Channel(name.clone()))
            }
        }
    }

    fn head_slot(&self) -> usize {
        let per = |n: &EncoderNets| n.mean_net.tensor_count() + n.var_net.tensor_count();
        per(&self.via) + self.channels.values().map(per).sum::<usize>()
    }

    pub fn tensor_count(&self) -> usize {
        self.head_slot() + self.head_mean.tensor_count() + self.head_var.tensor_count()
    }

    /// Registers the heads on a tape; pair with [`EncoderBank::encode_on_tape`].
    pub fn heads_on_tape(&self, tape: &mut Tape, base: Option<usize>) -> (MlpVars, MlpVars) {
        let hs = base.map(|b| b + self.head_slot());
        let hm = self.head_mean.on_tape(tape, hs);
        let hv = self.head_var.on_tape(tape, hs.map(|s| s + self.head_mean.tensor_count()));
        (hm, hv)
    }

    /// Differentiable encoding of a batch of rows: returns `(mean, var)` nodes.
    /// With `base = Some(b)` the bank's tensors occupy slots starting at `b`.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        base: Option<usize>,
        heads: &(MlpVars, MlpVars),
        source: &Source,
        rows: Matrix,
    ) -> Result<(Var, Var)> {
        let nets = self.nets(source)?;
        if rows.cols() != nets.input_dim() {
            return Err(Error::shape(format!(
                "{source:?} encoder takes width {}, got {}",
                nets.input_dim(),
                rows.cols()
            )));
        }
        let slot = base.map(|b| b + self.slot_of(source).expect("source resolved above"));
        let mv = nets.mean_net.on_tape(tape, slot);
        let vv = nets.var_net.on_tape(tape, slot.map(|s| s + nets.mean_net.tensor_count()));
        let x = tape.constant(rows);
        let fm = mv.forward(tape, x)?;
        let fm = tape.relu(fm);
        let fv = vv.forward(tape, x)?;
        let fv = tape.relu(fv);
        let mean = heads.0.forward(tape, fm)?;
        let raw = heads.1.forward(tape, fv)?;
        let sp = tape.softplus(raw);
        let var = tape.add_scalar(sp, VARIANCE_FLOOR);
        Ok((mean, var))
    }
}
