//! Demonstrations, synthetic generators, the dataset file format, and the
//! conditioning-set sampler used during training.

mod io;
mod subsample;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{PhaseMode, PhaseSpec};

pub use io::{load_dataset, load_dataset_prefix, read_dataset, save_dataset, write_dataset, DATASET_FORMAT_VERSION};
pub use subsample::{subsample_conditioning, Conditioning, SubsamplePolicy};
pub use synth::{
    gen_bimodal, gen_dataset, gen_reach2d, gen_sine_family, render_curve_image, render_point_image, DatasetSpec,
    Family, IMAGE_SIDE,
};

/// Channel name reserved for image-like context.
pub const IMAGE_CHANNEL: &str = "image";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub duration: f64,
    pub points: Vec<TrajPoint>,
    pub contexts: BTreeMap<String, Vec<f64>>,
}

impl Demonstration {
    pub fn config_dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.y.len())
    }

    pub fn phase_spec(&self, mode: PhaseMode) -> Result<PhaseSpec> {
        PhaseSpec::new(mode, self.duration)
    }

    /// Phase inputs for every point.
    pub fn phases(&self, mode: PhaseMode) -> Result<Vec<Vec<f64>>> {
        let spec = self.phase_spec(mode)?;
        self.points.iter().map(|p| spec.phase(p.t)).collect()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Validation(format!("demo {}: duration {} is not positive", self.id, self.duration)));
        }
        if self.points.is_empty() {
            return Err(Error::Validation(format!("demo {} has no points", self.id)));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            if !(p.t > prev) {
                return Err(Error::Validation(format!(
                    "demo {}: time {} at point {i} is not increasing",
                    self.id, p.t
                )));
            }
            if p.t < 0.0 || p.t > self.duration {
                return Err(Error::Validation(format!(
                    "demo {}: time {} outside [0, {}]",
                    self.id, p.t, self.duration
                )));
            }
            if p.y.len() != dim {
                return Err(Error::Validation(format!(
                    "demo {}: point {i} has dimension {}, expected {dim}",
                    self.id,
                    p.y.len()
                )));
            }
            if p.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("demo {}: point {i} is not finite", self.id)));
            }
            prev = p.t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub phase_mode: PhaseMode,
    pub config_dim: usize,
    pub demos: Vec<Demonstration>,
}

impl Dataset {
    /// Checks every demo and that context channels have one width each.
    pub fn validate(&self) -> Result<()> {
        if self.demos.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if self.config_dim == 0 {
            return Err(Error::Validation("configuration dimension is zero".into()));
        }
        let mut widths: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &self.demos {
            d.validate(self.config_dim)?;
            for (name, c) in &d.contexts {
                match widths.get(name.as_str()) {
                    Some(&w) if w != c.len() => {
                        return Err(Error::Validation(format!(
                            "channel `{name}` has width {} in demo {} but {w} elsewhere",
                            c.len(),
                            d.id
                        )))
                    }
                    Some(_) => {}
                    None => {
                        widths.insert(name, c.len());
                    }
                }
            }
        }
        Ok(())
    }

    /// Context channels and their widths, taken from all demos.
    pub fn channels(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for d in &self.demos {
            for (name, c) in &d.contexts {
                out.entry(name.clone()).or_insert(c.len());
            }
        }
        out
    }
}
