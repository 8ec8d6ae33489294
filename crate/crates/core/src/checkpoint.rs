//! Versioned model files shared by every model kind.
//!
//! A checkpoint is one JSON document: an envelope describing the model
//! (kind, phase mode, dimensions, channel registry, hash of the training
//! configuration) wrapped around the kind-specific parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{CnmpModel, PrompModel};
use crate::error::{Error, Result};
use crate::model::DeepProMP;
use crate::phase::PhaseMode;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "dpromp-checkpoint";

/// A model of any supported kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    DeepProMP(DeepProMP),
    Promp(PrompModel),
    Cnmp(CnmpModel),
}

impl AnyModel {
    /// Kind tag as written in checkpoints and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::DeepProMP(_) => "deep_promp",
            AnyModel::Promp(_) => "promp",
            AnyModel::Cnmp(m) => m.variant.name(),
        }
    }

    pub fn phase_mode(&self) -> PhaseMode {
        match self {
            AnyModel::DeepProMP(m) => m.phase_mode,
            AnyModel::Promp(_) => PhaseMode::Linear,
            AnyModel::Cnmp(m) => m.phase_mode,
        }
    }

    pub fn config_dim(&self) -> usize {
        match self {
            AnyModel::DeepProMP(m) => m.config_dim,
            AnyModel::Promp(m) => m.config_dim,
            AnyModel::Cnmp(m) => m.config_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub phase_mode: PhaseMode,
    pub config_dim: usize,
    /// Zero for models without a latent.
    pub latent_dim: usize,
    pub sigma_y: Option<f64>,
    pub channels: BTreeMap<String, usize>,
    /// SHA-256 of the training configuration's JSON form.
    pub config_hash: String,
    /// The training configuration itself, when known.
    #[serde(default)]
    pub training: Option<serde_json::Value>,
    pub model: serde_json::Value,
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of any serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(serde_json::to_string(config).expect("configs serialize").as_bytes())
}

fn to_value<T: Serialize>(m: &T) -> serde_json::Value {
    serde_json::to_value(m).expect("models serialize")
}

fn from_value<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Parse { line: 0, message: format!("model body: {e}") })
}

impl Checkpoint {
    pub fn new(model: &AnyModel, config_hash: String) -> Self {
        let (latent_dim, sigma_y, channels, body) = match model {
            AnyModel::DeepProMP(m) => (m.latent_dim(), Some(m.decoder.sigma_y), m.channels(), to_value(m)),
            AnyModel::Promp(m) => (0, None, m.channels.iter().cloned().collect(), to_value(m)),
            AnyModel::Cnmp(m) => (m.latent_dim(), None, m.channels.iter().cloned().collect(), to_value(m)),
        };
        Checkpoint {
            format: FORMAT_TAG.into(),
            version: CHECKPOINT_FORMAT_VERSION,
            kind: model.kind().into(),
            phase_mode: model.phase_mode(),
            config_dim: model.config_dim(),
            latent_dim,
            sigma_y,
            channels,
            config_hash,
            training: None,
            model: body,
        }
    }

    /// Envelope that also records the training configuration and its hash.
    pub fn with_training<T: Serialize>(model: &AnyModel, config: &T) -> Self {
        let mut c = Checkpoint::new(model, config_hash(config));
        c.training = Some(serde_json::to_value(config).expect("configs serialize"));
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        if c.format != FORMAT_TAG {
            return Err(Error::Parse { line: 1, message: format!("not a checkpoint (format `{}`)", c.format) });
        }
        if c.version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version { found: c.version, expected: CHECKPOINT_FORMAT_VERSION });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }

    /// Rebuilds the model and checks it against the envelope.
    pub fn into_model(self) -> Result<AnyModel> {
        let model = match self.kind.as_str() {
            "deep_promp" => AnyModel::DeepProMP(from_value(self.model)?),
            "promp" => AnyModel::Promp(from_value(self.model)?),
            k if crate::baselines::CnmpVariant::from_name(k).is_some() => AnyModel::Cnmp(from_value(self.model)?),
            other => return Err(Error::Validation(format!("unknown model kind `{other}`"))),
        };
        if model.kind() != self.kind || model.phase_mode() != self.phase_mode || model.config_dim() != self.config_dim {
            return Err(Error::Validation("checkpoint envelope does not match its model".into()));
        }
        if let AnyModel::DeepProMP(m) = &model {
            m.encoders.head_mean.validate()?;
            m.decoder.net.validate()?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> DeepProMP {
        let ch = BTreeMap::from([("params".to_string(), 3)]);
        DeepProMP::new(PhaseMode::Rhythmic, 2, &ch, 4, 8, 0.05, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = AnyModel::DeepProMP(model());
        let c = Checkpoint::new(&m, config_hash(&"cfg"));
        let back = Checkpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back.channels["params"], 3);
        assert_eq!(back.into_model().unwrap(), m);
    }

    #[test]
    fn version_is_checked() {
        let c = Checkpoint::new(&AnyModel::DeepProMP(model()), String::new());
        let text = c.to_json().replace("\"version\":1", "\"version\":7");
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
