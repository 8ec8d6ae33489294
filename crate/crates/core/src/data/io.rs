//! Line-delimited dataset files.
//!
//! The first line is a header object; every following line is one
//! demonstration. Example:
//!
//! ```text
//! {"format":"dpromp-dataset","version":1,"phase_mode":"linear","config_dim":1}
//! {"id":"sine-00000","T":1.0,"points":[[0.0,[0.25]],[0.5,[-0.1]]],"contexts":{"params":[1.0,0.0,0.0]}}
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved file
//! reproduces every number bit for bit. Unknown context channels are kept as
//! they are.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Demonstration, TrajPoint};
use crate::error::{Error, Result};
use crate::phase::PhaseMode;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "dpromp-dataset";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    phase_mode: PhaseMode,
    config_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(rename = "T")]
    duration: f64,
    points: Vec<(f64, Vec<f64>)>,
    #[serde(default)]
    contexts: BTreeMap<String, Vec<f64>>,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: DATASET_FORMAT_VERSION,
        phase_mode: ds.phase_mode,
        config_dim: ds.config_dim,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for d in &ds.demos {
        let rec = Record {
            id: d.id.clone(),
            duration: d.duration,
            points: d.points.iter().map(|p| (p.t, p.y.clone())).collect(),
            contexts: d.contexts.clone(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Validation(format!("demo {} cannot be written: {e}", d.id)))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_dataset(ds, BufWriter::new(file))
}

/// Reads at most `limit` records (all when `None`).
pub fn read_dataset<R: Read>(input: R, limit: Option<usize>) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();

    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: 1, message: format!("bad header: {e}") })?
        }
        None => return Err(Error::Parse { line: 1, message: "empty file, missing header".into() }),
    };
    if header.format != FORMAT_TAG {
        return Err(Error::Parse { line: 1, message: format!("not a dataset file (format `{}`)", header.format) });
    }
    if header.version != DATASET_FORMAT_VERSION {
        return Err(Error::Version { found: header.version, expected: DATASET_FORMAT_VERSION });
    }

    let mut demos = Vec::new();
    for (idx, line) in lines {
        if limit.is_some_and(|k| demos.len() >= k) {
            break;
        }
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        demos.push(Demonstration {
            id: rec.id,
            duration: rec.duration,
            points: rec.points.into_iter().map(|(t, y)| TrajPoint { t, y }).collect(),
            contexts: rec.contexts,
        });
    }
    let ds = Dataset { phase_mode: header.phase_mode, config_dim: header.config_dim, demos };
    ds.validate()?;
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?, None)
}

/// Loads only the first `k` demonstrations.
pub fn load_dataset_prefix(path: impl AsRef<Path>, k: usize) -> Result<Dataset> {
    read_dataset(File::open(path)?, Some(k))
}
