//! Reconstruction metrics per conditioning mode.
//!
//! Each mode picks what the model may see of a held-out demonstration; the
//! model then predicts the whole trajectory and the squared error is
//! averaged over every point and dimension. Context modes also get the
//! demonstration's first point as a via-point (the initial robot position).

use std::fmt::Write as _;

use deep_promp::checkpoint::AnyModel;
use deep_promp::data::{Conditioning, Dataset, Demonstration, IMAGE_CHANNEL};
use deep_promp::model::Evidence;
use deep_promp::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples used for the Monte-Carlo predictive mean of the deep model.
pub const EVAL_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    ViaPoint,
    LowDim,
    ImageLike,
    LowImage,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::ViaPoint, EvalMode::LowDim, EvalMode::ImageLike, EvalMode::LowImage];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::ViaPoint => "via_point",
            EvalMode::LowDim => "low_dim",
            EvalMode::ImageLike => "image_like",
            EvalMode::LowImage => "low+image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EvalMode::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Indices and channels visible in this mode, or `None` when the demo
    /// has nothing of the required kind.
    pub fn selection(self, demo: &Demonstration) -> Option<Conditioning> {
        let low: Vec<String> = demo.contexts.keys().filter(|c| *c != IMAGE_CHANNEL).cloned().collect();
        let image = demo.contexts.contains_key(IMAGE_CHANNEL);
        let with_start = |channels: Vec<String>| Conditioning { via_points: vec![0], channels };
        match self {
            EvalMode::ViaPoint => {
                Some(Conditioning { via_points: (0..demo.points.len()).collect(), channels: Vec::new() })
            }
            EvalMode::LowDim => (!low.is_empty()).then(|| with_start(low)),
            EvalMode::ImageLike => image.then(|| with_start(vec![IMAGE_CHANNEL.to_string()])),
            EvalMode::LowImage => (image && !low.is_empty()).then(|| {
                let mut all = low;
                all.push(IMAGE_CHANNEL.to_string());
                all.sort();
                with_start(all)
            }),
        }
    }
}

/// Whether `model` can consume evidence with exactly these channels.
pub fn supports(model: &AnyModel, ev: &Evidence) -> bool {
    match model {
        AnyModel::DeepProMP(m) => ev.contexts.iter().all(|(c, _)| m.encoders.channels.contains_key(c)),
        AnyModel::Promp(m) => ev.contexts.iter().all(|(c, _)| m.has_channel(c)),
        AnyModel::Cnmp(m) => m.rows(ev).is_ok(),
    }
}

/// Predicted mean trajectory at the given phases.
pub fn predict(model: &AnyModel, ev: &Evidence, phases: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    match model {
        AnyModel::DeepProMP(m) => Ok(m.condition(ev, None, phases, EVAL_SAMPLES, rng)?.mean),
        AnyModel::Promp(m) => {
            let post = m.condition_evidence(ev, m.sigma_obs)?;
            phases.iter().map(|p| post.predict(p)).collect()
        }
        AnyModel::Cnmp(m) => Ok(m.forward(ev, phases)?.mean),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub mode: &'static str,
    /// `None` when the model cannot be evaluated in this mode.
    pub mse: Option<f64>,
}

impl ModeResult {
    pub fn log10(&self) -> Option<f64> {
        self.mse.map(f64::log10)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub dataset_sha256: String,
    pub demos: usize,
    /// The four modes followed by `aggregate`.
    pub rows: Vec<ModeResult>,
}

impl EvalReport {
    pub fn get(&self, mode: &str) -> Option<&ModeResult> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn aggregate(&self) -> Option<f64> {
        self.get("aggregate").and_then(|r| r.mse)
    }

    pub const CSV_HEADER: &'static str = "model,mode,mse,log10_mse,seed,epochs,demos,dataset_sha256";

    /// CSV rows without the header; `NA` marks unsupported modes.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:e}"));
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.model,
                r.mode,
                fmt(r.mse),
                fmt(r.log10()),
                self.seed,
                self.epochs.map_or_else(|| "NA".to_string(), |e| e.to_string()),
                self.demos,
                self.dataset_sha256
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}

/// MSE of one mode over a dataset, or `None` if any demo cannot be
/// conditioned in this mode.
pub fn mode_mse(model: &AnyModel, dataset: &Dataset, mode: EvalMode, seed: u64) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut se = 0.0;
    let mut n = 0usize;
    for demo in &dataset.demos {
        let Some(sel) = mode.selection(demo) else { return Ok(None) };
        let ev = Evidence::from_demo(demo, dataset.phase_mode, &sel)?;
        if !supports(model, &ev) {
            return Ok(None);
        }
        let phases = demo.phases(dataset.phase_mode)?;
        let pred = predict(model, &ev, &phases, &mut rng)?;
        for (p, y) in demo.points.iter().zip(&pred) {
            for (a, b) in p.y.iter().zip(y) {
                se += (a - b) * (a - b);
                n += 1;
            }
        }
    }
    Ok(Some(se / n as f64))
}

/// Evaluates the requested modes. `aggregate` is the mean of the four mode
/// MSEs and is only reported when all four are available.
pub fn evaluate(
    model: &AnyModel,
    dataset: &Dataset,
    modes: &[EvalMode],
    seed: u64,
    epochs: Option<usize>,
    dataset_sha256: String,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for &mode in modes {
        rows.push(ModeResult { mode: mode.name(), mse: mode_mse(model, dataset, mode, seed)? });
    }
    let four: Vec<Option<f64>> =
        EvalMode::ALL.iter().map(|m| rows.iter().find(|r| r.mode == m.name()).and_then(|r| r.mse)).collect();
    let aggregate =
        if four.iter().all(Option::is_some) { Some(four.iter().flatten().sum::<f64>() / 4.0) } else { None };
    rows.push(ModeResult { mode: "aggregate", mse: aggregate });
    Ok(EvalReport { model: model.kind().to_string(), seed, epochs, dataset_sha256, demos: dataset.demos.len(), rows })
}
