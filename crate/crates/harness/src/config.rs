//! Run configuration files.
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//! model_kind = "deep_promp"
//!
//! [dataset]
//! path = "sine_train.jsonl"
//! limit = 200
//!
//! [training]
//! epochs = 2000
//! hidden = 64
//! learning_rate = 1e-3
//! ```
//!
//! Every key is checked before anything runs; the error lists all offending
//! keys at once.

use std::path::{Path, PathBuf};

use deep_promp::baselines::{CnmpConfig, CnmpVariant, PrompConfig};
use deep_promp::data::{DatasetSpec, Family, SubsamplePolicy};
use deep_promp::model::{KlMode, TrainingConfig};
use deep_promp::phase::PhaseMode;
use toml::{Table, Value};

pub const SCHEMA_VERSION: i64 = 1;

/// Configuration problems, each naming a key.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub problems: Vec<String>,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.problems {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    DeepPromp,
    Promp,
    Cnmp(CnmpVariant),
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deep_promp" => Some(ModelKind::DeepPromp),
            "promp" => Some(ModelKind::Promp),
            other => CnmpVariant::from_name(other).map(ModelKind::Cnmp),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DeepPromp => "deep_promp",
            ModelKind::Promp => "promp",
            ModelKind::Cnmp(v) => v.name(),
        }
    }
}

/// A validated training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub seed: u64,
    pub model_kind: ModelKind,
    pub dataset: PathBuf,
    pub limit: Option<usize>,
    pub training: TrainingConfig,
    pub promp: PrompConfig,
}

impl TrainRun {
    pub fn cnmp_config(&self) -> CnmpConfig {
        let t = &self.training;
        CnmpConfig {
            latent_dim: t.latent_dim,
            hidden: t.hidden,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta_max: t.beta_max,
            anneal_fraction: t.anneal_fraction,
            policy: t.policy,
            seed: t.seed,
        }
    }
}

struct Reader<'a> {
    problems: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn unknown(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for k in table.keys() {
            if !allowed.contains(&k.as_str()) {
                self.problems.push(format!("{prefix}{k}: unknown key"));
            }
        }
    }

    fn int(&mut self, t: &Table, prefix: &str, key: &str, min: i64) -> Option<i64> {
        match t.get(key) {
            None => None,
            Some(Value::Integer(v)) if *v >= min => Some(*v),
            Some(Value::Integer(v)) => {
                self.problems.push(format!("{prefix}{key}: {v} is below the minimum {min}"));
                None
            }
            Some(other) => {
                self.problems.push(format!("{prefix}{key}: expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, prefix: &str, key: &str, range: (f64, f64)) -> Option<f64> {
        let v = match t.get(key) {
            None => return None,
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                self.problems.push(format!("{prefix}{key}: expected a number, found {}", other.type_str()));
                return None;
            }
        };
        if !(range.0..=range.1).contains(&v) {
            self.problems.push(format!("{prefix}{key}: {v} outside [{}, {}]", range.0, range.1));
            return None;
        }
        Some(v)
    }

    fn string<'t>(&mut self, t: &'t Table, prefix: &str, key: &str) -> Option<&'t str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.problems.push(format!("{prefix}{key}: expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, prefix: &str, key: &str) -> Option<bool> {
        match t.get(key) {
            None => None,
            Some(Value::Boolean(b)) => Some(*b),
            Some(other) => {
                self.problems.push(format!("{prefix}{key}: expected a boolean, found {}", other.type_str()));
                None
            }
        }
    }

    fn table<'t>(&mut self, t: &'t Table, key: &str) -> Option<&'t Table> {
        match t.get(key) {
            None => None,
            Some(Value::Table(x)) => Some(x),
            Some(other) => {
                self.problems.push(format!("{key}: expected a table, found {}", other.type_str()));
                None
            }
        }
    }
}

fn parse_table(text: &str) -> Result<Table, SchemaError> {
    text.parse::<Table>().map_err(|e| SchemaError { problems: vec![format!("not valid TOML: {e}")] })
}

fn check_version(r: &mut Reader, root: &Table) {
    match root.get("schema_version") {
        None => r.problems.push("schema_version: missing".into()),
        Some(Value::Integer(SCHEMA_VERSION)) => {}
        Some(v) => r.problems.push(format!("schema_version: expected {SCHEMA_VERSION}, found {v}")),
    }
}

/// Parses a training configuration. Relative dataset paths resolve against
/// `base_dir`.
pub fn parse_train(text: &str, base_dir: &Path) -> Result<TrainRun, SchemaError> {
    let root = parse_table(text)?;
    let mut problems = Vec::new();
    let mut r = Reader { problems: &mut problems };
    r.unknown(&root, "", &["schema_version", "seed", "model_kind", "dataset", "training", "subsample", "promp"]);
    check_version(&mut r, &root);
    let seed = r.int(&root, "", "seed", 0).unwrap_or(0) as u64;
    let model_kind = match r.string(&root, "", "model_kind") {
        None => ModelKind::DeepPromp,
        Some(s) => ModelKind::parse(s).unwrap_or_else(|| {
            r.problems.push(format!("model_kind: unknown kind `{s}`"));
            ModelKind::DeepPromp
        }),
    };

    let mut dataset = None;
    let mut limit = None;
    match r.table(&root, "dataset") {
        None => r.problems.push("dataset.path: missing".into()),
        Some(t) => {
            r.unknown(t, "dataset.", &["path", "limit"]);
            match r.string(t, "dataset.", "path") {
                Some(p) => dataset = Some(base_dir.join(p)),
                None if !t.contains_key("path") => r.problems.push("dataset.path: missing".into()),
                None => {}
            }
            limit = r.int(t, "dataset.", "limit", 1).map(|v| v as usize);
        }
    }

    let mut training = TrainingConfig { seed, ..TrainingConfig::default() };
    if let Some(t) = r.table(&root, "training") {
        let p = "training.";
        r.unknown(
            t,
            p,
            &[
                "latent_dim",
                "hidden",
                "learning_rate",
                "batch_size",
                "epochs",
                "beta_max",
                "anneal_fraction",
                "sigma_y",
                "kl_mode",
            ],
        );
        if let Some(v) = r.int(t, p, "latent_dim", 1) {
            training.latent_dim = v as usize;
        }
        if let Some(v) = r.int(t, p, "hidden", 1) {
            training.hidden = v as usize;
        }
        if let Some(v) = r.int(t, p, "batch_size", 1) {
            training.batch_size = v as usize;
        }
        if let Some(v) = r.int(t, p, "epochs", 1) {
            training.epochs = v as usize;
        }
        if let Some(v) = r.float(t, p, "learning_rate", (f64::MIN_POSITIVE, 1.0)) {
            training.learning_rate = v;
        }
        if let Some(v) = r.float(t, p, "beta_max", (0.0, f64::MAX)) {
            training.beta_max = v;
        }
        if let Some(v) = r.float(t, p, "anneal_fraction", (0.0, 1.0)) {
            training.anneal_fraction = v;
        }
        if let Some(v) = r.float(t, p, "sigma_y", (f64::MIN_POSITIVE, f64::MAX)) {
            training.sigma_y = v;
        }
        match r.string(t, p, "kl_mode") {
            Some("analytic") => training.kl_mode = KlMode::Analytic,
            Some("per_observation") => training.kl_mode = KlMode::PerObservation,
            Some(other) => r.problems.push(format!("training.kl_mode: unknown mode `{other}`")),
            None => {}
        }
    }
    if let Some(t) = r.table(&root, "subsample") {
        let p = "subsample.";
        r.unknown(t, p, &["min_points", "max_points", "channel_prob", "full"]);
        let mut policy = SubsamplePolicy::default();
        if let Some(v) = r.int(t, p, "min_points", 0) {
            policy.min_points = v as usize;
        }
        if let Some(v) = r.int(t, p, "max_points", 1) {
            policy.max_points = v as usize;
        }
        if let Some(v) = r.float(t, p, "channel_prob", (0.0, 1.0)) {
            policy.channel_prob = v;
        }
        if let Some(v) = r.boolean(t, p, "full") {
            policy.full = v;
        }
        if policy.min_points > policy.max_points {
            r.problems.push("subsample.min_points: exceeds subsample.max_points".into());
        }
        training.policy = policy;
    }
    let mut promp = PrompConfig::default();
    if let Some(t) = r.table(&root, "promp") {
        let p = "promp.";
        r.unknown(t, p, &["bases", "ridge", "sigma_obs", "channels"]);
        if let Some(v) = r.int(t, p, "bases", 2) {
            promp.bases = v as usize;
        }
        if let Some(v) = r.float(t, p, "ridge", (0.0, f64::MAX)) {
            promp.ridge = v;
        }
        if let Some(v) = r.float(t, p, "sigma_obs", (0.0, f64::MAX)) {
            promp.sigma_obs = v;
        }
        match t.get("channels") {
            None => {}
            Some(Value::Array(a)) => {
                for v in a {
                    match v.as_str() {
                        Some(s) => promp.channels.push(s.to_string()),
                        None => r.problems.push("promp.channels: entries must be strings".into()),
                    }
                }
            }
            Some(_) => r.problems.push("promp.channels: expected an array of strings".into()),
        }
    }

    if !problems.is_empty() {
        return Err(SchemaError { problems });
    }
    Ok(TrainRun { seed, model_kind, dataset: dataset.expect("checked above"), limit, training, promp })
}

/// Parses a dataset-generation configuration (`[generate]` holds the spec).
pub fn parse_generate(text: &str) -> Result<DatasetSpec, SchemaError> {
    let root = parse_table(text)?;
    let mut problems = Vec::new();
    let mut r = Reader { problems: &mut problems };
    r.unknown(&root, "", &["schema_version", "seed", "generate"]);
    check_version(&mut r, &root);
    let seed = r.int(&root, "", "seed", 0).unwrap_or(0) as u64;
    let mut spec = DatasetSpec::new(Family::Sine, 200, 50, seed);
    match r.table(&root, "generate") {
        None => r.problems.push("generate: missing".into()),
        Some(t) => {
            let p = "generate.";
            r.unknown(t, p, &["family", "demos", "points", "noise", "image", "phase_mode", "duration", "height"]);
            match r.string(t, p, "family") {
                Some("sine") => spec.family = Family::Sine,
                Some("bimodal") => spec.family = Family::Bimodal,
                Some("reach2d") => spec.family = Family::Reach2d,
                Some(other) => r.problems.push(format!("generate.family: unknown family `{other}`")),
                None => r.problems.push("generate.family: missing".into()),
            }
            if let Some(v) = r.int(t, p, "demos", 1) {
                spec.demos = v as usize;
            }
            if let Some(v) = r.int(t, p, "points", 2) {
                spec.points = v as usize;
            }
            if let Some(v) = r.float(t, p, "noise", (0.0, f64::MAX)) {
                spec.noise = v;
            }
            if let Some(v) = r.boolean(t, p, "image") {
                spec.image = v;
            }
            if let Some(v) = r.float(t, p, "duration", (f64::MIN_POSITIVE, f64::MAX)) {
                spec.duration = v;
            }
            if let Some(v) = r.float(t, p, "height", (0.0, f64::MAX)) {
                spec.height = v;
            }
            if let Some(s) = r.string(t, p, "phase_mode") {
                match s.parse::<PhaseMode>() {
                    Ok(m) => spec.phase_mode = m,
                    Err(_) => r.problems.push(format!("generate.phase_mode: unknown mode `{s}`")),
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(SchemaError { problems });
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let run = parse_train("schema_version = 1\n[dataset]\npath = \"d.jsonl\"\n", Path::new("/x")).unwrap();
        assert_eq!(run.dataset, Path::new("/x/d.jsonl"));
        assert_eq!(run.model_kind, ModelKind::DeepPromp);
        assert_eq!(run.training.epochs, 2000);
    }

    #[test]
    fn every_problem_is_listed() {
        let text = "schema_version = 2\nbogus = 1\n[training]\nepochs = 0\nlearning_rat = 1.0\n";
        let err = parse_train(text, Path::new(".")).unwrap_err();
        let all = err.problems.join("\n");
        for needle in ["schema_version", "bogus", "dataset.path: missing", "training.epochs", "training.learning_rat"] {
            assert!(all.contains(needle), "{needle} not in {all}");
        }
    }

    #[test]
    fn seed_reaches_training() {
        let run = parse_train("schema_version = 1\nseed = 7\n[dataset]\npath = \"d\"\n", Path::new(".")).unwrap();
        assert_eq!(run.training.seed, 7);
    }

    #[test]
    fn cnmp_kinds_parse() {
        for k in ["cnmp", "vae_cnmp", "cnmp_indep", "vae_cnmp_indep", "promp", "deep_promp"] {
            assert_eq!(ModelKind::parse(k).unwrap().name(), k);
        }
        assert!(ModelKind::parse("gp").is_none());
    }
}
