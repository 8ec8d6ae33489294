//! The `dpromp` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use deep_promp::baselines::{cnmp_train, promp_fit};
use deep_promp::checkpoint::{sha256_hex, AnyModel, Checkpoint};
use deep_promp::data::{gen_dataset, read_dataset, save_dataset, Dataset};
use deep_promp::model::{refine_viapoints, train, DeepProMP, Evidence, RefineConfig, ViaPoint};
use deep_promp::phase::{PhaseMode, PhaseSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{parse_generate, parse_train, ModelKind};
use crate::error::{io_err, HarnessError, Result};
use crate::eval::{evaluate, EvalMode};
use crate::plot::line_plot;

#[derive(Debug, Parser)]
#[command(name = "dpromp", version, about = "Train, evaluate and run deep probabilistic movement primitives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a configuration file.
    Train(TrainArgs),
    /// Reconstruction metrics of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Decode one trajectory sampled from the prior.
    Generate(GenerateArgs),
    /// Predictive mean and variance given via-points and contexts.
    Condition(ConditionArgs),
    /// Time-varying blend of two conditioned motions.
    Blend(BlendArgs),
    /// Refine a posterior towards target via-points by gradient descent.
    Refine(RefineArgs),
    /// Write a synthetic dataset.
    DatasetGen(DatasetGenArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for `model.json` and `loss_trace.csv`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configuration's model kind.
    #[arg(long)]
    pub model_kind: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated modes: via_point, low_dim, image_like, low+image.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct GridArgs {
    /// Movement duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Number of output rows.
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    /// Periods covered by the grid (rhythmic models only).
    #[arg(long, default_value_t = 1)]
    pub periods: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG plot path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with header `t,y0,…` of via-points.
    #[arg(long)]
    pub via: Option<PathBuf>,
    /// Context observation `name=v1,v2,…`; repeatable.
    #[arg(long = "context")]
    pub contexts: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Monte-Carlo latent samples.
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Via-points of the first motion.
    #[arg(long)]
    pub via1: PathBuf,
    /// Via-points of the second motion.
    #[arg(long)]
    pub via2: PathBuf,
    /// Weight of the first motion: a constant in [0, 1] or `ramp` (1 to 0).
    #[arg(long, default_value = "ramp")]
    pub omega: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with header `t,y0,…` of target via-points.
    #[arg(long)]
    pub targets: PathBuf,
    /// Initial distribution: `posterior` (conditioned on the targets) or `prior`.
    #[arg(long, default_value = "posterior")]
    pub init: String,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `refine_trace.csv` and `refined.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Condition(a) => cmd_condition(a),
        Command::Blend(a) => cmd_blend(a),
        Command::Refine(a) => cmd_refine(a),
        Command::DatasetGen(a) => cmd_dataset_gen(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

fn load_dataset_bytes(path: &Path, limit: Option<usize>) -> Result<(Dataset, String)> {
    let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    let ds = read_dataset(bytes.as_slice(), limit)?;
    Ok((ds, sha256_hex(&bytes)))
}

fn load_checkpoint(path: &Path) -> Result<(AnyModel, Option<usize>)> {
    let ckpt = Checkpoint::from_json(&read_text(path)?)?;
    let epochs = ckpt.training.as_ref().and_then(|t| t.get("epochs")).and_then(|e| e.as_u64()).map(|e| e as usize);
    Ok((ckpt.into_model()?, epochs))
}

fn deep_model(model: AnyModel, verb: &str) -> Result<DeepProMP> {
    match model {
        AnyModel::DeepProMP(m) => Ok(m),
        other => Err(HarnessError::Usage(format!("`{verb}` needs a deep_promp checkpoint, got {}", other.kind()))),
    }
}

/// Formats a float so that parsing it back gives the same bits.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_text(header: &[String], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| num(*v)))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Usage(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn y_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

/// Timestamps and phase inputs of an output grid. Rhythmic grids place an
/// equal number of rows in each period and reuse the phase of the matching
/// row in the first period, so `t` and `t + T` decode identically.
pub fn time_grid(mode: PhaseMode, grid: &GridArgs) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let spec = PhaseSpec::new(mode, grid.duration)?;
    if grid.samples < 2 {
        return Err(HarnessError::Usage("--samples must be at least 2".into()));
    }
    match mode {
        PhaseMode::Linear => {
            if grid.periods != 1 {
                return Err(HarnessError::Usage("--periods applies to rhythmic models only".into()));
            }
            let n = grid.samples - 1;
            let ts: Vec<f64> = (0..=n).map(|i| grid.duration * i as f64 / n as f64).collect();
            let ph = ts.iter().map(|&t| spec.phase(t)).collect::<deep_promp::Result<_>>()?;
            Ok((ts, ph))
        }
        PhaseMode::Rhythmic => {
            let n = grid.samples - 1;
            if grid.periods == 0 || !n.is_multiple_of(grid.periods) {
                return Err(HarnessError::Usage("--samples minus one must be a multiple of --periods".into()));
            }
            let per = n / grid.periods;
            let ts: Vec<f64> = (0..=n).map(|i| grid.duration * i as f64 / per as f64).collect();
            let ph = (0..=n)
                .map(|i| spec.phase(grid.duration * (i % per) as f64 / per as f64))
                .collect::<deep_promp::Result<_>>()?;
            Ok((ts, ph))
        }
    }
}

/// Reads `t,y0,…` rows into via-points.
pub fn read_via_csv(path: &Path, spec: &PhaseSpec) -> Result<Vec<ViaPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Usage(format!("{} row {}: {e}", path.display(), i + 2)))?;
        if vals.len() < 2 {
            return Err(HarnessError::Usage(format!("{} row {}: need t and at least one y", path.display(), i + 2)));
        }
        out.push(ViaPoint { phase: spec.phase(vals[0])?, y: vals[1..].to_vec() });
    }
    Ok(out)
}

fn parse_contexts(items: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    items
        .iter()
        .map(|s| {
            let (name, vals) =
                s.split_once('=').ok_or_else(|| HarnessError::Usage(format!("context `{s}` is not name=v1,v2,…")))?;
            let v = vals
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::Usage(format!("context `{name}`: {e}")))?;
            Ok((name.to_string(), v))
        })
        .collect()
}

fn maybe_plot(path: Option<&PathBuf>, title: &str, ts: &[f64], rows: &[Vec<f64>], cols: &[String]) -> Result<()> {
    if let Some(p) = path {
        let series: Vec<(String, Vec<f64>)> =
            cols.iter().enumerate().map(|(j, c)| (c.clone(), rows.iter().map(|r| r[j]).collect())).collect();
        write_text(p, &line_plot(title, ts, &series))?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut run = parse_train(&read_text(&a.config)?, &base)?;
    if let Some(s) = a.seed {
        run.seed = s;
        run.training.seed = s;
    }
    if let Some(k) = &a.model_kind {
        run.model_kind = ModelKind::parse(k).ok_or_else(|| HarnessError::Usage(format!("unknown model kind `{k}`")))?;
    }
    let (dataset, _) = load_dataset_bytes(&run.dataset, run.limit)?;
    let (ckpt, trace) = match run.model_kind {
        ModelKind::DeepPromp => {
            let t = train(&dataset, &run.training)?;
            (Checkpoint::with_training(&AnyModel::DeepProMP(t.model), &run.training), t.loss_trace)
        }
        ModelKind::Promp => {
            let m = promp_fit(&dataset, &run.promp)?;
            (Checkpoint::with_training(&AnyModel::Promp(m), &run.promp), Vec::new())
        }
        ModelKind::Cnmp(v) => {
            let cfg = run.cnmp_config();
            let t = cnmp_train(&dataset, v, &cfg)?;
            (Checkpoint::with_training(&AnyModel::Cnmp(t.model), &cfg), t.loss_trace)
        }
    };
    write_text(&a.out.join("model.json"), &ckpt.to_json())?;
    let rows: Vec<Vec<f64>> = trace.iter().enumerate().map(|(e, l)| vec![(e + 1) as f64, *l]).collect();
    let mut text = String::from("epoch,loss\n");
    for r in &rows {
        text.push_str(&format!("{},{}\n", r[0] as usize, num(r[1])));
    }
    write_text(&a.out.join("loss_trace.csv"), &text)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, epochs) = load_checkpoint(&a.checkpoint)?;
    let (dataset, hash) = load_dataset_bytes(&a.dataset, None)?;
    if dataset.phase_mode != model.phase_mode() {
        return Err(HarnessError::Usage(format!(
            "checkpoint uses {} phase, dataset {}",
            model.phase_mode().as_str(),
            dataset.phase_mode.as_str()
        )));
    }
    let modes = if a.mode.is_empty() {
        EvalMode::ALL.to_vec()
    } else {
        a.mode
            .iter()
            .map(|m| EvalMode::parse(m).ok_or_else(|| HarnessError::Usage(format!("unknown mode `{m}`"))))
            .collect::<Result<Vec<_>>>()?
    };
    let report = evaluate(&model, &dataset, &modes, a.seed, epochs, hash)?;
    match &a.out {
        Some(p) => write_text(p, &report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let model = deep_model(load_checkpoint(&a.checkpoint)?.0, "generate")?;
    let (ts, phases) = time_grid(model.phase_mode, &a.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let eps = noise(&mut rng, model.latent_dim());
    let ys = model.generate(&model.prior(), &phases, &eps)?;
    let cols = y_header("y", model.config_dim);
    let rows: Vec<Vec<f64>> = ts.iter().zip(&ys).map(|(t, y)| [vec![*t], y.clone()].concat()).collect();
    write_text(&a.out, &csv_text(&[vec!["t".to_string()], cols.clone()].concat(), &rows)?)?;
    maybe_plot(a.plot.as_ref(), "generate", &ts, &ys, &cols)
}

fn cmd_condition(a: ConditionArgs) -> Result<()> {
    let model = deep_model(load_checkpoint(&a.checkpoint)?.0, "condition")?;
    let spec = PhaseSpec::new(model.phase_mode, a.grid.duration)?;
    let ev = Evidence {
        via_points: match &a.via {
            Some(p) => read_via_csv(p, &spec)?,
            None => Vec::new(),
        },
        contexts: parse_contexts(&a.contexts)?,
    };
    let (ts, phases) = time_grid(model.phase_mode, &a.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let dist = model.condition(&ev, None, &phases, a.k, &mut rng)?;
    let d = model.config_dim;
    let header = [vec!["t".to_string()], y_header("mean_y", d), y_header("var_y", d)].concat();
    let rows: Vec<Vec<f64>> =
        (0..ts.len()).map(|i| [vec![ts[i]], dist.mean[i].clone(), dist.var[i].clone()].concat()).collect();
    write_text(&a.out, &csv_text(&header, &rows)?)?;
    maybe_plot(a.plot.as_ref(), "condition", &ts, &dist.mean, &y_header("mean_y", d))
}

fn cmd_blend(a: BlendArgs) -> Result<()> {
    let model = deep_model(load_checkpoint(&a.checkpoint)?.0, "blend")?;
    let spec = PhaseSpec::new(model.phase_mode, a.grid.duration)?;
    let ev =
        |p: &Path| -> Result<Evidence> { Ok(Evidence { via_points: read_via_csv(p, &spec)?, contexts: Vec::new() }) };
    let q1 = model.posterior(&ev(&a.via1)?, None)?;
    let q2 = model.posterior(&ev(&a.via2)?, None)?;
    let (ts, phases) = time_grid(model.phase_mode, &a.grid)?;
    let n = ts.len();
    let omega: Vec<f64> = match a.omega.as_str() {
        "ramp" => (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect(),
        s => {
            let w: f64 =
                s.parse().map_err(|_| HarnessError::Usage(format!("--omega `{s}` is neither a number nor `ramp`")))?;
            vec![w; n]
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let eps = noise(&mut rng, model.latent_dim());
    let out = model.blend_trajectories(&q1, &q2, &omega, &phases, &eps)?;
    let cols = y_header("y", model.config_dim);
    let header = [vec!["t".to_string(), "omega".to_string()], cols.clone()].concat();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| [vec![ts[i], omega[i]], out.y[i].clone()].concat()).collect();
    write_text(&a.out, &csv_text(&header, &rows)?)?;
    maybe_plot(a.plot.as_ref(), "blend", &ts, &out.y, &cols)
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let model = deep_model(load_checkpoint(&a.checkpoint)?.0, "refine")?;
    let spec = PhaseSpec::new(model.phase_mode, a.grid.duration)?;
    let targets = read_via_csv(&a.targets, &spec)?;
    if targets.is_empty() {
        return Err(HarnessError::Usage("refinement needs at least one target".into()));
    }
    let init = match a.init.as_str() {
        "posterior" => model.posterior(&Evidence { via_points: targets.clone(), contexts: Vec::new() }, None)?,
        "prior" => model.prior(),
        other => return Err(HarnessError::Usage(format!("--init must be posterior or prior, got `{other}`"))),
    };
    let config = RefineConfig { samples: a.k, steps: a.steps, ..RefineConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let res = refine_viapoints(&model, &init, &targets, &config, &mut rng)?;
    let trace: Vec<Vec<f64>> =
        res.objective.iter().zip(&res.max_error).enumerate().map(|(s, (f, e))| vec![s as f64, *f, *e]).collect();
    let mut text = String::from("step,objective,max_via_error\n");
    for r in &trace {
        text.push_str(&format!("{},{},{}\n", r[0] as usize, num(r[1]), num(r[2])));
    }
    write_text(&a.out.join("refine_trace.csv"), &text)?;
    let (ts, phases) = time_grid(model.phase_mode, &a.grid)?;
    let ys = model.decode_path(res.posterior.q.mean(), &phases)?;
    let cols = y_header("y", model.config_dim);
    let rows: Vec<Vec<f64>> = ts.iter().zip(&ys).map(|(t, y)| [vec![*t], y.clone()].concat()).collect();
    write_text(&a.out.join("refined.csv"), &csv_text(&[vec!["t".to_string()], cols].concat(), &rows)?)
}

fn cmd_dataset_gen(a: DatasetGenArgs) -> Result<()> {
    let mut spec = parse_generate(&read_text(&a.config)?)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ds = gen_dataset(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    save_dataset(&ds, &a.out)?;
    Ok(())
}
