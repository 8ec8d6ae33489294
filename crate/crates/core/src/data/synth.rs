use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Demonstration, TrajPoint, IMAGE_CHANNEL};
use crate::error::{Error, Result};
use crate::phase::PhaseMode;

/// Side length of the synthetic image channel.
pub const IMAGE_SIDE: usize = 16;

const SINE_AMPLITUDE: (f64, f64) = (0.5, 1.5);
const SINE_PHASE: (f64, f64) = (-FRAC_PI_4, FRAC_PI_4);
const SINE_OFFSET: (f64, f64) = (-0.5, 0.5);
/// Vertical extent mapped onto the image rows.
const IMAGE_Y_RANGE: (f64, f64) = (-2.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sine,
    Bimodal,
    Reach2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub family: Family,
    pub demos: usize,
    pub points: usize,
    #[serde(default)]
    pub noise: f64,
    /// Include the image-like channel in addition to the low-dimensional one.
    #[serde(default)]
    pub image: bool,
    #[serde(default = "default_phase_mode")]
    pub phase_mode: PhaseMode,
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Detour height of the bimodal family.
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_phase_mode() -> PhaseMode {
    PhaseMode::Linear
}

fn default_duration() -> f64 {
    1.0
}

fn default_height() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn new(family: Family, demos: usize, points: usize, seed: u64) -> Self {
        DatasetSpec {
            family,
            demos,
            points,
            noise: 0.0,
            image: false,
            phase_mode: PhaseMode::Linear,
            duration: 1.0,
            height: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.demos == 0 || self.points < 2 {
            return Err(Error::Validation(format!(
                "need at least one demo and two points per demo (got {} and {})",
                self.demos, self.points
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Validation(format!("noise {} is negative", self.noise)));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Validation(format!("duration {} is not positive", self.duration)));
        }
        Ok(())
    }

    fn times(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.duration } else { self.duration * i as f64 / last })
            .collect()
    }
}

pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec.family {
        Family::Sine => gen_sine_family(spec),
        Family::Bimodal => gen_bimodal(spec),
        Family::Reach2d => gen_reach2d(spec),
    }
}

fn noisy(rng: &mut ChaCha8Rng, noise: f64, v: f64) -> f64 {
    if noise > 0.0 {
        v + noise * rng.sample::<f64, _>(StandardNormal)
    } else {
        v
    }
}

/// `y(t) = a·sin(2πt/T + φ₀) + b` with per-demo `(a, φ₀, b)` exposed as the
/// `params` channel.
pub fn gen_sine_family(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = spec.times();
    let mut demos = Vec::with_capacity(spec.demos);
    for i in 0..spec.demos {
        let a = rng.random_range(SINE_AMPLITUDE.0..SINE_AMPLITUDE.1);
        let phi = rng.random_range(SINE_PHASE.0..SINE_PHASE.1);
        let b = rng.random_range(SINE_OFFSET.0..SINE_OFFSET.1);
        let curve = |x: f64| a * (TAU * x + phi).sin() + b;
        let points = times
            .iter()
            .map(|&t| TrajPoint { t, y: vec![noisy(&mut rng, spec.noise, curve(t / spec.duration))] })
            .collect();
        let mut contexts = BTreeMap::new();
        contexts.insert("params".to_string(), vec![a, phi, b]);
        if spec.image {
            contexts.insert(IMAGE_CHANNEL.to_string(), render_curve_image(curve));
        }
        demos.push(Demonstration { id: format!("sine-{i:05}"), duration: spec.duration, points, contexts });
    }
    Ok(Dataset { phase_mode: spec.phase_mode, config_dim: 1, demos })
}

/// Starts and ends at zero, passing through `+h` or `−h` at mid-time with
/// equal probability. No context channel reveals the branch.
pub fn gen_bimodal(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = spec.times();
    let mut demos = Vec::with_capacity(spec.demos);
    for i in 0..spec.demos {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let points = times
            .iter()
            .map(|&t| {
                let x = t / spec.duration;
                let clean = sign * spec.height * 4.0 * x * (1.0 - x);
                TrajPoint { t, y: vec![noisy(&mut rng, spec.noise, clean)] }
            })
            .collect();
        demos.push(Demonstration {
            id: format!("bimodal-{i:05}"),
            duration: spec.duration,
            points,
            contexts: BTreeMap::new(),
        });
    }
    Ok(Dataset { phase_mode: spec.phase_mode, config_dim: 1, demos })
}

/// Planar minimum-jerk reach from a jittered start to a goal; the goal is the
/// `target` channel.
pub fn gen_reach2d(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = spec.times();
    let mut demos = Vec::with_capacity(spec.demos);
    for i in 0..spec.demos {
        let start = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        let goal = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let points = times
            .iter()
            .map(|&t| {
                let x = t / spec.duration;
                let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
                TrajPoint {
                    t,
                    y: (0..2).map(|k| noisy(&mut rng, spec.noise, start[k] + (goal[k] - start[k]) * s)).collect(),
                }
            })
            .collect();
        let mut contexts = BTreeMap::new();
        contexts.insert("target".to_string(), goal.to_vec());
        if spec.image {
            contexts.insert(IMAGE_CHANNEL.to_string(), render_point_image(goal[0], goal[1]));
        }
        demos.push(Demonstration { id: format!("reach-{i:05}"), duration: spec.duration, points, contexts });
    }
    Ok(Dataset { phase_mode: spec.phase_mode, config_dim: 2, demos })
}

fn to_cell(v: f64, lo: f64, hi: f64) -> usize {
    let u = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (u * (IMAGE_SIDE - 1) as f64).round() as usize
}

/// Rasterizes a 1-D curve over phase `[0, 1]`: one lit pixel per column.
/// Row 0 is the top of the image.
pub fn render_curve_image(curve: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for col in 0..IMAGE_SIDE {
        let x = col as f64 / (IMAGE_SIDE - 1) as f64;
        let row = IMAGE_SIDE - 1 - to_cell(curve(x), IMAGE_Y_RANGE.0, IMAGE_Y_RANGE.1);
        img[row * IMAGE_SIDE + col] = 1.0;
    }
    img
}

/// A single bright pixel at a planar position in `[−1, 1]²`.
pub fn render_point_image(px: f64, py: f64) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    let col = to_cell(px, -1.0, 1.0);
    let row = IMAGE_SIDE - 1 - to_cell(py, -1.0, 1.0);
    img[row * IMAGE_SIDE + col] = 1.0;
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_period_hits_amplitude() {
        // a = 1, φ₀ = 0, b = 0 evaluated the way the generator does.
        let curve = |x: f64| 1.0 * (TAU * x + 0.0).sin() + 0.0;
        assert_eq!(curve(0.25), 1.0);
    }

    #[test]
    fn seeded_regeneration_is_identical() {
        let mut spec = DatasetSpec::new(Family::Sine, 5, 20, 42);
        spec.noise = 0.01;
        spec.image = true;
        assert_eq!(gen_sine_family(&spec).unwrap(), gen_sine_family(&spec).unwrap());
        spec.seed = 43;
        assert_ne!(
            gen_sine_family(&spec).unwrap(),
            gen_sine_family(&DatasetSpec { seed: 42, ..spec.clone() }).unwrap()
        );
    }

    #[test]
    fn amplitude_matches_context() {
        let spec = DatasetSpec::new(Family::Sine, 20, 101, 7);
        let ds = gen_sine_family(&spec).unwrap();
        for d in &ds.demos {
            let a = d.contexts["params"][0];
            // Least-squares fit of A·sin + B·cos + c recovers the amplitude exactly
            // for noiseless data.
            let rows: Vec<[f64; 3]> = d
                .points
                .iter()
                .map(|p| {
                    let x = p.t / d.duration;
                    [(TAU * x).sin(), (TAU * x).cos(), 1.0]
                })
                .collect();
            let ys: Vec<f64> = d.points.iter().map(|p| p.y[0]).collect();
            let m = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
            let y = nalgebra::DVector::from_vec(ys.clone());
            let coef = (m.transpose() * &m).lu().solve(&(m.transpose() * y)).unwrap();
            let fitted = (coef[0] * coef[0] + coef[1] * coef[1]).sqrt();
            assert!((fitted - a).abs() < 1e-9, "{fitted} vs {a}");

            // Peak-to-peak over the sampled grid, within the grid's resolution.
            let max = ys.iter().cloned().fold(f64::MIN, f64::max);
            let min = ys.iter().cloned().fold(f64::MAX, f64::min);
            let half_step = std::f64::consts::PI / 100.0;
            let slack = a * (1.0 - half_step.cos()) + 1e-12;
            assert!(((max - min) / 2.0 - a).abs() <= slack);
        }
    }

    #[test]
    fn bimodal_construction() {
        let mut spec = DatasetSpec::new(Family::Bimodal, 1000, 21, 3);
        spec.height = 0.8;
        let ds = gen_bimodal(&spec).unwrap();
        let mut up = 0;
        for d in &ds.demos {
            assert_eq!(d.points[0].y[0], 0.0);
            assert_eq!(d.points.last().unwrap().y[0], 0.0);
            let mid = d.points[10].y[0];
            assert_eq!(mid.abs(), 0.8);
            if mid > 0.0 {
                up += 1;
            }
            assert!(d.contexts.is_empty());
        }
        // Binomial(1000, 0.5): σ = sqrt(250).
        assert!((up as f64 - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{up}");
    }

    #[test]
    fn reach_targets_and_images() {
        let mut spec = DatasetSpec::new(Family::Reach2d, 10, 30, 1);
        spec.image = true;
        let ds = gen_reach2d(&spec).unwrap();
        ds.validate().unwrap();
        for d in &ds.demos {
            let end = &d.points.last().unwrap().y;
            let goal = &d.contexts["target"];
            assert!((end[0] - goal[0]).abs() < 1e-12 && (end[1] - goal[1]).abs() < 1e-12);
            let img = &d.contexts[IMAGE_CHANNEL];
            assert_eq!(img.len(), IMAGE_SIDE * IMAGE_SIDE);
            assert_eq!(img.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn curve_image_has_one_pixel_per_column() {
        let img = render_curve_image(|x| x);
        for col in 0..IMAGE_SIDE {
            let lit: f64 = (0..IMAGE_SIDE).map(|r| img[r * IMAGE_SIDE + col]).sum();
            assert_eq!(lit, 1.0);
        }
    }

    #[test]
    fn invalid_spec() {
        assert!(gen_sine_family(&DatasetSpec::new(Family::Sine, 0, 10, 0)).is_err());
        let mut s = DatasetSpec::new(Family::Sine, 1, 10, 0);
        s.noise = -1.0;
        assert!(gen_sine_family(&s).is_err());
    }
}
