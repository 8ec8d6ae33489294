use rand::Rng;
use rand_distr::StandardNormal;

use super::{DeepProMP, MotionPosterior, ViaPoint};
use crate::core_math::{AdamConfig, AdamState, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::latent_bayes::{DiagGaussian, VARIANCE_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Number of latent samples averaged in the objective.
    pub samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Anchor for the latent standard deviation; `None` uses the initial one.
    pub sigma_target: Option<Vec<f64>>,
    /// Maximum halvings of a rejected step before it is skipped.
    pub max_halvings: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { samples: 32, steps: 200, learning_rate: 1e-2, sigma_target: None, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub posterior: MotionPosterior,
    /// Objective before any step followed by its value after each step.
    pub objective: Vec<f64>,
    /// Largest absolute via-point error of the sample-averaged prediction,
    /// aligned with `objective`.
    pub max_error: Vec<f64>,
}

struct Problem<'a> {
    model: &'a DeepProMP,
    targets: &'a [ViaPoint],
    noise: Matrix,
    sigma_star: Matrix,
    /// `k·N` decoder phase rows: sample-major.
    phases: Matrix,
    target_rows: Matrix,
}

impl Problem<'_> {
    /// Objective graph in `(μ, σ)`; returns `(objective, averaged prediction)`.
    fn build(&self, tape: &mut Tape, mu: Var, sigma: Var) -> Result<(Var, Var)> {
        let k = self.noise.rows();
        let n = self.targets.len();
        let mu_k = tape.broadcast_rows(mu, k)?;
        let sig_k = tape.broadcast_rows(sigma, k)?;
        let eps = tape.constant(self.noise.clone());
        let spread = tape.mul(eps, sig_k)?;
        let z = tape.add(mu_k, spread)?;
        let zr = tape.gather_rows(z, (0..k * n).map(|r| r / n).collect())?;
        let ph = tape.constant(self.phases.clone());
        let input = tape.concat_cols(zr, ph)?;
        let dec = self.model.decoder.net.on_tape(tape, None);
        let y = dec.forward(tape, input)?;
        let ysum = tape.segment_sum_into(y, (0..k * n).map(|r| r % n).collect(), n)?;
        let ybar = tape.scale(ysum, 1.0 / k as f64);
        let target = tape.constant(self.target_rows.clone());
        let r = tape.sub(ybar, target)?;
        let r2 = tape.square(r);
        let fit = tape.sum(r2);
        let star = tape.constant(self.sigma_star.clone());
        let ds = tape.sub(star, sigma)?;
        let ds2 = tape.square(ds);
        let anchor = tape.sum(ds2);
        Ok((tape.add(fit, anchor)?, ybar))
    }

    fn eval(&self, mu: &Matrix, sigma: &Matrix) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let m = tape.constant(mu.clone());
        let s = tape.constant(sigma.clone());
        let (obj, ybar) = self.build(&mut tape, m, s)?;
        let err = tape
            .value(ybar)
            .as_slice()
            .iter()
            .zip(self.target_rows.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((tape.scalar(obj), err))
    }

    fn grad(&self, mu: &Matrix, sigma: &Matrix) -> Result<Vec<Matrix>> {
        let mut tape = Tape::new();
        let m = tape.param(0, mu);
        let s = tape.param(1, sigma);
        let (obj, _) = self.build(&mut tape, m, s)?;
        let mut g = tape.backward(obj)?;
        Ok(vec![
            g.take(0).unwrap_or_else(|| Matrix::zeros(1, mu.cols())),
            g.take(1).unwrap_or_else(|| Matrix::zeros(1, sigma.cols())),
        ])
    }
}

fn setup<'a, R: Rng + ?Sized>(
    model: &'a DeepProMP,
    init: &MotionPosterior,
    targets: &'a [ViaPoint],
    config: &RefineConfig,
    rng: &mut R,
) -> Result<Problem<'a>> {
    if init.phase_mode != model.phase_mode || init.q.dim() != model.latent_dim() {
        return Err(Error::arg("initial posterior was built for a different model"));
    }
    if targets.is_empty() {
        return Err(Error::arg("refinement needs at least one target via-point"));
    }
    if config.samples == 0 {
        return Err(Error::arg("refinement needs at least one latent sample"));
    }
    let l = model.latent_dim();
    let pw = model.phase_mode.width();
    let d = model.config_dim;
    let sigma_star = match &config.sigma_target {
        Some(s) if s.len() != l => {
            return Err(Error::shape(format!("sigma target has {} entries, latent {l}", s.len())))
        }
        Some(s) if s.iter().any(|v| !(*v > 0.0)) => return Err(Error::arg("sigma target must be positive")),
        Some(s) => s.clone(),
        None => init.q.std(),
    };
    let k = config.samples;
    let n = targets.len();
    let noise = Matrix::from_vec(k, l, (0..k * l).map(|_| rng.sample(StandardNormal)).collect())?;
    let mut phases = Matrix::zeros(k * n, pw);
    let mut target_rows = Matrix::zeros(n, d);
    for (i, t) in targets.iter().enumerate() {
        if t.phase.len() != pw || t.y.len() != d {
            return Err(Error::shape(format!("target {i} does not match the model's widths")));
        }
        target_rows.row_mut(i).copy_from_slice(&t.y);
        for j in 0..k {
            phases.row_mut(j * n + i).copy_from_slice(&t.phase);
        }
    }
    Ok(Problem { model, targets, noise, sigma_star: Matrix::row_vector(&sigma_star), phases, target_rows })
}

/// Value of the refinement objective at `(μ, σ)` with the noise that
/// [`refine_viapoints`] would draw from `rng`.
pub fn refine_objective<R: Rng + ?Sized>(
    model: &DeepProMP,
    init: &MotionPosterior,
    targets: &[ViaPoint],
    config: &RefineConfig,
    rng: &mut R,
) -> Result<RefineObjective> {
    let p = setup(model, init, targets, config, rng)?;
    Ok(RefineObjective {
        noise: p.noise,
        sigma_star: p.sigma_star,
        phases: p.phases,
        target_rows: p.target_rows,
        targets: targets.to_vec(),
    })
}

/// The refinement objective with its noise frozen, for inspection and
/// gradient checks.
#[derive(Debug, Clone)]
pub struct RefineObjective {
    noise: Matrix,
    sigma_star: Matrix,
    phases: Matrix,
    target_rows: Matrix,
    targets: Vec<ViaPoint>,
}

impl RefineObjective {
    fn problem<'a>(&'a self, model: &'a DeepProMP) -> Problem<'a> {
        Problem {
            model,
            targets: &self.targets,
            noise: self.noise.clone(),
            sigma_star: self.sigma_star.clone(),
            phases: self.phases.clone(),
            target_rows: self.target_rows.clone(),
        }
    }

    /// `[μ, σ]` as `1×L` matrices.
    pub fn value(&self, model: &DeepProMP, mu: &Matrix, sigma: &Matrix) -> Result<f64> {
        Ok(self.problem(model).eval(mu, sigma)?.0)
    }

    pub fn gradient(&self, model: &DeepProMP, mu: &Matrix, sigma: &Matrix) -> Result<Vec<Matrix>> {
        self.problem(model).grad(mu, sigma)
    }
}

/// Gradient refinement of a posterior towards target via-points.
///
/// Minimizes `Σᵢ ‖yᵢ − (1/k) Σⱼ decode(μ + εⱼσ, xᵢ)‖² + ‖σ* − σ‖²` with the
/// `εⱼ` drawn once. Each step takes the Adam direction and halves it until
/// the objective does not increase, so the trace is non-increasing.
pub fn refine_viapoints<R: Rng + ?Sized>(
    model: &DeepProMP,
    init: &MotionPosterior,
    targets: &[ViaPoint],
    config: &RefineConfig,
    rng: &mut R,
) -> Result<RefineResult> {
    let p = setup(model, init, targets, config, rng)?;
    let mut mu = Matrix::row_vector(init.q.mean());
    let mut sigma = Matrix::row_vector(&init.q.std());
    let (mut f, mut err) = p.eval(&mu, &sigma)?;
    if !f.is_finite() {
        return Err(Error::Numeric { location: "refinement objective at the initial posterior".into() });
    }
    let mut objective = vec![f];
    let mut max_error = vec![err];
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
    let mut moved = false;
    for step in 0..config.steps {
        let g = p.grad(&mu, &sigma)?;
        let dir = adam.direction(&g)?;
        let mut scale = 1.0;
        for _ in 0..=config.max_halvings {
            let mut mu_t = mu.clone();
            let mut sig_t = sigma.clone();
            for (v, dv) in mu_t.as_mut_slice().iter_mut().zip(dir[0].as_slice()) {
                *v += scale * dv;
            }
            for (v, dv) in sig_t.as_mut_slice().iter_mut().zip(dir[1].as_slice()) {
                *v += scale * dv;
            }
            let (f_t, e_t) = p.eval(&mu_t, &sig_t)?;
            if f_t.is_finite() && f_t <= f {
                mu = mu_t;
                sigma = sig_t;
                f = f_t;
                err = e_t;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !f.is_finite() {
            return Err(Error::Numeric { location: format!("refinement step {}", step + 1) });
        }
        objective.push(f);
        max_error.push(err);
    }
    if !moved {
        return Ok(RefineResult { posterior: init.clone(), objective, max_error });
    }
    let var = sigma.as_slice().iter().map(|s| (s * s).max(VARIANCE_FLOOR)).collect();
    Ok(RefineResult {
        posterior: MotionPosterior { q: DiagGaussian::new(mu.into_vec(), var)?, phase_mode: init.phase_mode },
        objective,
        max_error,
    })
}
