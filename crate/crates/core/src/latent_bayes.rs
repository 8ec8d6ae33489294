//! Closed-form algebra on diagonal Gaussians over the latent motion vector.
//!
//! Fusion works in information form: precisions add, and so do
//! precision-weighted means. The prior is always included at weight one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest variance any fused or blended distribution may carry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape(format!("mean has {} entries, variance {}", mean.len(), var.len())));
        }
        if mean.is_empty() {
            return Err(Error::arg("latent dimension must be at least 1"));
        }
        if let Some(v) = var.iter().find(|v| !(**v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return Err(Error::arg(format!("variance {v} is below the floor {VARIANCE_FLOOR}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric { location: "Gaussian mean".into() });
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }
}

/// Where a latent observation came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    ViaPoint,
    Context(String),
}

/// A Gaussian message about the latent produced by one encoder evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentObservation {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub source: Source,
}

impl LatentObservation {
    pub fn new(mean: Vec<f64>, var: Vec<f64>, source: Source) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("observation mean and variance differ in length"));
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::arg("observation variance must be positive"));
        }
        Ok(LatentObservation { mean, var, source })
    }
}

pub fn standard_prior(dim: usize) -> Result<DiagGaussian> {
    if dim == 0 {
        return Err(Error::arg("latent dimension must be at least 1"));
    }
    Ok(DiagGaussian { mean: vec![0.0; dim], var: vec![1.0; dim] })
}

/// Bayesian aggregation: `prior · Πᵢ q(z | oᵢ)`.
pub fn aggregate(prior: &DiagGaussian, obs: &[LatentObservation]) -> Result<DiagGaussian> {
    fuse(prior, obs.iter().map(|o| (o, 1.0)))
}

/// Aggregation with importance weights `ωᵢ ≥ 0` raising each message to a power.
/// The prior keeps weight one.
pub fn aggregate_weighted(prior: &DiagGaussian, obs: &[LatentObservation], weights: &[f64]) -> Result<DiagGaussian> {
    if weights.len() != obs.len() {
        return Err(Error::arg(format!("{} weights for {} observations", weights.len(), obs.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::arg(format!("importance weight {w} is not a non-negative number")));
    }
    fuse(prior, obs.iter().zip(weights.iter().copied()))
}

fn fuse<'a>(prior: &DiagGaussian, obs: impl Iterator<Item = (&'a LatentObservation, f64)>) -> Result<DiagGaussian> {
    let dim = prior.dim();
    let mut precision: Vec<f64> = prior.var.iter().map(|v| 1.0 / v).collect();
    let mut info: Vec<f64> = prior.mean.iter().zip(&prior.var).map(|(m, v)| m / v).collect();
    for (i, (o, w)) in obs.enumerate() {
        if o.mean.len() != dim || o.var.len() != dim {
            return Err(Error::shape(format!("observation {i} has dimension {}, prior {dim}", o.mean.len())));
        }
        if w == 0.0 {
            continue;
        }
        for k in 0..dim {
            precision[k] += w / o.var[k];
            info[k] += w * o.mean[k] / o.var[k];
        }
    }
    let var: Vec<f64> = precision.iter().map(|p| (1.0 / p).max(VARIANCE_FLOOR)).collect();
    let mean = info.iter().zip(&var).map(|(h, v)| h * v).collect();
    Ok(DiagGaussian { mean, var })
}

/// Geometric blend `q1^w · q2^(1−w)`, renormalized.
pub fn blend(q1: &DiagGaussian, q2: &DiagGaussian, w: f64) -> Result<DiagGaussian> {
    if q1.dim() != q2.dim() {
        return Err(Error::shape(format!("blending dimensions {} and {}", q1.dim(), q2.dim())));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::arg(format!("blend weight {w} outside [0, 1]")));
    }
    // Endpoints return the operand itself so that ω ≡ 1 and ω ≡ 0 reproduce
    // single-posterior results bit for bit.
    if w == 1.0 {
        return Ok(q1.clone());
    }
    if w == 0.0 {
        return Ok(q2.clone());
    }
    let mut mean = Vec::with_capacity(q1.dim());
    let mut var = Vec::with_capacity(q1.dim());
    for k in 0..q1.dim() {
        let p1 = 1.0 / q1.var[k];
        let p2 = 1.0 / q2.var[k];
        let v = (1.0 / (w * p1 + (1.0 - w) * p2)).max(VARIANCE_FLOOR);
        mean.push(v * (w * q1.mean[k] * p1 + (1.0 - w) * q2.mean[k] * p2));
        var.push(v);
    }
    Ok(DiagGaussian { mean, var })
}

/// Reparameterized draw `z = μ + ε·σ`.
pub fn sample(q: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != q.dim() {
        return Err(Error::shape(format!("noise has {} entries for a {}-dimensional latent", noise.len(), q.dim())));
    }
    Ok(q.mean.iter().zip(&q.var).zip(noise).map(|((m, v), e)| m + e * v.sqrt()).collect())
}

/// `KL(q ‖ N(0, I))`.
pub fn kl_to_prior(q: &DiagGaussian) -> f64 {
    q.mean.iter().zip(&q.var).map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln())).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    fn obs(mean: &[f64], var: &[f64]) -> LatentObservation {
        LatentObservation::new(mean.to_vec(), var.to_vec(), Source::ViaPoint).unwrap()
    }

    /// Sequential one-observation Bayes update, written out per coordinate.
    fn sequential_oracle(prior: &DiagGaussian, obs: &[LatentObservation]) -> DiagGaussian {
        let mut m = prior.mean().to_vec();
        let mut v = prior.var().to_vec();
        for o in obs {
            for k in 0..m.len() {
                let gain = v[k] / (v[k] + o.var[k]);
                m[k] += gain * (o.mean[k] - m[k]);
                v[k] *= 1.0 - gain;
            }
        }
        DiagGaussian { mean: m, var: v }
    }

    #[test]
    fn prior_definition() {
        let p = standard_prior(3).unwrap();
        assert_eq!(p.mean(), &[0.0, 0.0, 0.0]);
        assert_eq!(p.var(), &[1.0, 1.0, 1.0]);
        assert!(standard_prior(0).is_err());
        assert_eq!(kl_to_prior(&p), 0.0);
        assert_eq!(aggregate(&p, &[]).unwrap(), p);
    }

    #[test]
    fn single_and_double_observation() {
        let p = standard_prior(1).unwrap();
        let one = aggregate(&p, &[obs(&[1.0], &[1.0])]).unwrap();
        let oracle = sequential_oracle(&p, &[obs(&[1.0], &[1.0])]);
        assert!((one.mean()[0] - 0.5).abs() < 1e-15 && (one.var()[0] - 0.5).abs() < 1e-15);
        assert!((oracle.mean[0] - 0.5).abs() < 1e-15);

        let two = aggregate(&p, &[obs(&[1.0], &[1.0]), obs(&[1.0], &[1.0])]).unwrap();
        assert!((two.mean()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((two.var()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_cases() {
        let p = standard_prior(1).unwrap();
        let o = obs(&[1.0], &[1.0]);
        let w2 = aggregate_weighted(&p, std::slice::from_ref(&o), &[2.0]).unwrap();
        assert!((w2.mean()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w2.var()[0] - 1.0 / 3.0).abs() < 1e-15);

        let other = obs(&[-3.0], &[0.2]);
        let skip = aggregate_weighted(&p, &[o.clone(), other], &[1.0, 0.0]).unwrap();
        assert_eq!(skip, aggregate(&p, std::slice::from_ref(&o)).unwrap());
        assert!(matches!(aggregate_weighted(&p, &[o], &[-0.5]), Err(Error::Argument(_))));
    }

    #[test]
    fn shape_mismatch() {
        let p = standard_prior(2).unwrap();
        assert!(matches!(aggregate(&p, &[obs(&[1.0], &[1.0])]), Err(Error::Shape(_))));
    }

    #[test]
    fn blend_cases() {
        let q1 = g(&[0.0], &[1.0]);
        let q2 = g(&[2.0], &[1.0]);
        assert_eq!(blend(&q1, &q2, 1.0).unwrap(), q1);
        assert_eq!(blend(&q1, &q2, 0.0).unwrap(), q2);
        let mid = blend(&q1, &q2, 0.5).unwrap();
        assert!((mid.mean()[0] - 1.0).abs() < 1e-15 && (mid.var()[0] - 1.0).abs() < 1e-15);
        assert!(blend(&q1, &q2, 1.5).is_err());
        assert!(blend(&q1, &q2, -0.1).is_err());
    }

    #[test]
    fn sample_cases() {
        let q = g(&[1.0, -2.0], &[4.0, 0.25]);
        assert_eq!(sample(&q, &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(sample(&q, &[1.0, 2.0]).unwrap(), vec![3.0, -1.0]);
        let prior = standard_prior(2).unwrap();
        assert_eq!(sample(&prior, &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        assert!(sample(&q, &[0.0]).is_err());
    }

    #[test]
    fn sample_moments_match() {
        let q = g(&[0.7], &[2.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample(&q, &[rng.sample(StandardNormal)]).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (2.5 / n as f64).sqrt();
        // Standard error of the sample variance for a Gaussian: σ²·sqrt(2/(n-1)).
        let se_var = 2.5 * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - 0.7).abs() < 3.0 * se_mean, "{mean}");
        assert!((var - 2.5).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn kl_closed_form() {
        assert!((kl_to_prior(&g(&[1.0], &[1.0])) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = rng.random_range(1..8);
            let mean = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let var = (0..d).map(|_| rng.random_range(1e-3..10.0)).collect();
            assert!(kl_to_prior(&DiagGaussian::new(mean, var).unwrap()) >= 0.0);
        }
    }

    #[test]
    fn floor_is_applied() {
        let p = standard_prior(1).unwrap();
        let sharp = obs(&[2.0], &[1e-9]);
        let post = aggregate(&p, &[sharp]).unwrap();
        assert_eq!(post.var()[0], VARIANCE_FLOOR);
        assert!(DiagGaussian::new(vec![0.0], vec![1e-7]).is_err());
    }

    fn arb_obs(dim: usize) -> impl Strategy<Value = LatentObservation> {
        (prop::collection::vec(-3.0f64..3.0, dim), prop::collection::vec(0.05f64..5.0, dim))
            .prop_map(|(m, v)| LatentObservation::new(m, v, Source::ViaPoint).unwrap())
    }

    fn arb_case() -> impl Strategy<Value = (DiagGaussian, Vec<LatentObservation>)> {
        (1usize..6).prop_flat_map(|d| {
            (
                (prop::collection::vec(-2.0f64..2.0, d), prop::collection::vec(0.1f64..3.0, d))
                    .prop_map(|(m, v)| DiagGaussian::new(m, v).unwrap()),
                prop::collection::vec(arb_obs(d), 0..8),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_sequential_updates((prior, obs) in arb_case()) {
            let a = aggregate(&prior, &obs).unwrap();
            let o = sequential_oracle(&prior, &obs);
            for k in 0..prior.dim() {
                prop_assert!((a.mean()[k] - o.mean[k]).abs() < 1e-10);
                prop_assert!((a.var()[k] - o.var[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn permutation_invariant((prior, obs) in arb_case(), seed in any::<u64>()) {
            let mut shuffled = obs.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let a = aggregate(&prior, &obs).unwrap();
            let b = aggregate(&prior, &shuffled).unwrap();
            for k in 0..prior.dim() {
                prop_assert!((a.mean()[k] - b.mean()[k]).abs() < 1e-12);
                prop_assert!((a.var()[k] - b.var()[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn adding_an_observation_shrinks_variance((prior, obs) in arb_case(), extra in arb_obs(1)) {
            let d = prior.dim();
            let extra = LatentObservation::new(vec![extra.mean[0]; d], vec![extra.var[0]; d], Source::ViaPoint).unwrap();
            let before = aggregate(&prior, &obs).unwrap();
            let mut more = obs.clone();
            more.push(extra);
            let after = aggregate(&prior, &more).unwrap();
            for k in 0..d {
                prop_assert!(after.var()[k] < before.var()[k]);
            }
        }

        #[test]
        fn incremental_consistency((prior, obs) in arb_case(), split in 0usize..8) {
            let split = split.min(obs.len());
            let (a, b) = obs.split_at(split);
            let whole = aggregate(&prior, &obs).unwrap();
            let staged = aggregate(&aggregate(&prior, a).unwrap(), b).unwrap();
            for k in 0..prior.dim() {
                prop_assert!((whole.mean()[k] - staged.mean()[k]).abs() < 1e-12);
                prop_assert!((whole.var()[k] - staged.var()[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn self_blend_is_identity((q, _) in arb_case(), w in 0.0f64..=1.0) {
            let b = blend(&q, &q, w).unwrap();
            for k in 0..q.dim() {
                prop_assert!((b.mean()[k] - q.mean()[k]).abs() < 1e-12);
                prop_assert!((b.var()[k] - q.var()[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn integer_weight_equals_repetition((prior, obs) in arb_case(), k in 0usize..5) {
            prop_assume!(!obs.is_empty());
            let mut weights = vec![1.0; obs.len()];
            weights[0] = k as f64;
            let weighted = aggregate_weighted(&prior, &obs, &weights).unwrap();
            let mut repeated: Vec<_> = obs[1..].to_vec();
            repeated.extend(std::iter::repeat_n(obs[0].clone(), k));
            let plain = aggregate(&prior, &repeated).unwrap();
            for d in 0..prior.dim() {
                prop_assert!((weighted.mean()[d] - plain.mean()[d]).abs() < 1e-12);
                prop_assert!((weighted.var()[d] - plain.var()[d]).abs() < 1e-12);
            }
        }
    }
}
