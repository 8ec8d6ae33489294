use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Demonstration;

/// How conditioning sets are drawn for one training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePolicy {
    pub min_points: usize,
    pub max_points: usize,
    /// Probability of including each context channel independently.
    pub channel_prob: f64,
    /// Condition on every point and every channel.
    pub full: bool,
}

impl Default for SubsamplePolicy {
    fn default() -> Self {
        SubsamplePolicy { min_points: 1, max_points: 10, channel_prob: 0.5, full: false }
    }
}

impl SubsamplePolicy {
    pub fn full() -> Self {
        SubsamplePolicy { full: true, ..SubsamplePolicy::default() }
    }
}

/// Indices of conditioning via-points and the names of conditioning channels.
/// The reconstruction targets are always the demo's full point set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conditioning {
    pub via_points: Vec<usize>,
    pub channels: Vec<String>,
}

impl Conditioning {
    pub fn is_empty(&self) -> bool {
        self.via_points.is_empty() && self.channels.is_empty()
    }
}

/// Draws `n ~ U{min..=max}` via-points without replacement and keeps each
/// channel with the policy's probability. Empty draws are rejected and redrawn.
pub fn subsample_conditioning<R: Rng + ?Sized>(
    demo: &Demonstration,
    policy: &SubsamplePolicy,
    rng: &mut R,
) -> Conditioning {
    let n_points = demo.points.len();
    if policy.full {
        return Conditioning { via_points: (0..n_points).collect(), channels: demo.contexts.keys().cloned().collect() };
    }
    let hi = policy.max_points.min(n_points);
    let lo = policy.min_points.min(hi);
    // Nothing could ever be drawn; return the empty set rather than spin.
    if hi == 0 && (demo.contexts.is_empty() || policy.channel_prob <= 0.0) {
        return Conditioning { via_points: Vec::new(), channels: Vec::new() };
    }
    loop {
        let n = rng.random_range(lo..=hi);
        let mut via_points = sample(rng, n_points, n).into_vec();
        via_points.sort_unstable();
        let channels: Vec<String> =
            demo.contexts.keys().filter(|_| rng.random_bool(policy.channel_prob.clamp(0.0, 1.0))).cloned().collect();
        let c = Conditioning { via_points, channels };
        if !c.is_empty() {
            return c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sine_family, DatasetSpec, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo() -> Demonstration {
        let mut spec = DatasetSpec::new(Family::Sine, 1, 30, 0);
        spec.image = true;
        gen_sine_family(&spec).unwrap().demos.remove(0)
    }

    #[test]
    fn full_policy_uses_everything() {
        let d = demo();
        let c = subsample_conditioning(&d, &SubsamplePolicy::full(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c.via_points, (0..30).collect::<Vec<_>>());
        assert_eq!(c.channels, vec!["image".to_string(), "params".to_string()]);
    }

    #[test]
    fn never_empty_and_bounded() {
        let d = demo();
        let policy = SubsamplePolicy { min_points: 0, max_points: 3, channel_prob: 0.5, full: false };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let c = subsample_conditioning(&d, &policy, &mut rng);
            assert!(!c.is_empty());
            assert!(c.via_points.len() <= 3);
            assert!(c.via_points.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn channel_inclusion_frequency() {
        let d = demo();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                subsample_conditioning(&d, &SubsamplePolicy::default(), &mut rng).channels.iter().any(|c| c == "params")
            })
            .count();
        // Binomial(n, 0.5): σ = sqrt(n/4).
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma, "{hits}");
    }

    #[test]
    fn point_count_is_uniform_over_range() {
        let d = demo();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 11];
        for _ in 0..10_000 {
            counts[subsample_conditioning(&d, &SubsamplePolicy::default(), &mut rng).via_points.len()] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 - 1000.0).abs() < 150.0, "{counts:?}");
        }
    }
}
