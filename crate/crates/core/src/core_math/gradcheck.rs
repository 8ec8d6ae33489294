use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Added to the denominator of the relative error.
    pub eps: f64,
    /// Check a random subset of at most this many entries; `None` checks all.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, eps: 1e-6, max_entries: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Compares analytic gradients against central finite differences.
///
/// The relative error of an entry is `|a − c| / (|a| + |c| + eps)`; the
/// report carries the maximum over all checked entries.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[Matrix],
    analytic: &[Matrix],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    if !(opts.step > 0.0) {
        return Err(Error::arg(format!("finite-difference step must be > 0, got {}", opts.step)));
    }
    if params.len() != analytic.len() || params.iter().zip(analytic).any(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::shape("analytic gradients do not match parameter shapes"));
    }

    let mut index: Vec<(usize, usize)> =
        params.iter().enumerate().flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i))).collect();
    if let Some(limit) = opts.max_entries {
        if limit < index.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, index.len(), limit).into_vec();
            picked.sort_unstable();
            index = picked.into_iter().map(|k| index[k]).collect();
        }
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, entries_checked: 0, worst: (0, 0) };
    for (t, i) in index {
        let orig = work[t].as_slice()[i];
        work[t].as_mut_slice()[i] = orig + opts.step;
        let up = loss(&work)?;
        work[t].as_mut_slice()[i] = orig - opts.step;
        let down = loss(&work)?;
        work[t].as_mut_slice()[i] = orig;

        let central = (up - down) / (2.0 * opts.step);
        let a = analytic[t].as_slice()[i];
        let rel = (a - central).abs() / (a.abs() + central.abs() + opts.eps);
        if !rel.is_finite() {
            return Err(Error::Numeric { location: format!("finite difference of tensor {t} entry {i}") });
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (t, i);
        }
        report.entries_checked += 1;
    }
    Ok(report)
}
