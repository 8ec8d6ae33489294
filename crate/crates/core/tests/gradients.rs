use std::collections::BTreeMap;

use deep_promp::core_math::{finite_diff_check, GradCheckOptions, Matrix, Tape};
use deep_promp::model::{
    elbo_loss, elbo_value, refine_objective, DeepProMP, ElboBatch, ElboExample, Evidence, KlMode, RefineConfig,
    ViaPoint,
};
use deep_promp::phase::PhaseMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TOL: f64 = 1e-4;

fn small_model(mode: PhaseMode, seed: u64) -> DeepProMP {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = BTreeMap::from([("goal".to_string(), 3)]);
    DeepProMP::new(mode, 2, &channels, 4, 8, 0.05, &mut rng).unwrap()
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn phase(mode: PhaseMode, x: f64) -> Vec<f64> {
    match mode {
        PhaseMode::Linear => vec![x],
        PhaseMode::Rhythmic => vec![(std::f64::consts::TAU * x).sin(), (std::f64::consts::TAU * x).cos()],
    }
}

fn examples(mode: PhaseMode, rng: &mut ChaCha8Rng) -> Vec<ElboExample> {
    (0..3)
        .map(|i| {
            let via_points = (0..=i).map(|_| ViaPoint { phase: phase(mode, rng.random()), y: gauss(rng, 2) }).collect();
            let contexts = if i != 1 { vec![("goal".to_string(), gauss(rng, 3))] } else { Vec::new() };
            let xs: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            ElboExample {
                evidence: Evidence { via_points, contexts },
                target_phases: xs.iter().map(|&x| phase(mode, x)).collect(),
                targets: xs.iter().map(|_| gauss(rng, 2)).collect(),
                noise: gauss(rng, 4),
            }
        })
        .collect()
}

fn with_params(model: &DeepProMP, params: &[Matrix]) -> DeepProMP {
    let mut m = model.clone();
    for (dst, src) in m.params_mut().into_iter().zip(params) {
        *dst = src.clone();
    }
    m
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { max_entries: Some(120), seed, ..GradCheckOptions::default() }
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    for (mode, kl, seed) in [
        (PhaseMode::Linear, KlMode::Analytic, 1),
        (PhaseMode::Linear, KlMode::PerObservation, 2),
        (PhaseMode::Rhythmic, KlMode::Analytic, 3),
    ] {
        let model = small_model(mode, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let batch = ElboBatch::new(&model, &examples(mode, &mut rng)).unwrap();
        let (value, grads) = elbo_loss(&model, &batch, 0.7, kl).unwrap();
        assert!((value - elbo_value(&model, &batch, 0.7, kl).unwrap()).abs() < 1e-9 * value.abs().max(1.0));
        let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
        let report =
            finite_diff_check(|p| elbo_value(&with_params(&model, p), &batch, 0.7, kl), &params, &grads, opts(seed))
                .unwrap();
        assert!(report.entries_checked >= 100);
        assert!(report.max_rel_error < TOL, "{mode:?} {kl:?}: {report:?}");
    }
}

/// `Σ w ⊙ decode(z, x)` differentiated with respect to the decoder weights and `z`.
fn decode_projection(model: &DeepProMP, z: &Matrix, xs: &Matrix, w: &Matrix, grad: bool) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let zv = if grad { tape.param(0, z) } else { tape.constant(z.clone()) };
    let zb = tape.broadcast_rows(zv, xs.rows()).unwrap();
    let xv = tape.constant(xs.clone());
    let input = tape.concat_cols(zb, xv).unwrap();
    let net = model.decoder.net.on_tape(&mut tape, grad.then_some(1));
    let y = net.forward(&mut tape, input).unwrap();
    let wv = tape.constant(w.clone());
    let prod = tape.mul(y, wv).unwrap();
    let loss = tape.sum(prod);
    let value = tape.scalar(loss);
    if !grad {
        return (value, Vec::new());
    }
    let mut g = tape.backward(loss).unwrap();
    let mut out = vec![g.take(0).unwrap()];
    out.extend((0..model.decoder.net.tensor_count()).map(|s| g.take(s + 1).unwrap()));
    (value, out)
}

#[test]
fn decode_gradient_matches_finite_differences() {
    let model = small_model(PhaseMode::Linear, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = Matrix::row_vector(&gauss(&mut rng, 4));
    let xs = Matrix::from_vec(6, 1, (0..6).map(|i| i as f64 / 5.0).collect()).unwrap();
    let w = Matrix::from_vec(6, 2, gauss(&mut rng, 12)).unwrap();
    let (value, grads) = decode_projection(&model, &z, &xs, &w, true);

    let direct: f64 = (0..6)
        .map(|i| {
            let y = model.decode(z.as_slice(), &[xs.get(i, 0)]).unwrap();
            y[0] * w.get(i, 0) + y[1] * w.get(i, 1)
        })
        .sum();
    assert!((value - direct).abs() < 1e-12);

    let mut params = vec![z.clone()];
    params.extend(model.decoder.net.params().cloned());
    let report = finite_diff_check(
        |p| {
            let mut m = model.clone();
            for (dst, src) in m.decoder.net.params_mut().zip(&p[1..]) {
                *dst = src.clone();
            }
            Ok(decode_projection(&m, &p[0], &xs, &w, false).0)
        },
        &params,
        &grads,
        opts(9),
    )
    .unwrap();
    assert!(report.entries_checked >= 100);
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn refinement_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..8 {
        let model = small_model(PhaseMode::Linear, 20 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<ViaPoint> =
            (0..3).map(|_| ViaPoint { phase: vec![rng.random()], y: gauss(&mut rng, 2) }).collect();
        let init = model.prior();
        let config = RefineConfig { samples: 5, sigma_target: Some(vec![0.3; 4]), ..RefineConfig::default() };
        let obj = refine_objective(&model, &init, &targets, &config, &mut rng).unwrap();
        let mu = Matrix::row_vector(&gauss(&mut rng, 4));
        let sigma = Matrix::row_vector(&gauss(&mut rng, 4).iter().map(|v| 0.5 + 0.2 * v.abs()).collect::<Vec<_>>());
        let grads = obj.gradient(&model, &mu, &sigma).unwrap();
        let report = finite_diff_check(
            |p| obj.value(&model, &p[0], &p[1]),
            &[mu.clone(), sigma.clone()],
            &grads,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < TOL, "seed {seed}: {report:?}");
        checked += report.entries_checked;
    }
    assert!(checked >= 64);
}
