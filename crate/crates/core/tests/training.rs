use deep_promp::data::{gen_bimodal, gen_sine_family, DatasetSpec, Family};
use deep_promp::model::{train, train_with, TrainingConfig};
use deep_promp::phase::PhaseMode;

fn tiny(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs,
        hidden: 16,
        latent_dim: 4,
        learning_rate: 3e-3,
        batch_size: 8,
        seed,
        ..TrainingConfig::default()
    }
}

#[test]
fn training_is_deterministic_under_seed() {
    let ds = gen_sine_family(&DatasetSpec::new(Family::Sine, 20, 20, 0)).unwrap();
    let a = train(&ds, &tiny(15, 4)).unwrap();
    let b = train(&ds, &tiny(15, 4)).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.model, b.model);
    let c = train(&ds, &tiny(15, 5)).unwrap();
    assert_ne!(a.loss_trace, c.loss_trace);
}

#[test]
fn trace_has_one_entry_per_epoch_and_decreases() {
    let ds = gen_sine_family(&DatasetSpec::new(Family::Sine, 24, 20, 1)).unwrap();
    let mut seen = Vec::new();
    let t = train_with(&ds, &tiny(60, 0), |e, l| seen.push((e, l))).unwrap();
    assert_eq!(t.loss_trace.len(), 60);
    assert_eq!(seen.len(), 60);
    assert!(seen.iter().enumerate().all(|(i, (e, _))| i == *e));
    let head: f64 = t.loss_trace[..5].iter().sum();
    let tail: f64 = t.loss_trace[55..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn rhythmic_and_bimodal_datasets_train() {
    let mut spec = DatasetSpec::new(Family::Sine, 10, 16, 2);
    spec.phase_mode = PhaseMode::Rhythmic;
    let ds = gen_sine_family(&spec).unwrap();
    let t = train(&ds, &tiny(3, 0)).unwrap();
    assert_eq!(t.model.phase_mode, PhaseMode::Rhythmic);
    let bi = gen_bimodal(&DatasetSpec::new(Family::Bimodal, 10, 16, 2)).unwrap();
    assert!(train(&bi, &tiny(3, 0)).unwrap().loss_trace.iter().all(|l| l.is_finite()));
}

#[test]
fn invalid_config_is_rejected() {
    let ds = gen_sine_family(&DatasetSpec::new(Family::Sine, 4, 10, 0)).unwrap();
    for bad in [
        TrainingConfig { learning_rate: 0.0, ..tiny(1, 0) },
        TrainingConfig { batch_size: 0, ..tiny(1, 0) },
        TrainingConfig { anneal_fraction: -0.1, ..tiny(1, 0) },
    ] {
        assert!(train(&ds, &bad).is_err());
    }
}

#[test]
fn kl_weight_ramps_linearly_then_holds() {
    let c = TrainingConfig { epochs: 100, anneal_fraction: 0.2, beta_max: 1.0, ..TrainingConfig::default() };
    assert!((c.beta_at(0) - 0.05).abs() < 1e-12);
    assert!((c.beta_at(9) - 0.5).abs() < 1e-12);
    assert_eq!(c.beta_at(19), 1.0);
    assert_eq!(c.beta_at(99), 1.0);
}
