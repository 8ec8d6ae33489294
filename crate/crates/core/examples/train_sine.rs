//! Trains on a small sine family and reports held-out reconstruction error.
//!
//! ```text
//! cargo run --release --example train_sine -- [epochs] [hidden] [lr] [checkpoint]
//! ```

use std::time::Instant;

use deep_promp::checkpoint::{config_hash, AnyModel, Checkpoint};
use deep_promp::data::{gen_sine_family, Conditioning, DatasetSpec, Family};
use deep_promp::model::{train_with, Evidence, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> deep_promp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let mut spec = DatasetSpec::new(Family::Sine, 250, 50, 0);
    spec.noise = 0.0;
    let mut all = gen_sine_family(&spec)?;
    let test = all.demos.split_off(200);

    let config = TrainingConfig {
        epochs: arg(0, 200.0) as usize,
        hidden: arg(1, 64.0) as usize,
        learning_rate: arg(2, 1e-3),
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let trained = train_with(&all, &config, |e, l| {
        if e % 20 == 0 {
            eprintln!("epoch {e:5}  loss {l:12.4}  {:6.1}s", start.elapsed().as_secs_f64());
        }
    })?;
    let model = trained.model;
    if let Some(path) = args.get(3) {
        let ckpt = Checkpoint::new(&AnyModel::DeepProMP(model.clone()), config_hash(&config));
        ckpt.save(path)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, via, ctx) in [("via_point", true, false), ("low_dim", false, true)] {
        let mut se = 0.0;
        let mut n = 0usize;
        for d in &test {
            let mut sel = Conditioning { via_points: Vec::new(), channels: Vec::new() };
            if via {
                sel.via_points = (0..d.points.len()).collect();
            }
            if ctx {
                sel.via_points = vec![0];
                sel.channels = vec!["params".into()];
            }
            let ev = Evidence::from_demo(d, all.phase_mode, &sel)?;
            let phases = d.phases(all.phase_mode)?;
            let out = model.condition(&ev, None, &phases, 32, &mut rng)?;
            for (p, m) in d.points.iter().zip(&out.mean) {
                se += (p.y[0] - m[0]).powi(2);
                n += 1;
            }
        }
        println!("{name}: mse {:.3e}", se / n as f64);
    }
    println!("train time {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
