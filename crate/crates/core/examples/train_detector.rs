//! Trains the detector on generated scenes and saves the weights.
//!
//! ```text
//! cargo run --release --example train_detector -- [steps] [out_dir] [learning_rate]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use xattn::detector::{save_weights, train, ModelConfig, TrainParams};
use xattn::scenegen::{generate_dataset, ScenegenParams};

fn main() -> xattn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(5000, |s| s.parse().expect("steps must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-weights".into()));
    let defaults = TrainParams::default();
    let learning_rate = args
        .next()
        .map_or(defaults.learning_rate, |s| s.parse().expect("learning_rate must be a number"));

    let params = ScenegenParams::default();
    let scenes = generate_dataset(0, 200, &params)?;
    let held_out = generate_dataset(1, 100, &params)?;
    let cfg = ModelConfig::default();
    let hyper = TrainParams {
        steps,
        learning_rate,
        ..defaults
    };

    let t0 = Instant::now();
    let mut outcome = train(&scenes, &cfg, &hyper)?;
    outcome.weights.round_to_f32();
    println!(
        "{steps} steps in {:.1?}: loss {:.4}, train accuracy {:.3}, held-out accuracy {:.3}",
        t0.elapsed(),
        outcome.final_loss,
        outcome.accuracy,
        xattn::detector::matched_accuracy(&outcome.weights, &held_out)?,
    );
    save_weights(&outcome.weights, &out)?;
    println!("weights written to {}", out.display());
    Ok(())
}
