//! Positive and negative perturbation curves for every saliency method on
//! held-out scenes, written as CSV.
//!
//! ```text
//! cargo run --release --example perturbation_sweep -- <weights_dir> [n_scenes] [seed] [out_dir]
//! ```

use std::path::PathBuf;

use xattn::detector::load_weights;
use xattn::evalharness::{default_fractions, emit_report, run_sweep, Mode};
use xattn::saliency::Method;
use xattn::scenegen::{generate_dataset, ScenegenParams};

fn main() -> xattn::Result<()> {
    let mut args = std::env::args().skip(1);
    let weights_dir = PathBuf::from(args.next().expect("usage: perturbation_sweep <weights_dir> [n_scenes] [seed] [out_dir]"));
    let n_scenes = args.next().map_or(50, |s| s.parse().expect("n_scenes must be an integer"));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-report".into()));

    let weights = load_weights(&weights_dir)?;
    let scenes = generate_dataset(seed, n_scenes, &ScenegenParams::default())?;
    let fractions = default_fractions();

    let mut curves = Vec::new();
    for mode in [Mode::Positive, Mode::Negative] {
        for method in Method::ALL {
            let curve = run_sweep(&weights, &scenes, method, mode, &fractions, seed)?;
            println!("{mode:>8} {method:<12} AUC {:6.2}", curve.auc);
            curves.push(curve);
        }
    }
    emit_report(&curves, &out)?;
    println!("report written to {}", out.display());
    Ok(())
}
