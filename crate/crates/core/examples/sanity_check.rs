//! Rank correlation of saliency between trained and freshly initialized
//! weights. Low values mean the explanation depends on what was learned.
//!
//! ```text
//! cargo run --release --example sanity_check -- <weights_dir> [n_scenes]
//! ```

use xattn::detector::{load_weights, random_init};
use xattn::evalharness::sanity_check;
use xattn::saliency::{ExplainOptions, Method};
use xattn::scenegen::{generate_dataset, ScenegenParams};

fn main() -> xattn::Result<()> {
    let mut args = std::env::args().skip(1);
    let trained = load_weights(args.next().expect("usage: sanity_check <weights_dir> [n_scenes]").as_ref())?;
    let n_scenes = args.next().map_or(20, |s| s.parse().expect("n_scenes must be an integer"));
    let randomized = random_init(1, trained.config())?;
    let scenes = generate_dataset(1000, n_scenes, &ScenegenParams::default())?;

    for method in Method::ALL {
        let r = sanity_check(&trained, &randomized, &scenes, method, &ExplainOptions::default())?;
        println!(
            "{method:<12} mean {:+.3} std {:.3} over {} scenes ({} skipped)",
            r.mean,
            r.std,
            r.correlations.len(),
            r.skipped
        );
    }
    Ok(())
}
