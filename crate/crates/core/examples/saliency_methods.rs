//! Every saliency method on one scene, with the share of mass that falls
//! on ground-truth objects.
//!
//! ```text
//! cargo run --release --example saliency_methods -- [weights_dir] [out_dir]
//! ```

use std::path::PathBuf;

use xattn::detector::{load_weights, random_init, ModelConfig};
use xattn::saliency::{explain, save_saliency, ExplainOptions, Method, Upsample};
use xattn::scenegen::{generate_scene, object_footprint, ScenegenParams};

fn main() -> xattn::Result<()> {
    let mut args = std::env::args().skip(1);
    let weights = match args.next() {
        Some(dir) => load_weights(dir.as_ref())?,
        None => random_init(0, &ModelConfig::default())?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-saliency".into()));
    let scene = generate_scene(42, &ScenegenParams::default())?;

    let mut on_object = vec![vec![false; scene.height * scene.width]; scene.n_cameras()];
    for obj in &scene.objects {
        for (r, c) in object_footprint(obj, scene.height, scene.width) {
            on_object[obj.center.camera()][r * scene.width + c] = true;
        }
    }

    let opts = ExplainOptions {
        upsample: Upsample::Bilinear,
        ..Default::default()
    };
    for method in Method::ALL {
        let map = explain(&weights, &scene, method, &opts)?;
        let (mut hit, mut total) = (0.0, 0.0);
        for (cam, m) in map.per_camera.iter().enumerate() {
            for (i, v) in m.data.iter().enumerate() {
                total += v;
                if on_object[cam][i] {
                    hit += v;
                }
            }
        }
        let (lo, hi) = map.min_max();
        println!(
            "{method:<12} queries {:?} range [{lo:.3e}, {hi:.3e}] on-object share {:.3}",
            map.queries_used,
            if total > 0.0 { hit / total } else { 0.0 }
        );
        save_saliency(&map, &scene.id, &out.join(method.as_str()))?;
    }
    println!("maps written under {}", out.display());
    Ok(())
}
