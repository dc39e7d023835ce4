//! One forward pass: detections, selected queries and the shape of the
//! recorded attention.
//!
//! ```text
//! cargo run --example forward_attention -- [weights_dir]
//! ```

use xattn::detector::{filter_detections, forward, load_weights, random_init, ModelConfig};
use xattn::scenegen::{generate_scene, ScenegenParams};

fn main() -> xattn::Result<()> {
    let weights = match std::env::args().nth(1) {
        Some(dir) => load_weights(dir.as_ref())?,
        None => random_init(0, &ModelConfig::default())?,
    };
    let cfg = weights.config().clone();
    let scene = generate_scene(42, &ScenegenParams::default())?;

    let (dets, rec) = forward(&weights, &scene)?;
    println!("cross attention {:?}, self attention {:?}", rec.cross.shape(), rec.self_.shape());
    println!("largest row-sum error {:.2e}", rec.max_normalization_error());

    for obj in &scene.objects {
        println!("truth: class {} at camera {} x={:.2} y={:.2}", obj.class_id, obj.center.camera(), obj.center.x, obj.center.y);
    }
    for q in filter_detections(&dets, cfg.threshold)? {
        let d = &dets[q];
        println!(
            "query {q:>2}: class {} p={:.3} at camera {} x={:.2} y={:.2}",
            d.class_id(),
            d.max_prob(),
            d.center.camera(),
            d.center.x,
            d.center.y
        );
    }
    Ok(())
}
