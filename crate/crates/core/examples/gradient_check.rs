//! Compares attention gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xattn::autograd::{attention_gradients, finite_diff_oracle, GradTarget};
use xattn::detector::{random_init, AttentionSite, ModelConfig};
use xattn::scenegen::{generate_scene, ScenegenParams};

fn main() -> xattn::Result<()> {
    let cfg = ModelConfig {
        n_cameras: 2,
        n_layers: 2,
        n_heads: 2,
        n_queries: 4,
        d_model: 8,
        ffn_hidden: 8,
        grid: (2, 4),
        patch: 4,
        n_classes: 3,
        threshold: 0.3,
    };
    let params = ScenegenParams {
        n_cameras: 2,
        height: cfg.image_height(),
        width: cfg.image_width(),
        n_classes: 3,
        max_objects: 2,
        min_radius: 0.15,
        max_radius: 0.25,
        ..Default::default()
    };
    let weights = random_init(1, &cfg)?;
    let scene = generate_scene(2, &params)?;
    let (query, class_id) = (1, 2);
    let (_, g) = attention_gradients(&weights, &scene, query, class_id, GradTarget::Logit)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let (layer, head, q) = (rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..4));
        let (site, analytic) = if rng.random_bool(0.5) {
            let (camera, token) = (rng.random_range(0..2), rng.random_range(0..cfg.n_tokens()));
            let site = AttentionSite::Cross { camera, layer, head, query: q, token };
            (site, g.cross_grad.get(&[camera, layer, head, q, token]))
        } else {
            let key = rng.random_range(0..4);
            (AttentionSite::SelfAttn { layer, head, query: q, key }, g.self_grad.get(&[layer, head, q, key]))
        };
        let numeric = finite_diff_oracle(&weights, &scene, query, class_id, site, 1e-4, GradTarget::Logit)?;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{site:?}\n    analytic {analytic:+.8e} numeric {numeric:+.8e} rel {rel:.1e}");
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
