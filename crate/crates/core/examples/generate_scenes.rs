//! Generates a small dataset, writes it to disk and reads it back.
//!
//! ```text
//! cargo run --example generate_scenes -- [count] [seed] [out_dir]
//! ```

use std::path::PathBuf;

use xattn::scenegen::{class_style, generate_dataset, load_dataset, save_dataset, ScenegenParams};

fn main() -> xattn::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().map_or(8, |s| s.parse().expect("count must be an integer"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-scenes".into()));

    let params = ScenegenParams::default();
    let scenes = generate_dataset(seed, count, &params)?;
    for s in &scenes {
        let objects: Vec<String> = s
            .objects
            .iter()
            .map(|o| format!("{:?}@cam{} r={:.2}", class_style(o.class_id).shape, o.center.camera(), o.radius))
            .collect();
        println!("{} seed {:>20}: {}", s.id, s.seed, objects.join(", "));
    }

    save_dataset(&scenes, &out)?;
    assert_eq!(load_dataset(&out)?, scenes);
    println!("{} scenes of {} cameras round-tripped through {}", scenes.len(), params.n_cameras, out.display());
    Ok(())
}
