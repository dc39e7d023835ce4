//! Synthetic multi-camera scenes with planted, class-distinct objects.
//!
//! Objects live in panoramic coordinates: `x ∈ [0, n_cameras)` selects the
//! camera through its integer part and the horizontal position inside that
//! camera through its fractional part; `y ∈ [0, 1)` is the vertical position.
//! Radii are measured in camera widths.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atns::{self, AtnsTensor};
use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
const MAX_OVERLAP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenegenParams {
    pub n_cameras: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Background is `0.5 ± noise_amplitude`, uniform per channel.
    pub noise_amplitude: f32,
}

impl Default for ScenegenParams {
    fn default() -> Self {
        Self {
            n_cameras: 6,
            height: 64,
            width: 64,
            n_classes: 4,
            min_objects: 1,
            max_objects: 4,
            min_radius: 0.1,
            max_radius: 0.18,
            noise_amplitude: 0.1,
        }
    }
}

impl ScenegenParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.min_objects == 0 {
            return fail("n_objects must be at least 1");
        }
        if self.min_objects > self.max_objects {
            return fail("min_objects exceeds max_objects");
        }
        if self.n_cameras == 0 || self.height == 0 || self.width == 0 {
            return fail("image dimensions and camera count must be positive");
        }
        if self.n_classes == 0 || self.n_classes > CLASS_STYLES.len() {
            return fail("n_classes must be in 1..=8");
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius && self.max_radius < 0.5) {
            return fail("radii must satisfy 0 < min_radius <= max_radius < 0.5");
        }
        if !(0.0..=0.5).contains(&self.noise_amplitude) {
            return fail("noise_amplitude must be in [0, 0.5]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoPoint {
    pub x: f64,
    pub y: f64,
}

impl PanoPoint {
    pub fn camera(&self) -> usize {
        self.x.floor() as usize
    }

    /// Horizontal position inside the camera, in `[0, 1)`.
    pub fn local_x(&self) -> f64 {
        self.x - self.x.floor()
    }

    pub fn distance(&self, other: &PanoPoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class_id: usize,
    pub center: PanoPoint,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// One `H × W × 3` row-major image per camera, channels in `[0, 1]`.
    pub images: Vec<Vec<f32>>,
    pub objects: Vec<GroundTruthObject>,
    pub seed: u64,
}

impl Scene {
    pub fn n_cameras(&self) -> usize {
        self.images.len()
    }

    #[inline]
    pub fn pixel(&self, camera: usize, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        let img = &self.images[camera];
        [img[i], img[i + 1], img[i + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Diamond,
}

/// Rendering style of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStyle {
    pub shape: Shape,
    pub color: [f32; 3],
}

/// Lookup table from class id to primitive. Every entry differs from every
/// other in shape or color, and every color has a channel outside the
/// background band.
pub const CLASS_STYLES: [ClassStyle; 8] = [
    ClassStyle { shape: Shape::Disk, color: [0.90, 0.15, 0.10] },
    ClassStyle { shape: Shape::Square, color: [0.10, 0.80, 0.20] },
    ClassStyle { shape: Shape::Triangle, color: [0.15, 0.25, 0.95] },
    ClassStyle { shape: Shape::Diamond, color: [0.95, 0.85, 0.10] },
    ClassStyle { shape: Shape::Disk, color: [0.10, 0.85, 0.90] },
    ClassStyle { shape: Shape::Square, color: [0.85, 0.10, 0.85] },
    ClassStyle { shape: Shape::Triangle, color: [0.05, 0.05, 0.05] },
    ClassStyle { shape: Shape::Diamond, color: [1.00, 1.00, 1.00] },
];

pub fn class_style(class_id: usize) -> ClassStyle {
    CLASS_STYLES[class_id % CLASS_STYLES.len()]
}

/// Whether the pixel at offset `(dx, dy)` (in pixels, from the object
/// center) is covered by a primitive of radius `r` pixels.
fn covers(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Disk => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
        Shape::Triangle => dy >= -r && dy <= 0.7 * r && dx.abs() <= (dy + r) / 1.7,
        Shape::Diamond => dx.abs() + dy.abs() <= r,
    }
}

/// Pixels `(row, col)` of the object's own camera covered by it.
pub fn object_footprint(obj: &GroundTruthObject, height: usize, width: usize) -> Vec<(usize, usize)> {
    let style = class_style(obj.class_id);
    let cx = obj.center.local_x() * width as f64;
    let cy = obj.center.y * height as f64;
    let r = obj.radius * width as f64;
    let r0 = ((cy - r).floor().max(0.0)) as usize;
    let r1 = ((cy + r).ceil() as usize).min(height);
    let c0 = ((cx - r).floor().max(0.0)) as usize;
    let c1 = ((cx + r).ceil() as usize).min(width);
    let mut out = Vec::new();
    for row in r0..r1 {
        for col in c0..c1 {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            if covers(style.shape, dx, dy, r) {
                out.push((row, col));
            }
        }
    }
    out
}

/// Derives the per-scene seed for scene `index` of a dataset.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_scene(seed: u64, params: &ScenegenParams) -> Result<Scene> {
    generate_scene_with_id(format!("seed{seed}"), seed, params)
}

pub fn generate_scene_with_id(id: String, seed: u64, params: &ScenegenParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (params.height, params.width);
    let amp = params.noise_amplitude;

    let images: Vec<Vec<f32>> = (0..params.n_cameras)
        .map(|_| {
            (0..h * w * 3)
                .map(|_| {
                    if amp > 0.0 {
                        0.5 + rng.random_range(-amp..=amp)
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect();

    let n_objects = rng.random_range(params.min_objects..=params.max_objects);
    let mut objects: Vec<GroundTruthObject> = Vec::with_capacity(n_objects);
    let mut footprints: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n_objects);
    for k in 0..n_objects {
        let class_id = rng.random_range(0..params.n_classes);
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let radius = rng.random_range(params.min_radius..=params.max_radius);
            let camera = rng.random_range(0..params.n_cameras);
            let lx = rng.random_range(radius..(1.0 - radius));
            let y = rng.random_range(radius..(1.0 - radius));
            let cand = GroundTruthObject {
                class_id,
                center: PanoPoint {
                    x: camera as f64 + lx,
                    y,
                },
                radius,
            };
            let fp = object_footprint(&cand, h, w);
            let ok = objects.iter().zip(&footprints).all(|(other, ofp)| {
                other.center.camera() != camera || overlap_fraction(&fp, ofp) <= MAX_OVERLAP_FRACTION
            });
            if ok && !fp.is_empty() {
                objects.push(cand);
                footprints.push(fp);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SceneTooCrowded {
                object: k,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let mut scene = Scene {
        id,
        height: h,
        width: w,
        images,
        objects,
        seed,
    };
    for (obj, fp) in scene.objects.iter().zip(&footprints) {
        let color = class_style(obj.class_id).color;
        let img = &mut scene.images[obj.center.camera()];
        for &(row, col) in fp {
            let i = (row * w + col) * 3;
            img[i..i + 3].copy_from_slice(&color);
        }
    }
    Ok(scene)
}

fn overlap_fraction(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return 0.0;
    }
    // Footprints are generated in row-major order, so a merge walk suffices.
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    shared as f64 / smaller as f64
}

/// The same scene with camera `c` moved to slot `(c + shift) mod n_c`;
/// object centers move with their camera.
pub fn roll_cameras(scene: &Scene, shift: usize) -> Scene {
    let nc = scene.n_cameras();
    if nc == 0 {
        return scene.clone();
    }
    let mut images = scene.images.clone();
    images.rotate_right(shift % nc);
    let objects = scene
        .objects
        .iter()
        .map(|o| GroundTruthObject {
            center: PanoPoint {
                x: (o.center.camera() + shift) as f64 % nc as f64 + o.center.local_x(),
                y: o.center.y,
            },
            ..o.clone()
        })
        .collect();
    Scene {
        images,
        objects,
        ..scene.clone()
    }
}

/// Generates `count` scenes with ids `S0..S{count-1}`.
pub fn generate_dataset(base_seed: u64, count: usize, params: &ScenegenParams) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_scene_with_id(format!("S{i}"), scene_seed(base_seed, i), params))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    n_cameras: usize,
    height: usize,
    width: usize,
    scenes: Vec<ManifestScene>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestScene {
    id: String,
    seed: u64,
    objects: Vec<GroundTruthObject>,
    cameras: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_dataset(scenes: &[Scene], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let first = scenes.first();
    let (n_cameras, height, width) =
        first.map_or((0, 0, 0), |s| (s.n_cameras(), s.height, s.width));
    let mut entries = Vec::with_capacity(scenes.len());
    let mut seen = BTreeMap::new();
    for scene in scenes {
        if (scene.n_cameras(), scene.height, scene.width) != (n_cameras, height, width) {
            return Err(Error::Shape(format!(
                "scene {} has different dimensions from the rest of the dataset",
                scene.id
            )));
        }
        if seen.insert(scene.id.clone(), ()).is_some() {
            return Err(Error::InvalidParams(format!("duplicate scene id {}", scene.id)));
        }
        let mut cameras = Vec::with_capacity(n_cameras);
        for (c, img) in scene.images.iter().enumerate() {
            let name = format!("{}_cam{c}.atns", scene.id);
            let t = AtnsTensor::new(vec![height as u32, width as u32, 3], img.clone())?;
            atns::write(&dir.join(&name), &t)?;
            cameras.push(name);
        }
        entries.push(ManifestScene {
            id: scene.id.clone(),
            seed: scene.seed,
            objects: scene.objects.clone(),
            cameras,
        });
    }
    let manifest = Manifest {
        format: "xattn-dataset".into(),
        version: 1,
        n_cameras,
        height,
        width,
        scenes: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&mpath) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile { path: mpath })
        }
        Err(e) => return Err(e.into()),
    };
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::parse(
            &mpath,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let shape = [manifest.height, manifest.width, 3];
    manifest
        .scenes
        .into_iter()
        .map(|entry| {
            if entry.cameras.len() != manifest.n_cameras {
                return Err(Error::parse(
                    &mpath,
                    format!(
                        "scene {} lists {} cameras, manifest declares {}",
                        entry.id,
                        entry.cameras.len(),
                        manifest.n_cameras
                    ),
                ));
            }
            let images = entry
                .cameras
                .iter()
                .map(|name| atns::read_shaped(&dir.join(name), &shape).map(|t| t.data))
                .collect::<Result<Vec<_>>>()?;
            Ok(Scene {
                id: entry.id,
                height: manifest.height,
                width: manifest.width,
                images,
                objects: entry.objects,
                seed: entry.seed,
            })
        })
        .collect()
}
