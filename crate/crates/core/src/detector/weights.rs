use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::atns::{self, AtnsTensor};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerParams {
    pub self_norm: Norm,
    pub self_attn: AttentionParams,
    pub cross_norm: Norm,
    pub cross_attn: AttentionParams,
    pub ffn_norm: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

/// Index of every parameter tensor inside [`Weights::tensors`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub patch_embed: Linear,
    pub pos_embed: usize,
    pub query_embed: usize,
    pub memory_norm: Norm,
    pub layers: Vec<LayerParams>,
    pub final_norm: Norm,
    pub class_head: Linear,
    pub box_head: Linear,
    specs: Vec<ParamSpec>,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{prefix}.weight"), fan_in, fan_out, Init::Xavier),
            b: self.push(format!("{prefix}.bias"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gamma: self.push(format!("{prefix}.gamma"), 1, d, Init::Ones),
            beta: self.push(format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionParams {
        AttentionParams {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = LayoutBuilder { specs: Vec::new() };
        let patch_embed = b.linear("patch_embed", cfg.patch_dim(), d);
        let pos_embed = b.push(
            "pos_embed".into(),
            cfg.n_cameras * cfg.n_tokens(),
            d,
            Init::Uniform(1.0),
        );
        let query_embed = b.push("query_embed".into(), cfg.n_queries, d, Init::Uniform(1.0));
        let memory_norm = b.norm("memory_norm", d);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerParams {
                self_norm: b.norm(&format!("layers.{l}.self_norm"), d),
                self_attn: b.attention(&format!("layers.{l}.self_attn"), d),
                cross_norm: b.norm(&format!("layers.{l}.cross_norm"), d),
                cross_attn: b.attention(&format!("layers.{l}.cross_attn"), d),
                ffn_norm: b.norm(&format!("layers.{l}.ffn_norm"), d),
                fc1: b.linear(&format!("layers.{l}.ffn.fc1"), d, cfg.ffn_hidden),
                fc2: b.linear(&format!("layers.{l}.ffn.fc2"), cfg.ffn_hidden, d),
            })
            .collect();
        let final_norm = b.norm("final_norm", d);
        let class_head = b.linear("class_head", d, cfg.n_classes);
        let box_head = b.linear("box_head", d, 2);
        Layout {
            patch_embed,
            pos_embed,
            query_embed,
            memory_norm,
            layers,
            final_norm,
            class_head,
            box_head,
            specs: b.specs,
        }
    }
}

/// Every learned tensor of the detector, in a fixed layout derived from the
/// config.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl Weights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// All-zero weights (layer-norm gains included) with the layout of `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        Ok(Self {
            config: cfg.clone(),
            names: layout.specs.iter().map(|s| s.name.clone()).collect(),
            tensors: layout
                .specs
                .iter()
                .map(|s| Matrix::zeros(s.rows, s.cols))
                .collect(),
        })
    }

    /// Rounds every value to `f32` precision, the precision of weight files.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Deterministic scaled-uniform initialization.
pub fn random_init(seed: u64, cfg: &ModelConfig) -> Result<Weights> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout
        .specs
        .iter()
        .map(|s| {
            let n = s.rows * s.cols;
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..a)).collect(),
                Init::Xavier => {
                    let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
            };
            Matrix::from_vec(s.rows, s.cols, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Weights {
        config: cfg.clone(),
        names: layout.specs.iter().map(|s| s.name.clone()).collect(),
        tensors,
    })
}

pub const WEIGHTS_MANIFEST: &str = "weights.json";

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    file: String,
}

/// Writes one `ATNS` file per tensor plus a `weights.json` manifest.
///
/// Values are stored as `f32`.
pub fn save_weights(weights: &Weights, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(weights.tensors.len());
    for (name, t) in weights.names.iter().zip(&weights.tensors) {
        let file = format!("{name}.atns");
        atns::write(&dir.join(&file), &AtnsTensor::from_f64(&[t.rows, t.cols], &t.data)?)?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [t.rows, t.cols],
            file,
        });
    }
    let manifest = WeightsManifest {
        format: "xattn-weights".into(),
        version: 1,
        config: weights.config.clone(),
        tensors: entries,
    };
    fs::write(dir.join(WEIGHTS_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_weights(dir: &Path) -> Result<Weights> {
    let mpath = dir.join(WEIGHTS_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: mpath.clone() },
        _ => e.into(),
    })?;
    let manifest: WeightsManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
    let mut weights = Weights::zeros(&manifest.config)?;
    if manifest.tensors.len() != weights.tensors.len() {
        return Err(Error::parse(
            &mpath,
            format!(
                "expected {} tensors for this config, manifest lists {}",
                weights.tensors.len(),
                manifest.tensors.len()
            ),
        ));
    }
    for entry in &manifest.tensors {
        let idx = weights
            .names
            .iter()
            .position(|n| *n == entry.name)
            .ok_or_else(|| Error::parse(&mpath, format!("unknown tensor {}", entry.name)))?;
        let slot = &mut weights.tensors[idx];
        let t = atns::read_shaped(&dir.join(&entry.file), &[slot.rows, slot.cols])?;
        slot.data = t.data.iter().map(|&v| v as f64).collect();
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::default();
        let a = random_init(1, &cfg).unwrap();
        assert_eq!(a, random_init(1, &cfg).unwrap());
        assert_ne!(a, random_init(2, &cfg).unwrap());
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig::default();
        let w = random_init(0, &cfg).unwrap();
        let d = cfg.d_model;
        assert_eq!(w.get("patch_embed.weight").unwrap().shape(), (cfg.patch_dim(), d));
        assert_eq!(
            w.get("pos_embed").unwrap().shape(),
            (cfg.n_cameras * cfg.n_tokens(), d)
        );
        assert_eq!(w.get("query_embed").unwrap().shape(), (cfg.n_queries, d));
        assert_eq!(w.get("layers.5.cross_attn.o.weight").unwrap().shape(), (d, d));
        assert_eq!(w.get("class_head.weight").unwrap().shape(), (d, cfg.n_classes));
        assert!(w.get("layers.6.self_norm.gamma").is_none());
        assert!(w.is_finite());
    }

    #[test]
    fn save_load_round_trip_at_f32_precision() {
        let cfg = ModelConfig {
            n_layers: 1,
            ..Default::default()
        };
        let mut w = random_init(3, &cfg).unwrap();
        w.round_to_f32();
        let dir = tempfile::tempdir().unwrap();
        save_weights(&w, dir.path()).unwrap();
        assert_eq!(load_weights(dir.path()).unwrap(), w);
    }
}
