use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use xattn::autograd::GradTarget;
use xattn::detector::{
    filter_detections, forward, load_weights, random_init, save_weights, train, Detection,
};
use xattn::evalharness::{run_sweep_with, sanity_check, update_report, validate_fractions, Mode, SanityReport, SweepOptions};
use xattn::saliency::{explain, save_saliency, Method, Upsample};
use xattn::scenegen::{generate_dataset, load_dataset, save_dataset, Scene};
use xattn::{Error, Result};

use crate::config::RunConfig;
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "xattn", version, about = "Cross-attention saliency for a toy multi-camera detector")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Directory holding `weights.json` and its tensors.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Detection threshold on the maximum class probability.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the detector on a dataset.
    Train {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the detector and report detections.
    Infer {
        /// Restrict to one scene id.
        #[arg(long)]
        scene: Option<String>,
    },
    /// Export one scene's saliency map as tensors plus metadata.
    Saliency {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        scene: String,
        /// Explain only this query instead of every selected one.
        #[arg(long)]
        query: Option<usize>,
        #[arg(long)]
        grad_target: Option<GradTarget>,
        #[arg(long)]
        bilinear: bool,
    },
    /// Perturbation sweeps; writes CSV curves and a summary.
    Perturb {
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<Method>,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "positive,negative")]
        mode: Vec<Mode>,
        /// Comma-separated ascending fractions starting at 0.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Rank pixels within each camera instead of globally.
        #[arg(long)]
        per_camera: bool,
    },
    /// Compare saliency of trained and randomly initialized weights.
    Sanity {
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<Method>,
    },
    /// Serve scenes, saliency and curves over HTTP.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        /// Report directory written by `perturb`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Defaults, then `--config`, then flags.
pub fn effective_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(t) = global.threshold {
        cfg.model.threshold = t;
        cfg.explain.threshold = Some(t);
    }
    cfg.train.seed = cfg.seed;
    cfg.explain.random_seed = cfg.seed;
    for (slot, flag) in [
        (&mut cfg.out, &global.out),
        (&mut cfg.dataset, &global.dataset),
        (&mut cfg.weights, &global.weights),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if global.jobs.is_some() {
        cfg.jobs = global.jobs;
    }
    Ok(cfg)
}

fn load_scenes(cfg: &RunConfig) -> Result<Vec<Scene>> {
    load_dataset(cfg.require_dataset()?)
}

fn write_json(path: &std::path::Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct SceneDetections<'a> {
    scene_id: &'a str,
    threshold: f64,
    selected: Vec<usize>,
    detections: Vec<Detection>,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = effective_config(&cli.global)?;
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParams(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::GenData { count } => {
            if let Some(n) = count {
                cfg.n_scenes = n;
            }
            let out = cfg.require_out()?;
            let scenes = generate_dataset(cfg.seed, cfg.n_scenes, &cfg.scenes)?;
            save_dataset(&scenes, out)?;
            cfg.echo(out)?;
            info!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Command::Train { steps } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let out = cfg.require_out()?;
            let scenes = load_scenes(&cfg)?;
            let mut outcome = train(&scenes, &cfg.model, &cfg.train)?;
            outcome.weights.round_to_f32();
            save_weights(&outcome.weights, out)?;
            write_json(
                &out.join("train_summary.json"),
                &TrainSummary {
                    steps: cfg.train.steps,
                    final_loss: outcome.final_loss,
                    accuracy: outcome.accuracy,
                },
            )?;
            cfg.echo(out)?;
            println!("accuracy {:.4} final_loss {:.4}", outcome.accuracy, outcome.final_loss);
        }
        Command::Infer { scene } => {
            let weights = load_weights(cfg.require_weights()?)?;
            let scenes = load_scenes(&cfg)?;
            let threshold = cfg.explain.threshold.unwrap_or(weights.config().threshold);
            let picked: Vec<&Scene> = match &scene {
                Some(id) => vec![scenes
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Error::InvalidParams(format!("unknown scene {id:?}")))?],
                None => scenes.iter().collect(),
            };
            let mut results = Vec::with_capacity(picked.len());
            for s in picked {
                let (dets, _) = forward(&weights, s)?;
                results.push(SceneDetections {
                    scene_id: &s.id,
                    threshold,
                    selected: filter_detections(&dets, threshold)?,
                    detections: dets,
                });
            }
            match &cfg.out {
                Some(out) => {
                    fs::create_dir_all(out)?;
                    write_json(&out.join("detections.json"), &results)?;
                    cfg.echo(out)?;
                }
                None => println!("{}", serde_json::to_string_pretty(&results)?),
            }
        }
        Command::Saliency {
            method,
            scene,
            query,
            grad_target,
            bilinear,
        } => {
            if let Some(t) = grad_target {
                cfg.explain.grad_target = t;
            }
            if bilinear {
                cfg.explain.upsample = Upsample::Bilinear;
            }
            if let Some(q) = query {
                cfg.explain.queries = Some(vec![q]);
            }
            let out = cfg.require_out()?.to_path_buf();
            let weights = load_weights(cfg.require_weights()?)?;
            let scenes = load_scenes(&cfg)?;
            let s = scenes
                .iter()
                .find(|s| s.id == scene)
                .ok_or_else(|| Error::InvalidParams(format!("unknown scene {scene:?}")))?;
            let map = explain(&weights, s, method, &cfg.explain)?;
            save_saliency(&map, &s.id, &out)?;
            cfg.echo(&out)?;
            println!("queries {:?}", map.queries_used);
        }
        Command::Perturb {
            method,
            mode,
            fractions,
            per_camera,
        } => {
            if let Some(f) = fractions {
                cfg.fractions = f;
            }
            if per_camera {
                cfg.per_camera_masking = true;
            }
            validate_fractions(&cfg.fractions)?;
            let out = cfg.require_out()?.to_path_buf();
            let weights = load_weights(cfg.require_weights()?)?;
            let scenes = load_scenes(&cfg)?;
            let opts = SweepOptions {
                threshold: cfg.explain.threshold,
                per_camera: cfg.per_camera_masking,
                explain: cfg.explain.clone(),
            };
            let mut curves = Vec::new();
            for &md in &mode {
                for &m in &method {
                    let curve = run_sweep_with(&weights, &scenes, m, md, &cfg.fractions, cfg.seed, &opts)?;
                    println!("{m},{md},{}", curve.auc);
                    curves.push(curve);
                }
            }
            update_report(&curves, &out)?;
            cfg.echo(&out)?;
        }
        Command::Sanity { method } => {
            let out = cfg.require_out()?.to_path_buf();
            let trained = load_weights(cfg.require_weights()?)?;
            let randomized = random_init(cfg.seed.wrapping_add(1), trained.config())?;
            let scenes = load_scenes(&cfg)?;
            let reports = method
                .iter()
                .map(|&m| sanity_check(&trained, &randomized, &scenes, m, &cfg.explain))
                .collect::<Result<Vec<SanityReport>>>()?;
            for r in &reports {
                println!("{},{},{},{}", r.method, r.mean, r.std, r.skipped);
            }
            fs::create_dir_all(&out)?;
            write_json(&out.join("sanity.json"), &reports)?;
            cfg.echo(&out)?;
        }
        Command::Serve { addr, report } => {
            let addr: SocketAddr = addr
                .unwrap_or_else(|| cfg.addr.clone())
                .parse()
                .map_err(|e| Error::InvalidParams(format!("--addr: {e}")))?;
            let weights = load_weights(cfg.require_weights()?)?;
            let scenes = load_scenes(&cfg).map_err(|e| {
                log::warn!("dataset unavailable: {e}");
                e.to_string()
            });
            let state = Arc::new(AppState::new(
                scenes,
                weights,
                report.or(cfg.report.clone()),
                cfg.explain.clone(),
            ));
            tokio::runtime::Runtime::new()?.block_on(service::serve(state, addr))?;
        }
    }
    Ok(())
}
