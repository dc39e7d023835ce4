//! Saliency maps from recorded attention.
//!
//! Every generator first produces per-query token maps shaped
//! `[n_cameras, n_queries, n_tokens]`; [`assemble`] then lifts the rows of
//! the selected queries onto the pixel grid and sums them per camera.
//!
//! | method         | token map                                     |
//! |----------------|-----------------------------------------------|
//! | `raw-last`     | `E_h(A_CR[last layer])⁺`                      |
//! | `raw-mean`     | `E_l(E_h(A_CR)⁺)`                             |
//! | `raw-max`      | `max_l(max_h(A_CR))`                          |
//! | `grad-cam`     | `E_l(E_h(∇A_CR ⊙ A_CR)⁺)`                     |
//! | `grad-rollout` | relevancy propagation through `A_SF`, `A_CR`  |
//! | `random`       | `N(μ, σ²)⁺`                                   |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atns::{self, AtnsTensor};
use crate::autograd::{attention_gradients, AttentionGradients, GradTarget};
use crate::detector::{filter_detections, forward, AttentionRecord, Detection, ModelConfig, Weights};
use crate::error::{Error, Result};
use crate::scenegen::Scene;
use crate::tensor::{Matrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RawLast,
    RawMean,
    RawMax,
    GradCam,
    GradRollout,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RawLast,
        Method::RawMean,
        Method::RawMax,
        Method::GradCam,
        Method::GradRollout,
        Method::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::RawLast => "raw-last",
            Method::RawMean => "raw-mean",
            Method::RawMax => "raw-max",
            Method::GradCam => "grad-cam",
            Method::GradRollout => "grad-rollout",
            Method::Random => "random",
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self, Method::RawLast | Method::RawMean | Method::RawMax)
    }

    pub fn needs_gradients(&self) -> bool {
        matches!(self, Method::GradCam | Method::GradRollout)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(Method::as_str).collect();
                Error::InvalidParams(format!(
                    "unknown method {s:?} (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Where the `⁺` clamp sits relative to the head mean in the gradient
/// methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampOrder {
    /// `E_h(∇A ⊙ A)⁺`
    #[default]
    AfterHeadMean,
    /// `E_h((∇A ⊙ A)⁺)`
    BeforeHeadMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsample {
    #[default]
    Nearest,
    Bilinear,
}

/// Per-camera `H × W` relevance fields, all entries `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub method: Method,
    pub per_camera: Vec<Matrix>,
    pub queries_used: Vec<usize>,
}

impl SaliencyMap {
    pub fn scaled(&self, f: f64) -> SaliencyMap {
        let mut out = self.clone();
        out.per_camera.iter_mut().for_each(|m| m.scale(f));
        out
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.per_camera
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

/// Gradient Rollout relevancy matrices for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevancyState {
    /// `n_q × n_q`, starts as the identity.
    pub r_qq: Matrix,
    /// `n_q × n_t`, starts at zero.
    pub r_qi: Matrix,
}

impl RelevancyState {
    pub fn new(n_queries: usize, n_tokens: usize) -> Self {
        Self {
            r_qq: Matrix::identity(n_queries),
            r_qi: Matrix::zeros(n_queries, n_tokens),
        }
    }

    /// `R_qq` with each row divided by its sum; all-zero rows stay zero.
    pub fn normalized_r_qq(&self) -> Matrix {
        row_normalize(&self.r_qq)
    }

    /// One decoder layer: self-attention relevance `a_sf` (`n_q × n_q`) and
    /// cross-attention relevance `a_cr` (`n_q × n_t`).
    pub fn update(&mut self, a_sf: &Matrix, a_cr: &Matrix) {
        let dqq = a_sf.matmul(&self.r_qq);
        self.r_qq.add_assign(&dqq);
        let dqi = a_sf.matmul(&self.r_qi);
        self.r_qi.add_assign(&dqi);
        let bar = self.normalized_r_qq();
        let cross = bar.transpose().matmul(a_cr);
        self.r_qi.add_assign(&cross);
    }
}

pub fn row_normalize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

fn record_dims(rec: &AttentionRecord) -> (usize, usize, usize, usize, usize) {
    (
        rec.n_cameras(),
        rec.n_layers(),
        rec.n_heads(),
        rec.n_queries(),
        rec.n_tokens(),
    )
}

/// `E_h(A_CR[layer])` for one camera into `out` (`n_q · n_t`).
fn head_mean_into(a: &Tensor, c: usize, l: usize, nh: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for h in 0..nh {
        for (o, v) in out.iter_mut().zip(a.slice(&[c, l, h])) {
            *o += v;
        }
    }
    let n = nh as f64;
    out.iter_mut().for_each(|v| *v /= n);
}

/// Mean over heads of the last layer's cross-attention, clamped at zero.
pub fn raw_last(rec: &AttentionRecord) -> Tensor {
    let (nc, nl, nh, nq, nt) = record_dims(rec);
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    for c in 0..nc {
        let dst = out.slice_mut(&[c]);
        head_mean_into(&rec.cross, c, nl - 1, nh, dst);
        dst.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

/// Head mean, clamp, then layer mean.
pub fn raw_mean(rec: &AttentionRecord) -> Tensor {
    let (nc, nl, nh, nq, nt) = record_dims(rec);
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    let mut buf = vec![0.0; nq * nt];
    for c in 0..nc {
        for l in 0..nl {
            head_mean_into(&rec.cross, c, l, nh, &mut buf);
            for (o, v) in out.slice_mut(&[c]).iter_mut().zip(&buf) {
                *o += v.max(0.0);
            }
        }
        let n = nl as f64;
        out.slice_mut(&[c]).iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Elementwise max over heads, then over layers.
pub fn raw_max(rec: &AttentionRecord) -> Tensor {
    let (nc, nl, nh, nq, nt) = record_dims(rec);
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    let mut layer_max = vec![0.0; nq * nt];
    for c in 0..nc {
        let dst = out.slice_mut(&[c]);
        dst.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for l in 0..nl {
            layer_max.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            for h in 0..nh {
                for (m, &v) in layer_max.iter_mut().zip(rec.cross.slice(&[c, l, h])) {
                    *m = m.max(v);
                }
            }
            for (o, &m) in dst.iter_mut().zip(&layer_max) {
                *o = o.max(m);
            }
        }
    }
    out
}

/// Raw cross-attention restricted to one layer and/or head; the free axes
/// are reduced by the method's own reducer (max for `raw-max`, mean
/// otherwise). `raw-last` with no explicit layer uses the last layer.
pub fn raw_slice(
    rec: &AttentionRecord,
    method: Method,
    layer: Option<usize>,
    head: Option<usize>,
) -> Result<Tensor> {
    let (nc, nl, nh, nq, nt) = record_dims(rec);
    if !method.is_raw() {
        return Err(Error::InvalidParams(format!(
            "layer/head selection is only valid for raw attention methods, not {method}"
        )));
    }
    if layer.is_some_and(|l| l >= nl) || head.is_some_and(|h| h >= nh) {
        return Err(Error::InvalidParams(format!(
            "layer/head out of range (n_layers = {nl}, n_heads = {nh})"
        )));
    }
    let layers: Vec<usize> = match (layer, method) {
        (Some(l), _) => vec![l],
        (None, Method::RawLast) => vec![nl - 1],
        (None, _) => (0..nl).collect(),
    };
    let heads: Vec<usize> = head.map_or_else(|| (0..nh).collect(), |h| vec![h]);
    let use_max = method == Method::RawMax;
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    for c in 0..nc {
        for i in 0..nq * nt {
            let mut layer_acc = if use_max { f64::NEG_INFINITY } else { 0.0 };
            for &l in &layers {
                let mut head_acc = if use_max { f64::NEG_INFINITY } else { 0.0 };
                for &h in &heads {
                    let v = rec.cross.slice(&[c, l, h])[i];
                    head_acc = if use_max { head_acc.max(v) } else { head_acc + v };
                }
                if use_max {
                    layer_acc = layer_acc.max(head_acc);
                } else {
                    layer_acc += (head_acc / heads.len() as f64).max(0.0);
                }
            }
            out.slice_mut(&[c])[i] = if use_max {
                layer_acc
            } else {
                layer_acc / layers.len() as f64
            };
        }
    }
    Ok(out)
}

fn check_grads(rec: &AttentionRecord, grads: &AttentionGradients) -> Result<()> {
    if rec.cross.shape() != grads.cross_grad.shape() || rec.self_.shape() != grads.self_grad.shape() {
        return Err(Error::Shape(format!(
            "attention record {:?}/{:?} and gradients {:?}/{:?} disagree",
            rec.cross.shape(),
            rec.self_.shape(),
            grads.cross_grad.shape(),
            grads.self_grad.shape()
        )));
    }
    Ok(())
}

/// `E_h(∇A ⊙ A)⁺` (or the clamp-first variant) over `n_h` contiguous
/// blocks of `len` entries.
fn weighted_head_mean(
    a: &[f64],
    g: &[f64],
    nh: usize,
    len: usize,
    clamp: ClampOrder,
) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for h in 0..nh {
        let start = h * len;
        for i in 0..len {
            let p = g[start + i] * a[start + i];
            out[i] += match clamp {
                ClampOrder::AfterHeadMean => p,
                ClampOrder::BeforeHeadMean => p.max(0.0),
            };
        }
    }
    let n = nh as f64;
    for v in &mut out {
        *v /= n;
        if clamp == ClampOrder::AfterHeadMean {
            *v = v.max(0.0);
        }
    }
    out
}

/// Per-layer relevance of one camera's cross-attention, `n_q × n_t`.
fn cross_relevance(
    rec: &AttentionRecord,
    grads: &AttentionGradients,
    c: usize,
    l: usize,
    clamp: ClampOrder,
) -> Matrix {
    let (_, _, nh, nq, nt) = record_dims(rec);
    let block = nq * nt;
    let a = rec.cross.slice(&[c, l]);
    let g = grads.cross_grad.slice(&[c, l]);
    Matrix::from_vec(nq, nt, weighted_head_mean(a, g, nh, block, clamp))
        .expect("block size")
}

fn self_relevance(rec: &AttentionRecord, grads: &AttentionGradients, l: usize, clamp: ClampOrder) -> Matrix {
    let (_, _, nh, nq, _) = record_dims(rec);
    let block = nq * nq;
    let a = rec.self_.slice(&[l]);
    let g = grads.self_grad.slice(&[l]);
    Matrix::from_vec(nq, nq, weighted_head_mean(a, g, nh, block, clamp))
        .expect("block size")
}

pub fn grad_cam(rec: &AttentionRecord, grads: &AttentionGradients) -> Result<Tensor> {
    grad_cam_with(rec, grads, ClampOrder::default())
}

/// `E_l(E_h(∇A_CR ⊙ A_CR)⁺)`
pub fn grad_cam_with(rec: &AttentionRecord, grads: &AttentionGradients, clamp: ClampOrder) -> Result<Tensor> {
    check_grads(rec, grads)?;
    let (nc, nl, _, nq, nt) = record_dims(rec);
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    for c in 0..nc {
        for l in 0..nl {
            let rel = cross_relevance(rec, grads, c, l, clamp);
            for (o, v) in out.slice_mut(&[c]).iter_mut().zip(&rel.data) {
                *o += v;
            }
        }
        let n = nl as f64;
        out.slice_mut(&[c]).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

pub fn gradient_rollout(rec: &AttentionRecord, grads: &AttentionGradients) -> Result<Tensor> {
    gradient_rollout_with(rec, grads, ClampOrder::default())
}

/// Final `R_qi` of the per-camera relevancy recurrence.
pub fn gradient_rollout_with(
    rec: &AttentionRecord,
    grads: &AttentionGradients,
    clamp: ClampOrder,
) -> Result<Tensor> {
    check_grads(rec, grads)?;
    let (nc, nl, _, nq, nt) = record_dims(rec);
    let self_rel: Vec<Matrix> = (0..nl).map(|l| self_relevance(rec, grads, l, clamp)).collect();
    let mut out = Tensor::zeros(&[nc, nq, nt]);
    for c in 0..nc {
        let mut state = RelevancyState::new(nq, nt);
        for (l, a_sf) in self_rel.iter().enumerate() {
            let a_cr = cross_relevance(rec, grads, c, l, clamp);
            state.update(a_sf, &a_cr);
        }
        out.slice_mut(&[c]).copy_from_slice(&state.r_qi.data);
    }
    Ok(out)
}

/// `n` i.i.d. draws from `N(mu, sigma²)`.
pub fn sample_normal(seed: u64, mu: f64, sigma: f64, n: usize) -> Result<Vec<f64>> {
    let dist = Normal::new(mu, sigma)
        .map_err(|e| Error::InvalidParams(format!("normal distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Random baseline token maps, clamped at zero.
pub fn random_explanation(
    seed: u64,
    mu: f64,
    sigma: f64,
    n_cameras: usize,
    n_queries: usize,
    n_tokens: usize,
) -> Result<Tensor> {
    let n = n_cameras * n_queries * n_tokens;
    let values = sample_normal(seed, mu, sigma, n)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Tensor::from_vec(&[n_cameras, n_queries, n_tokens], values)
}

fn upsample_into(tokens: &[f64], cfg: &ModelConfig, mode: Upsample, weight: f64, out: &mut Matrix) {
    let (gh, gw) = cfg.grid;
    let p = cfg.patch;
    let (h, w) = (gh * p, gw * p);
    match mode {
        Upsample::Nearest => {
            for r in 0..h {
                let trow = &tokens[(r / p) * gw..(r / p + 1) * gw];
                for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o += weight * trow[c / p];
                }
            }
        }
        Upsample::Bilinear => {
            let coord = |i: usize, n: usize| {
                let x = ((i as f64 + 0.5) / p as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, x - i0 as f64)
            };
            for r in 0..h {
                let (y0, y1, fy) = coord(r, gh);
                for c in 0..w {
                    let (x0, x1, fx) = coord(c, gw);
                    let v = tokens[y0 * gw + x0] * (1.0 - fy) * (1.0 - fx)
                        + tokens[y0 * gw + x1] * (1.0 - fy) * fx
                        + tokens[y1 * gw + x0] * fy * (1.0 - fx)
                        + tokens[y1 * gw + x1] * fy * fx;
                    out.data[r * w + c] += weight * v;
                }
            }
        }
    }
}

/// Sums the upsampled token maps of `selected` queries into per-camera
/// pixel maps. `query_weights`, when given, scales each query's map.
pub fn assemble(
    method: Method,
    maps: &Tensor,
    selected: &[usize],
    cfg: &ModelConfig,
    upsample: Upsample,
    query_weights: Option<&[f64]>,
) -> Result<SaliencyMap> {
    let expected = [cfg.n_cameras, cfg.n_queries, cfg.n_tokens()];
    if maps.shape() != expected {
        return Err(Error::Shape(format!(
            "token maps {:?} do not match config {expected:?}",
            maps.shape()
        )));
    }
    if let Some(&q) = selected.iter().find(|&&q| q >= cfg.n_queries) {
        return Err(Error::InvalidParams(format!("selected query {q} out of range")));
    }
    let (h, w) = (cfg.image_height(), cfg.image_width());
    let per_camera = (0..cfg.n_cameras)
        .map(|c| {
            let mut img = Matrix::zeros(h, w);
            for &q in selected {
                let weight = query_weights.map_or(1.0, |ws| ws[q]);
                upsample_into(maps.slice(&[c, q]), cfg, upsample, weight, &mut img);
            }
            img
        })
        .collect();
    Ok(SaliencyMap {
        method,
        per_camera,
        queries_used: selected.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    /// Overrides the weights' configured detection threshold.
    pub threshold: Option<f64>,
    /// Explicit query set; bypasses background filtering.
    pub queries: Option<Vec<usize>>,
    pub grad_target: GradTarget,
    pub clamp: ClampOrder,
    pub upsample: Upsample,
    /// Weight each query's map by its maximum class probability.
    pub weight_by_confidence: bool,
    pub random_seed: u64,
    pub random_mu: f64,
    pub random_sigma: f64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            threshold: None,
            queries: None,
            grad_target: GradTarget::Logit,
            clamp: ClampOrder::AfterHeadMean,
            upsample: Upsample::Nearest,
            weight_by_confidence: false,
            random_seed: 0,
            random_mu: 0.0,
            random_sigma: 1.0,
        }
    }
}

/// Per-query token maps for `method`. Gradient methods run one backward
/// pass per selected query, targeting that query's most probable class,
/// and keep only that query's row.
pub fn token_maps(
    weights: &Weights,
    scene: &Scene,
    method: Method,
    dets: &[Detection],
    rec: &AttentionRecord,
    selected: &[usize],
    opts: &ExplainOptions,
) -> Result<Tensor> {
    let cfg = weights.config();
    match method {
        Method::RawLast => Ok(raw_last(rec)),
        Method::RawMean => Ok(raw_mean(rec)),
        Method::RawMax => Ok(raw_max(rec)),
        Method::Random => random_explanation(
            opts.random_seed,
            opts.random_mu,
            opts.random_sigma,
            cfg.n_cameras,
            cfg.n_queries,
            cfg.n_tokens(),
        ),
        Method::GradCam | Method::GradRollout => {
            let mut out = Tensor::zeros(&[cfg.n_cameras, cfg.n_queries, cfg.n_tokens()]);
            for &q in selected {
                let class_id = dets[q].class_id();
                let (rec_q, grads) = attention_gradients(weights, scene, q, class_id, opts.grad_target)?;
                let maps = if method == Method::GradCam {
                    grad_cam_with(&rec_q, &grads, opts.clamp)?
                } else {
                    gradient_rollout_with(&rec_q, &grads, opts.clamp)?
                };
                for c in 0..cfg.n_cameras {
                    out.slice_mut(&[c, q]).copy_from_slice(maps.slice(&[c, q]));
                }
            }
            Ok(out)
        }
    }
}

/// Forward pass, background filtering, token maps and assembly.
pub fn explain(weights: &Weights, scene: &Scene, method: Method, opts: &ExplainOptions) -> Result<SaliencyMap> {
    let (dets, rec) = forward(weights, scene)?;
    explain_with(weights, scene, method, &dets, &rec, opts)
}

/// Like [`explain`] but reuses an existing forward pass.
pub fn explain_with(
    weights: &Weights,
    scene: &Scene,
    method: Method,
    dets: &[Detection],
    rec: &AttentionRecord,
    opts: &ExplainOptions,
) -> Result<SaliencyMap> {
    let cfg = weights.config();
    let selected = match &opts.queries {
        Some(q) => q.clone(),
        None => filter_detections(dets, opts.threshold.unwrap_or(cfg.threshold))?,
    };
    let maps = token_maps(weights, scene, method, dets, rec, &selected, opts)?;
    let conf: Vec<f64> = dets.iter().map(Detection::max_prob).collect();
    let qw = opts.weight_by_confidence.then_some(conf.as_slice());
    assemble(method, &maps, &selected, cfg, opts.upsample, qw)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyMetadata {
    pub method: Method,
    pub scene_id: String,
    pub queries_used: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub cameras: Vec<String>,
}

pub const SALIENCY_METADATA: &str = "saliency.json";

/// Writes `cam{c}.atns` per camera plus `saliency.json`.
pub fn save_saliency(map: &SaliencyMap, scene_id: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (h, w) = map.per_camera.first().map_or((0, 0), Matrix::shape);
    let mut cameras = Vec::new();
    for (c, m) in map.per_camera.iter().enumerate() {
        let name = format!("cam{c}.atns");
        atns::write(&dir.join(&name), &AtnsTensor::from_f64(&[m.rows, m.cols], &m.data)?)?;
        cameras.push(name);
    }
    let meta = SaliencyMetadata {
        method: map.method,
        scene_id: scene_id.to_string(),
        queries_used: map.queries_used.clone(),
        height: h,
        width: w,
        cameras,
    };
    fs::write(dir.join(SALIENCY_METADATA), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a map written by [`save_saliency`] (values at `f32` precision).
pub fn load_saliency(dir: &Path) -> Result<(SaliencyMap, SaliencyMetadata)> {
    let mpath = dir.join(SALIENCY_METADATA);
    let text = fs::read_to_string(&mpath).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: mpath.clone() },
        _ => e.into(),
    })?;
    let meta: SaliencyMetadata =
        serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
    let per_camera = meta
        .cameras
        .iter()
        .map(|name| {
            let t = atns::read_shaped(&dir.join(name), &[meta.height, meta.width])?;
            Matrix::from_vec(meta.height, meta.width, t.data.iter().map(|&v| v as f64).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SaliencyMap {
            method: meta.method,
            per_camera,
            queries_used: meta.queries_used.clone(),
        },
        meta,
    ))
}
