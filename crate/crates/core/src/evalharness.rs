//! Perturbation sweeps, a small detection score, AUC and the
//! parameter-randomization sanity check.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{filter_detections, forward, Detection, Weights};
use crate::error::{Error, Result};
use crate::saliency::{explain_with, ExplainOptions, Method, SaliencyMap};
use crate::scenegen::{scene_seed, GroundTruthObject, Scene};

/// Panoramic distance within which a detection can match an object.
pub const MATCH_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Mask the most salient pixels first.
    Positive,
    /// Mask the least salient pixels first.
    Negative,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Positive => "positive",
            Mode::Negative => "negative",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Mode::Positive),
            "negative" => Ok(Mode::Negative),
            other => Err(Error::InvalidParams(format!(
                "unknown mode {other:?} (valid: positive, negative)"
            ))),
        }
    }
}

/// `0, 0.05, …, 1`.
pub fn default_fractions() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&0.0) {
        return Err(Error::InvalidParams("fractions must start at 0".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidParams("fractions must lie in [0, 1]".into()));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("fractions must be strictly ascending".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub method: Method,
    pub mode: Mode,
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
    pub n_scenes: usize,
    pub seed: u64,
}

/// Trapezoid rule over `(fraction · 100, score)`.
pub fn auc(fractions: &[f64], scores: &[f64]) -> f64 {
    fractions
        .windows(2)
        .zip(scores.windows(2))
        .map(|(f, s)| 100.0 * (f[1] - f[0]) * (s[0] + s[1]) / 2.0)
        .sum()
}

/// Ranks pixels by saliency and replaces the first `round(fraction · N)`
/// with their camera's clean per-channel mean. With `per_camera`, every
/// camera masks its own `round(fraction · H · W)` pixels instead of a
/// global quota.
pub fn perturb_with(scene: &Scene, map: &SaliencyMap, fraction: f64, mode: Mode, per_camera: bool) -> Result<Scene> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParams(format!("fraction {fraction} outside [0, 1]")));
    }
    let (h, w, nc) = (scene.height, scene.width, scene.n_cameras());
    if map.per_camera.len() != nc || map.per_camera.iter().any(|m| m.shape() != (h, w)) {
        return Err(Error::Shape(format!(
            "saliency map does not cover {nc} cameras of {h}x{w}"
        )));
    }
    let means: Vec<[f32; 3]> = scene.images.iter().map(|img| channel_mean(img)).collect();
    let value = |i: usize| map.per_camera[i / (h * w)].data[i % (h * w)];
    let order = |a: &usize, b: &usize| {
        let (va, vb) = (value(*a), value(*b));
        let by_value = match mode {
            Mode::Positive => vb.total_cmp(&va),
            Mode::Negative => va.total_cmp(&vb),
        };
        by_value.then(a.cmp(b))
    };
    let groups: Vec<Vec<usize>> = if per_camera {
        (0..nc).map(|c| (c * h * w..(c + 1) * h * w).collect()).collect()
    } else {
        vec![(0..nc * h * w).collect()]
    };
    let mut out = scene.clone();
    for mut idx in groups {
        let k = (fraction * idx.len() as f64).round() as usize;
        if k == 0 {
            continue;
        }
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, order);
        }
        for &i in &idx[..k] {
            let (c, p) = (i / (h * w), i % (h * w));
            out.images[c][p * 3..p * 3 + 3].copy_from_slice(&means[c]);
        }
    }
    Ok(out)
}

pub fn perturb(scene: &Scene, map: &SaliencyMap, fraction: f64, mode: Mode) -> Result<Scene> {
    perturb_with(scene, map, fraction, mode, false)
}

fn channel_mean(img: &[f32]) -> [f32; 3] {
    let mut sum = [0.0f64; 3];
    for px in img.chunks_exact(3) {
        for ch in 0..3 {
            sum[ch] += px[ch] as f64;
        }
    }
    let n = (img.len() / 3).max(1) as f64;
    sum.map(|s| (s / n) as f32)
}

/// `0.5 · F1 + 0.5 · mean localization quality` of class-consistent greedy
/// matches within [`MATCH_RADIUS`].
pub fn detection_score(dets: &[Detection], selected: &[usize], truth: &[GroundTruthObject]) -> f64 {
    if selected.is_empty() {
        return if truth.is_empty() { 1.0 } else { 0.0 };
    }
    if truth.is_empty() {
        return 0.0;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (si, &q) in selected.iter().enumerate() {
        let det = &dets[q];
        for (ti, obj) in truth.iter().enumerate() {
            let d = det.center.distance(&obj.center);
            if d <= MATCH_RADIUS && det.class_id() == obj.class_id {
                pairs.push((d, si, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; selected.len()];
    let mut obj_used = vec![false; truth.len()];
    let mut dists = Vec::new();
    for (d, si, ti) in pairs {
        if !det_used[si] && !obj_used[ti] {
            det_used[si] = true;
            obj_used[ti] = true;
            dists.push(d);
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    let m = dists.len() as f64;
    let precision = m / selected.len() as f64;
    let recall = m / truth.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    let quality = dists.iter().map(|d| (1.0 - d / MATCH_RADIUS).max(0.0)).sum::<f64>() / m;
    0.5 * f1 + 0.5 * quality
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub threshold: Option<f64>,
    pub per_camera: bool,
    pub explain: ExplainOptions,
}

/// Per-scene scores at each fraction, from saliency computed once on the
/// clean pass. The random baseline draws from `scene_seed(seed, index)`.
pub fn sweep_scores(
    weights: &Weights,
    dataset: &[Scene],
    method: Method,
    mode: Mode,
    fractions: &[f64],
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<Vec<f64>>> {
    validate_fractions(fractions)?;
    let threshold = opts.threshold.unwrap_or(weights.config().threshold);
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let run = || -> Result<Vec<f64>> {
                let (dets, rec) = forward(weights, scene)?;
                let mut explain = opts.explain.clone();
                explain.threshold = Some(threshold);
                explain.random_seed = scene_seed(seed, i);
                let map = explain_with(weights, scene, method, &dets, &rec, &explain)?;
                fractions
                    .iter()
                    .map(|&f| {
                        let perturbed = perturb_with(scene, &map, f, mode, opts.per_camera)?;
                        let (pdets, _) = forward(weights, &perturbed)?;
                        let selected = filter_detections(&pdets, threshold)?;
                        Ok(detection_score(&pdets, &selected, &scene.objects))
                    })
                    .collect()
            };
            run().map_err(|e| Error::in_scene(&scene.id, e))
        })
        .collect()
}

pub fn run_sweep(
    weights: &Weights,
    dataset: &[Scene],
    method: Method,
    mode: Mode,
    fractions: &[f64],
    seed: u64,
) -> Result<PerturbationCurve> {
    run_sweep_with(weights, dataset, method, mode, fractions, seed, &SweepOptions::default())
}

pub fn run_sweep_with(
    weights: &Weights,
    dataset: &[Scene],
    method: Method,
    mode: Mode,
    fractions: &[f64],
    seed: u64,
    opts: &SweepOptions,
) -> Result<PerturbationCurve> {
    let per_scene = sweep_scores(weights, dataset, method, mode, fractions, seed, opts)?;
    let n = per_scene.len().max(1) as f64;
    let scores: Vec<f64> = (0..fractions.len())
        .map(|j| per_scene.iter().map(|s| s[j]).sum::<f64>() / n)
        .collect();
    Ok(PerturbationCurve {
        method,
        mode,
        fractions: fractions.to_vec(),
        auc: auc(fractions, &scores),
        scores,
        n_scenes: dataset.len(),
        seed,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if saa == sbb && a == b { 1.0 } else { 0.0 };
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation; `0` when exactly one input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub method: Method,
    /// `(scene id, correlation)` for every scene with selected queries.
    pub correlations: Vec<(String, f64)>,
    pub mean: f64,
    pub std: f64,
    /// Scenes where the trained model selected no query.
    pub skipped: usize,
}

/// Rank correlation between saliency under `trained` and `random_w`, both
/// explained at the queries the trained model selects.
pub fn sanity_check(
    trained: &Weights,
    random_w: &Weights,
    dataset: &[Scene],
    method: Method,
    opts: &ExplainOptions,
) -> Result<SanityReport> {
    let threshold = opts.threshold.unwrap_or(trained.config().threshold);
    let results: Vec<Option<(String, f64)>> = dataset
        .par_iter()
        .map(|scene| {
            let run = || -> Result<Option<(String, f64)>> {
                let (dets, rec) = forward(trained, scene)?;
                let selected = filter_detections(&dets, threshold)?;
                if selected.is_empty() {
                    return Ok(None);
                }
                let o = ExplainOptions {
                    queries: Some(selected),
                    ..opts.clone()
                };
                let a = explain_with(trained, scene, method, &dets, &rec, &o)?;
                let (rdets, rrec) = forward(random_w, scene)?;
                let b = explain_with(random_w, scene, method, &rdets, &rrec, &o)?;
                Ok(Some((scene.id.clone(), spearman(&flatten(&a), &flatten(&b)))))
            };
            run().map_err(|e| Error::in_scene(&scene.id, e))
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let correlations: Vec<(String, f64)> = results.into_iter().flatten().collect();
    let n = correlations.len() as f64;
    let (mean, std) = if correlations.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = correlations.iter().map(|c| c.1).sum::<f64>() / n;
        let var = correlations.iter().map(|c| (c.1 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok(SanityReport {
        method,
        correlations,
        mean,
        std,
        skipped,
    })
}

pub fn flatten(map: &SaliencyMap) -> Vec<f64> {
    map.per_camera.iter().flat_map(|m| m.data.iter().copied()).collect()
}

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn curve_file_name(method: Method, mode: Mode) -> String {
    format!("{method}_{mode}.csv")
}

/// One `fraction,score` CSV per curve plus `summary.csv`
/// (`method,mode,auc,n_scenes,seed`), curves sorted by `(method, mode)`.
pub fn emit_report(curves: &[PerturbationCurve], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sorted: Vec<&PerturbationCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| (c.method, c.mode));
    let mut summary = String::from("method,mode,auc,n_scenes,seed\n");
    for c in sorted {
        let mut csv = String::from("fraction,score\n");
        for (f, s) in c.fractions.iter().zip(&c.scores) {
            csv.push_str(&format!("{f},{s}\n"));
        }
        fs::write(dir.join(curve_file_name(c.method, c.mode)), csv)?;
        summary.push_str(&format!("{},{},{},{},{}\n", c.method, c.mode, c.auc, c.n_scenes, c.seed));
    }
    fs::write(dir.join(SUMMARY_FILE), summary)?;
    Ok(())
}

/// Adds `curves` to the report in `dir`, replacing curves with the same
/// `(method, mode)` and keeping the rest.
pub fn update_report(curves: &[PerturbationCurve], dir: &Path) -> Result<()> {
    let mut all: Vec<PerturbationCurve> = Vec::new();
    if dir.join(SUMMARY_FILE).exists() {
        for method in Method::ALL {
            for mode in [Mode::Positive, Mode::Negative] {
                if curves.iter().any(|c| c.method == method && c.mode == mode) {
                    continue;
                }
                match load_curve(dir, method, mode) {
                    Ok(c) => all.push(c),
                    Err(Error::MissingFile { .. } | Error::Parse { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    all.extend_from_slice(curves);
    emit_report(&all, dir)
}

/// Reads back one curve written by [`emit_report`].
pub fn load_curve(dir: &Path, method: Method, mode: Mode) -> Result<PerturbationCurve> {
    let path = dir.join(curve_file_name(method, mode));
    let text = read_existing(&path)?;
    let mut fractions = Vec::new();
    let mut scores = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let (f, s) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&path, format!("line {}: expected fraction,score", n + 1)))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| Error::parse(&path, format!("line {}: {e}", n + 1)))
        };
        fractions.push(num(f)?);
        scores.push(num(s)?);
    }
    let spath = dir.join(SUMMARY_FILE);
    let summary = read_existing(&spath)?;
    let row = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|r| r.len() == 5 && r[0] == method.as_str() && r[1] == mode.as_str())
        .ok_or_else(|| Error::parse(&spath, format!("no summary row for {method},{mode}")))?;
    let bad = |e: String| Error::parse(&spath, e);
    Ok(PerturbationCurve {
        method,
        mode,
        fractions,
        scores,
        auc: row[2].parse().map_err(|e| bad(format!("auc: {e}")))?,
        n_scenes: row[3].parse().map_err(|e| bad(format!("n_scenes: {e}")))?,
        seed: row[4].parse().map_err(|e| bad(format!("seed: {e}")))?,
    })
}

fn read_existing(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => e.into(),
    })
}
