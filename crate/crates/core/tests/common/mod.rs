//! Test-side oracles and fixtures shared by the integration targets.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xattn::autograd::AttentionGradients;
use xattn::detector::{AttentionRecord, ModelConfig};
use xattn::scenegen::{generate_scene, Scene, ScenegenParams};
use xattn::tensor::Tensor;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
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
    }
}

pub fn scene_params_for(cfg: &ModelConfig) -> ScenegenParams {
    ScenegenParams {
        n_cameras: cfg.n_cameras,
        height: cfg.image_height(),
        width: cfg.image_width(),
        n_classes: cfg.n_classes,
        min_objects: 1,
        max_objects: 2,
        min_radius: 0.15,
        max_radius: 0.25,
        noise_amplitude: 0.1,
    }
}

pub fn scene_for(cfg: &ModelConfig, seed: u64) -> Scene {
    generate_scene(seed, &scene_params_for(cfg)).unwrap()
}

/// Dims `(n_c, n_l, n_h, n_q, n_t)`.
pub type Dims = (usize, usize, usize, usize, usize);

pub fn random_dims(rng: &mut ChaCha8Rng) -> Dims {
    (
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(1..=3),
        rng.random_range(1..=5),
        rng.random_range(1..=6),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random probabilities and signed gradients with the given dims.
pub fn random_instance(rng: &mut ChaCha8Rng, (nc, nl, nh, nq, nt): Dims) -> (AttentionRecord, AttentionGradients) {
    let rec = AttentionRecord {
        cross: random_tensor(rng, &[nc, nl, nh, nq, nt], 0.0, 1.0),
        self_: random_tensor(rng, &[nl, nh, nq, nq], 0.0, 1.0),
    };
    let grads = AttentionGradients {
        cross_grad: random_tensor(rng, &[nc, nl, nh, nq, nt], -2.0, 2.0),
        self_grad: random_tensor(rng, &[nl, nh, nq, nq], -2.0, 2.0),
        target: (0, 0),
    };
    (rec, grads)
}

fn dims(rec: &AttentionRecord) -> Dims {
    let s = rec.cross.shape();
    (s[0], s[1], s[2], s[3], s[4])
}

/// Naive `[c][q][t]` loops.
pub fn oracle_raw_mean(rec: &AttentionRecord) -> Vec<f64> {
    let (nc, nl, nh, nq, nt) = dims(rec);
    let mut out = Vec::new();
    for c in 0..nc {
        for q in 0..nq {
            for t in 0..nt {
                let mut acc = 0.0;
                for l in 0..nl {
                    let mut s = 0.0;
                    for h in 0..nh {
                        s += rec.cross.get(&[c, l, h, q, t]);
                    }
                    acc += f64::max(s / nh as f64, 0.0);
                }
                out.push(acc / nl as f64);
            }
        }
    }
    out
}

pub fn oracle_raw_last(rec: &AttentionRecord) -> Vec<f64> {
    let (nc, nl, nh, nq, nt) = dims(rec);
    let mut out = Vec::new();
    for c in 0..nc {
        for q in 0..nq {
            for t in 0..nt {
                let mut s = 0.0;
                for h in 0..nh {
                    s += rec.cross.get(&[c, nl - 1, h, q, t]);
                }
                out.push(f64::max(s / nh as f64, 0.0));
            }
        }
    }
    out
}

pub fn oracle_raw_max(rec: &AttentionRecord) -> Vec<f64> {
    let (nc, nl, nh, nq, nt) = dims(rec);
    let mut out = Vec::new();
    for c in 0..nc {
        for q in 0..nq {
            for t in 0..nt {
                let mut best = f64::NEG_INFINITY;
                for l in 0..nl {
                    let mut layer_best = f64::NEG_INFINITY;
                    for h in 0..nh {
                        layer_best = layer_best.max(rec.cross.get(&[c, l, h, q, t]));
                    }
                    best = best.max(layer_best);
                }
                out.push(best);
            }
        }
    }
    out
}

pub fn oracle_grad_cam(rec: &AttentionRecord, g: &AttentionGradients) -> Vec<f64> {
    let (nc, nl, nh, nq, nt) = dims(rec);
    let mut out = Vec::new();
    for c in 0..nc {
        for q in 0..nq {
            for t in 0..nt {
                let mut acc = 0.0;
                for l in 0..nl {
                    let mut s = 0.0;
                    for h in 0..nh {
                        let i = [c, l, h, q, t];
                        s += g.cross_grad.get(&i) * rec.cross.get(&i);
                    }
                    acc += f64::max(s / nh as f64, 0.0);
                }
                out.push(acc / nl as f64);
            }
        }
    }
    out
}

type Mat = Vec<Vec<f64>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|p| a[i][p] * b[p][j]).sum()).collect())
        .collect()
}

fn mat_add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Scripted relevancy recurrence on plain nested vectors.
pub fn oracle_rollout(rec: &AttentionRecord, g: &AttentionGradients) -> Vec<f64> {
    let (nc, nl, nh, nq, nt) = dims(rec);
    let relevance = |a: &dyn Fn(usize, usize, usize) -> f64, ga: &dyn Fn(usize, usize, usize) -> f64, cols: usize| -> Mat {
        (0..nq)
            .map(|i| {
                (0..cols)
                    .map(|j| ((0..nh).map(|h| ga(h, i, j) * a(h, i, j)).sum::<f64>() / nh as f64).max(0.0))
                    .collect()
            })
            .collect()
    };
    let mut out = Vec::new();
    for c in 0..nc {
        let mut r_qq: Mat = (0..nq).map(|i| (0..nq).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let mut r_qi: Mat = vec![vec![0.0; nt]; nq];
        for l in 0..nl {
            let a_sf = relevance(
                &|h, i, j| rec.self_.get(&[l, h, i, j]),
                &|h, i, j| g.self_grad.get(&[l, h, i, j]),
                nq,
            );
            let a_cr = relevance(
                &|h, i, j| rec.cross.get(&[c, l, h, i, j]),
                &|h, i, j| g.cross_grad.get(&[c, l, h, i, j]),
                nt,
            );
            r_qq = mat_add(&r_qq, &mat_mul(&a_sf, &r_qq));
            r_qi = mat_add(&r_qi, &mat_mul(&a_sf, &r_qi));
            let bar: Mat = r_qq
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(|v| if s == 0.0 { 0.0 } else { v / s }).collect()
                })
                .collect();
            r_qi = mat_add(&r_qi, &mat_mul(&transpose(&bar), &a_cr));
        }
        out.extend(r_qi.into_iter().flatten());
    }
    out
}
