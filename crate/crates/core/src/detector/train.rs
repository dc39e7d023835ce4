//! Set-prediction training with greedy matching and Adam.

use std::borrow::Cow;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, build_graph, forward, random_init, GraphOptions, ModelConfig, Weights};
use crate::error::{Error, Result};
use crate::scenegen::{roll_cameras, GroundTruthObject, PanoPoint, Scene};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Weight of unmatched (background) queries in the classification loss.
    pub background_weight: f64,
    pub center_weight: f64,
    pub grad_clip: f64,
    /// Randomly roll the camera ring of each sampled scene.
    pub roll_augment: bool,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 4,
            learning_rate: 4e-3,
            warmup_steps: 100,
            background_weight: 0.25,
            center_weight: 1.0,
            grad_clip: 5.0,
            roll_augment: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    /// Mean batch loss over the last 50 steps.
    pub final_loss: f64,
    /// Fraction of ground-truth objects whose matched query's argmax class
    /// is correct, over the whole training set.
    pub accuracy: f64,
}

/// Assigns each ground-truth object, in order, the unmatched query whose
/// predicted center is nearest. Returns one query index per object.
pub fn greedy_match(centers: &[PanoPoint], truth: &[GroundTruthObject]) -> Vec<usize> {
    let mut used = vec![false; centers.len()];
    truth
        .iter()
        .map(|obj| {
            let mut best: Option<(usize, f64)> = None;
            for (q, c) in centers.iter().enumerate() {
                if used[q] {
                    continue;
                }
                let d = c.distance(&obj.center);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((q, d));
                }
            }
            let (q, _) = best.expect("more objects than queries");
            used[q] = true;
            q
        })
        .collect()
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(weights: &Weights) -> Self {
        let zeros: Vec<Matrix> = weights
            .tensors()
            .iter()
            .map(|t| Matrix::zeros(t.rows, t.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, weights: &mut Weights, grads: &[Matrix], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, p) in weights.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                m.data[j] = Self::BETA1 * m.data[j] + (1.0 - Self::BETA1) * g.data[j];
                v.data[j] = Self::BETA2 * v.data[j] + (1.0 - Self::BETA2) * g.data[j] * g.data[j];
                let mh = m.data[j] / bc1;
                let vh = v.data[j] / bc2;
                p.data[j] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

fn learning_rate(hyper: &TrainParams, step: usize) -> f64 {
    if step < hyper.warmup_steps {
        return hyper.learning_rate * (step + 1) as f64 / hyper.warmup_steps as f64;
    }
    let span = (hyper.steps - hyper.warmup_steps).max(1) as f64;
    let progress = (step - hyper.warmup_steps) as f64 / span;
    let floor = 0.05;
    hyper.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Loss and parameter gradients for one scene.
fn scene_gradients(weights: &Weights, scene: &Scene, hyper: &TrainParams) -> Result<(f64, Vec<Matrix>)> {
    let cfg = weights.config();
    let graph = build_graph(
        weights,
        scene,
        &GraphOptions {
            params_require_grad: true,
            shift: None,
        },
    )?;
    let mut tape = graph.tape;
    let centers: Vec<PanoPoint> = {
        let c = tape.value(graph.centers);
        (0..c.rows)
            .map(|q| PanoPoint {
                x: c.get(q, 0),
                y: c.get(q, 1),
            })
            .collect()
    };
    let matches = greedy_match(&centers, &scene.objects);

    let mut targets = Matrix::zeros(cfg.n_queries, cfg.n_classes);
    let mut class_w = Matrix::filled(cfg.n_queries, cfg.n_classes, hyper.background_weight);
    let mut center_t = Matrix::zeros(cfg.n_queries, 2);
    let mut center_w = Matrix::zeros(cfg.n_queries, 2);
    for (obj, &q) in scene.objects.iter().zip(&matches) {
        targets.set(q, obj.class_id, 1.0);
        class_w.row_mut(q).iter_mut().for_each(|w| *w = 1.0);
        center_t.set(q, 0, obj.center.x);
        center_t.set(q, 1, obj.center.y);
        center_w.set(q, 0, hyper.center_weight);
        center_w.set(q, 1, hyper.center_weight);
    }
    let cls = tape.bce_with_logits(graph.class_logits, targets, class_w);
    let ctr = tape.squared_error(graph.centers, center_t, center_w);
    let loss = tape.sum_scalars(&[cls, ctr]);
    let loss_value = tape.scalar(loss);
    let mut grads = tape.backward(loss);
    let param_grads = graph
        .params
        .iter()
        .zip(weights.tensors())
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Matrix::zeros(t.rows, t.cols)))
        .collect();
    Ok((loss_value, param_grads))
}

/// Fraction of objects whose greedily matched query predicts the right class.
pub fn matched_accuracy(weights: &Weights, scenes: &[Scene]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for scene in scenes {
        let (dets, _) = forward(weights, scene).map_err(|e| Error::in_scene(&scene.id, e))?;
        let centers: Vec<PanoPoint> = dets.iter().map(|d| d.center).collect();
        for (obj, q) in scene.objects.iter().zip(greedy_match(&centers, &scene.objects)) {
            total += 1;
            if argmax(&dets[q].class_probs) == obj.class_id {
                correct += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Trains from `random_init(hyper.seed)`; deterministic for fixed inputs.
pub fn train(dataset: &[Scene], cfg: &ModelConfig, hyper: &TrainParams) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidParams("training dataset is empty".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidParams("batch_size must be positive".into()));
    }
    let max_objects = dataset.iter().map(|s| s.objects.len()).max().unwrap_or(0);
    if max_objects > cfg.n_queries {
        return Err(Error::InvalidParams(format!(
            "a scene has {max_objects} objects but the model only has {} queries",
            cfg.n_queries
        )));
    }
    let mut weights = random_init(hyper.seed, cfg)?;
    let mut adam = Adam::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x005E_ED0F_DA7A);
    let mut recent = std::collections::VecDeque::with_capacity(50);

    for step in 0..hyper.steps {
        let batch: Vec<Cow<Scene>> = (0..hyper.batch_size)
            .map(|_| {
                let scene = &dataset[rng.random_range(0..dataset.len())];
                if hyper.roll_augment {
                    Cow::Owned(roll_cameras(scene, rng.random_range(0..cfg.n_cameras)))
                } else {
                    Cow::Borrowed(scene)
                }
            })
            .collect();
        let results: Vec<(f64, Vec<Matrix>)> = batch
            .par_iter()
            .map(|scene| scene_gradients(&weights, scene, hyper))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFiniteForward { .. } => Error::Diverged {
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
        let mut batch_loss = 0.0;
        let mut total: Option<Vec<Matrix>> = None;
        for (loss, grads) in results {
            batch_loss += loss;
            match &mut total {
                None => total = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = total.expect("batch_size > 0");
        batch_loss /= hyper.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: batch_loss,
            });
        }
        let inv = 1.0 / hyper.batch_size as f64;
        let mut norm_sq = 0.0;
        for g in &mut grads {
            g.scale(inv);
            norm_sq += g.data.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = norm_sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: batch_loss,
            });
        }
        if hyper.grad_clip > 0.0 && norm > hyper.grad_clip {
            let f = hyper.grad_clip / norm;
            grads.iter_mut().for_each(|g| g.scale(f));
        }
        adam.step(&mut weights, &grads, learning_rate(hyper, step));

        if recent.len() == 50 {
            recent.pop_front();
        }
        recent.push_back(batch_loss);
        if step % 250 == 0 || step + 1 == hyper.steps {
            debug!("step {step}: loss {batch_loss:.4} grad-norm {norm:.3}");
        }
    }
    if !weights.is_finite() {
        return Err(Error::Diverged {
            step: hyper.steps,
            loss: f64::NAN,
        });
    }
    let final_loss = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    let accuracy = matched_accuracy(&weights, dataset)?;
    info!(
        "trained {} steps: final loss {final_loss:.4}, matched accuracy {:.3}",
        hyper.steps, accuracy
    );
    Ok(TrainOutcome {
        weights,
        final_loss,
        accuracy,
    })
}
