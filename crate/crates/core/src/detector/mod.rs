//! Toy decoder-only multi-camera transformer detector.
//!
//! A linear patch embedding plus a learned per-camera positional encoding
//! turns the `n_cameras` images into one memory of `n_cameras · n_tokens`
//! tokens. Each decoder layer runs pre-norm query self-attention, then
//! cross-attention of the queries against the whole memory with a single
//! softmax over all cameras' tokens, then a GELU feed-forward block.
//! Post-softmax probabilities of both attentions are captured into an
//! [`AttentionRecord`].

mod model;
mod train;
mod weights;

pub use model::{forward, AttentionSite};
pub(crate) use model::{build_graph, Graph, GraphOptions};
pub use train::{greedy_match, matched_accuracy, train, TrainOutcome, TrainParams};
pub use weights::{load_weights, random_init, save_weights, Weights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::PanoPoint;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_cameras: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_queries: usize,
    pub d_model: usize,
    pub ffn_hidden: usize,
    /// Token grid `(H', W')` per camera.
    pub grid: (usize, usize),
    /// Pixels per token side.
    pub patch: usize,
    pub n_classes: usize,
    /// Detection threshold on the maximum class probability.
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_cameras: 6,
            n_layers: 6,
            n_heads: 4,
            n_queries: 12,
            d_model: 32,
            ffn_hidden: 64,
            grid: (8, 8),
            patch: 8,
            n_classes: 4,
            threshold: 0.3,
        }
    }
}

impl ModelConfig {
    /// Per-head size `s = d / n_h`.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn image_height(&self) -> usize {
        self.grid.0 * self.patch
    }

    pub fn image_width(&self) -> usize {
        self.grid.1 * self.patch
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        let positive = [
            ("n_cameras", self.n_cameras),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_queries", self.n_queries),
            ("d_model", self.d_model),
            ("ffn_hidden", self.ffn_hidden),
            ("grid height", self.grid.0),
            ("grid width", self.grid.1),
            ("patch", self.patch),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        Ok(())
    }
}

/// One query's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub query: usize,
    pub class_probs: Vec<f64>,
    pub center: PanoPoint,
}

impl Detection {
    pub fn max_prob(&self) -> f64 {
        self.class_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn class_id(&self) -> usize {
        argmax(&self.class_probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Post-softmax attention probabilities of one forward pass.
///
/// `cross` has shape `[n_c, n_l, n_h, n_q, n_t]`; `self_` has shape
/// `[n_l, n_h, n_q, n_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub cross: Tensor,
    pub self_: Tensor,
}

impl AttentionRecord {
    pub fn n_cameras(&self) -> usize {
        self.cross.shape()[0]
    }

    pub fn n_layers(&self) -> usize {
        self.cross.shape()[1]
    }

    pub fn n_heads(&self) -> usize {
        self.cross.shape()[2]
    }

    pub fn n_queries(&self) -> usize {
        self.cross.shape()[3]
    }

    pub fn n_tokens(&self) -> usize {
        self.cross.shape()[4]
    }

    /// Largest deviation from 1 of any cross row (summed over cameras and
    /// tokens) or self row.
    pub fn max_normalization_error(&self) -> f64 {
        let (nc, nl, nh, nq) = (
            self.n_cameras(),
            self.n_layers(),
            self.n_heads(),
            self.n_queries(),
        );
        let mut worst: f64 = 0.0;
        for l in 0..nl {
            for h in 0..nh {
                for q in 0..nq {
                    let mut s = 0.0;
                    for c in 0..nc {
                        s += self.cross.slice(&[c, l, h, q]).iter().sum::<f64>();
                    }
                    worst = worst.max((s - 1.0).abs());
                    let srow: f64 = self.self_.slice(&[l, h, q]).iter().sum();
                    worst = worst.max((srow - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// Indices of queries whose maximum class probability exceeds `threshold`,
/// ascending.
pub fn filter_detections(dets: &[Detection], threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParams(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let mut selected: Vec<usize> = dets
        .iter()
        .filter(|d| d.max_prob() > threshold)
        .map(|d| d.query)
        .collect();
    selected.sort_unstable();
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(query: usize, probs: &[f64]) -> Detection {
        Detection {
            query,
            class_probs: probs.to_vec(),
            center: PanoPoint { x: 0.5, y: 0.5 },
        }
    }

    #[test]
    fn filter_keeps_confident_queries() {
        let dets = [det(0, &[0.1, 0.2]), det(1, &[0.9, 0.1])];
        assert_eq!(filter_detections(&dets, 0.3).unwrap(), vec![1]);
    }

    #[test]
    fn filter_can_return_nothing() {
        let dets = [det(0, &[0.99, 0.2]), det(1, &[0.5, 0.1])];
        assert!(filter_detections(&dets, 0.999).unwrap().is_empty());
    }

    #[test]
    fn filter_rejects_degenerate_threshold() {
        assert!(filter_detections(&[], 0.0).is_err());
        assert!(filter_detections(&[], 1.0).is_err());
    }

    #[test]
    fn filter_output_is_ascending() {
        let dets = [det(3, &[0.9]), det(1, &[0.8]), det(2, &[0.1])];
        assert_eq!(filter_detections(&dets, 0.3).unwrap(), vec![1, 3]);
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = ModelConfig {
            d_model: 30,
            n_heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim() * cfg.n_heads, cfg.d_model);
        assert_eq!(cfg.image_height(), 64);
        assert_eq!(cfg.n_tokens(), 64);
    }
}
