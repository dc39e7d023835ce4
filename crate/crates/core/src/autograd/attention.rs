use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{build_graph, AttentionRecord, AttentionSite, Graph, GraphOptions, Weights};
use crate::error::{Error, Result};
use crate::scenegen::Scene;
use crate::tensor::Tensor;

/// Scalar differentiated for a `(query, class)` target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradTarget {
    /// Pre-sigmoid class logit.
    #[default]
    Logit,
    /// Sigmoid class probability.
    Prob,
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(GradTarget::Logit),
            "prob" => Ok(GradTarget::Prob),
            other => Err(Error::InvalidParams(format!(
                "unknown gradient target {other:?} (valid: logit, prob)"
            ))),
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradTarget::Logit => "logit",
            GradTarget::Prob => "prob",
        })
    }
}

/// `∂y / ∂A` at the recording sites, shaped like [`AttentionRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub cross_grad: Tensor,
    pub self_grad: Tensor,
    /// `(query, class)`
    pub target: (usize, usize),
}

fn check_target(weights: &Weights, query: usize, class_id: usize) -> Result<()> {
    let cfg = weights.config();
    if query >= cfg.n_queries {
        return Err(Error::InvalidParams(format!(
            "query {query} out of range (n_queries = {})",
            cfg.n_queries
        )));
    }
    if class_id >= cfg.n_classes {
        return Err(Error::InvalidParams(format!(
            "class {class_id} out of range (n_classes = {})",
            cfg.n_classes
        )));
    }
    Ok(())
}

fn objective_node(graph: &mut Graph, query: usize, class_id: usize, target: GradTarget) -> crate::autograd::NodeId {
    let logit = graph.tape.element(graph.class_logits, query, class_id);
    match target {
        GradTarget::Logit => logit,
        GradTarget::Prob => graph.tape.sigmoid(logit),
    }
}

/// One forward and one backward pass from the `(query, class_id)` output.
pub fn attention_gradients(
    weights: &Weights,
    scene: &Scene,
    query: usize,
    class_id: usize,
    target: GradTarget,
) -> Result<(AttentionRecord, AttentionGradients)> {
    check_target(weights, query, class_id)?;
    let cfg = weights.config();
    let mut graph = build_graph(weights, scene, &GraphOptions::default())?;
    let out = objective_node(&mut graph, query, class_id, target);
    let grads = graph.tape.backward(out);
    let record = graph.record(cfg);
    let (cross_grad, self_grad) = graph.gather(cfg, |id| grads.get(id));
    for l in 0..cfg.n_layers {
        let finite = (0..cfg.n_heads).all(|h| {
            self_grad.slice(&[l, h]).iter().all(|v| v.is_finite())
                && (0..cfg.n_cameras).all(|c| cross_grad.slice(&[c, l, h]).iter().all(|v| v.is_finite()))
        });
        if !finite {
            return Err(Error::NonFiniteGradient { layer: l });
        }
    }
    Ok((
        record,
        AttentionGradients {
            cross_grad,
            self_grad,
            target: (query, class_id),
        },
    ))
}

/// The differentiated scalar, optionally with one attention probability
/// shifted by `delta` (no re-normalization).
pub fn objective_value(
    weights: &Weights,
    scene: &Scene,
    query: usize,
    class_id: usize,
    target: GradTarget,
    shift: Option<(AttentionSite, f64)>,
) -> Result<f64> {
    check_target(weights, query, class_id)?;
    let mut graph = build_graph(
        weights,
        scene,
        &GraphOptions {
            params_require_grad: false,
            shift,
        },
    )?;
    let out = objective_node(&mut graph, query, class_id, target);
    Ok(graph.tape.scalar(out))
}

/// Central difference of the objective with respect to one recorded
/// attention probability.
pub fn finite_diff_oracle(
    weights: &Weights,
    scene: &Scene,
    query: usize,
    class_id: usize,
    site: AttentionSite,
    eps: f64,
    target: GradTarget,
) -> Result<f64> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::InvalidParams(format!("eps {eps} outside [1e-5, 1e-2]")));
    }
    site.validate(weights.config())?;
    let plus = objective_value(weights, scene, query, class_id, target, Some((site, eps)))?;
    let minus = objective_value(weights, scene, query, class_id, target, Some((site, -eps)))?;
    Ok((plus - minus) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::Tape;
    use crate::detector::{random_init, ModelConfig};
    use crate::scenegen::{generate_scene, ScenegenParams};
    use crate::tensor::Matrix;

    fn tiny() -> ModelConfig {
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

    fn scene(cfg: &ModelConfig, seed: u64) -> Scene {
        let p = ScenegenParams {
            n_cameras: cfg.n_cameras,
            height: cfg.image_height(),
            width: cfg.image_width(),
            n_classes: cfg.n_classes,
            min_objects: 1,
            max_objects: 2,
            min_radius: 0.15,
            max_radius: 0.25,
            noise_amplitude: 0.1,
        };
        generate_scene(seed, &p).unwrap()
    }

    fn grad_at(g: &AttentionGradients, site: AttentionSite) -> f64 {
        match site {
            AttentionSite::Cross {
                camera,
                layer,
                head,
                query,
                token,
            } => g.cross_grad.get(&[camera, layer, head, query, token]),
            AttentionSite::SelfAttn {
                layer,
                head,
                query,
                key,
            } => g.self_grad.get(&[layer, head, query, key]),
        }
    }

    fn random_site(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> AttentionSite {
        let (layer, head, query) = (
            rng.random_range(0..cfg.n_layers),
            rng.random_range(0..cfg.n_heads),
            rng.random_range(0..cfg.n_queries),
        );
        if rng.random_bool(0.5) {
            AttentionSite::Cross {
                camera: rng.random_range(0..cfg.n_cameras),
                layer,
                head,
                query,
                token: rng.random_range(0..cfg.n_tokens()),
            }
        } else {
            AttentionSite::SelfAttn {
                layer,
                head,
                query,
                key: rng.random_range(0..cfg.n_queries),
            }
        }
    }

    #[test]
    fn matches_finite_differences_at_random_sites() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for trial in 0..4 {
            let w = random_init(trial, &cfg).unwrap();
            let s = scene(&cfg, 100 + trial);
            let (q, c) = (rng.random_range(0..cfg.n_queries), rng.random_range(0..cfg.n_classes));
            let (_, g) = attention_gradients(&w, &s, q, c, GradTarget::Logit).unwrap();
            for _ in 0..30 {
                let site = random_site(&mut rng, &cfg);
                let fd = finite_diff_oracle(&w, &s, q, c, site, 1e-4, GradTarget::Logit).unwrap();
                let an = grad_at(&g, site);
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn probability_target_matches_finite_differences() {
        let cfg = tiny();
        let w = random_init(9, &cfg).unwrap();
        let s = scene(&cfg, 9);
        let (_, g) = attention_gradients(&w, &s, 1, 2, GradTarget::Prob).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let site = random_site(&mut rng, &cfg);
            let fd = finite_diff_oracle(&w, &s, 1, 2, site, 1e-4, GradTarget::Prob).unwrap();
            let an = grad_at(&g, site);
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-8), "{an} vs {fd}");
        }
    }

    #[test]
    fn zeroed_output_block_silences_head() {
        let cfg = tiny();
        let mut w = random_init(1, &cfg).unwrap();
        let hd = cfg.head_dim();
        let o = w.get_mut("layers.0.cross_attn.o.weight").unwrap();
        for r in hd..2 * hd {
            o.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, g) = attention_gradients(&w, &scene(&cfg, 1), 0, 0, GradTarget::Logit).unwrap();
        for c in 0..cfg.n_cameras {
            assert!(g.cross_grad.slice(&[c, 0, 1]).iter().all(|&v| v == 0.0));
            assert!(g.cross_grad.slice(&[c, 0, 0]).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn zero_values_give_zero_derivative() {
        let cfg = tiny();
        let mut w = random_init(2, &cfg).unwrap();
        for name in ["layers.1.cross_attn.v.weight", "layers.1.cross_attn.v.bias"] {
            w.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let site = AttentionSite::Cross {
            camera: 1,
            layer: 1,
            head: 0,
            query: 2,
            token: 5,
        };
        let s = scene(&cfg, 2);
        assert_eq!(finite_diff_oracle(&w, &s, 2, 1, site, 1e-3, GradTarget::Logit).unwrap(), 0.0);
        let (_, g) = attention_gradients(&w, &s, 2, 1, GradTarget::Logit).unwrap();
        assert_eq!(grad_at(&g, site), 0.0);
    }

    #[test]
    fn linear_path_matches_hand_derivation() {
        // y = (A V w)[0] with A = softmax(S): dy/dA[i][j] = [i == 0] * (V w)[j].
        let mut tape = Tape::new();
        let s = tape.leaf(Matrix::from_rows(&[vec![0.3, -0.2], vec![1.0, 0.5]]), true);
        let a = tape.softmax_rows(s);
        let a = tape.tap(a, None);
        let v = tape.leaf(Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]), false);
        let w = tape.leaf(Matrix::from_rows(&[vec![0.5], vec![4.0]]), false);
        let av = tape.matmul(a, v);
        let avw = tape.matmul(av, w);
        let y = tape.element(avw, 0, 0);
        let g = tape.backward(y);
        assert_eq!(g.get(a).unwrap().data, vec![8.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn halving_eps_shrinks_error_fourfold() {
        let cfg = tiny();
        let w = random_init(4, &cfg).unwrap();
        let s = scene(&cfg, 4);
        let (_, g) = attention_gradients(&w, &s, 0, 1, GradTarget::Prob).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        for _ in 0..200 {
            let site = random_site(&mut rng, &cfg);
            let an = grad_at(&g, site);
            let e1 = (finite_diff_oracle(&w, &s, 0, 1, site, 1e-2, GradTarget::Prob).unwrap() - an).abs();
            let e2 = (finite_diff_oracle(&w, &s, 0, 1, site, 5e-3, GradTarget::Prob).unwrap() - an).abs();
            if e1 < 1e-9 {
                continue;
            }
            let ratio = e1 / e2;
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio} at {site:?}");
            checked += 1;
            if checked == 10 {
                break;
            }
        }
        assert!(checked >= 5, "only {checked} sites with measurable truncation error");
    }

    #[test]
    fn gradient_is_linear_in_the_objective() {
        let cfg = tiny();
        let w = random_init(5, &cfg).unwrap();
        let mut graph = build_graph(&w, &scene(&cfg, 5), &GraphOptions::default()).unwrap();
        let y = objective_node(&mut graph, 1, 0, GradTarget::Logit);
        let g1 = graph.tape.backward(y);
        let g3 = graph.tape.backward_with_seed(y, Matrix::filled(1, 1, 3.0));
        let (c1, s1) = graph.gather(&cfg, |id| g1.get(id));
        let (c3, s3) = graph.gather(&cfg, |id| g3.get(id));
        for (a, b) in c1.data().iter().zip(c3.data()).chain(s1.data().iter().zip(s3.data())) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_are_bit_identical_across_runs() {
        let cfg = tiny();
        let w = random_init(6, &cfg).unwrap();
        let s = scene(&cfg, 6);
        let a = attention_gradients(&w, &s, 3, 2, GradTarget::Logit).unwrap();
        let b = attention_gradients(&w, &s, 3, 2, GradTarget::Logit).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_out_of_range_targets_and_eps() {
        let cfg = tiny();
        let w = random_init(0, &cfg).unwrap();
        let s = scene(&cfg, 0);
        assert!(attention_gradients(&w, &s, 4, 0, GradTarget::Logit).is_err());
        assert!(attention_gradients(&w, &s, 0, 3, GradTarget::Logit).is_err());
        let site = AttentionSite::SelfAttn {
            layer: 0,
            head: 0,
            query: 0,
            key: 0,
        };
        assert!(finite_diff_oracle(&w, &s, 0, 0, site, 1e-6, GradTarget::Logit).is_err());
        let bad = AttentionSite::SelfAttn {
            layer: 2,
            head: 0,
            query: 0,
            key: 0,
        };
        assert!(finite_diff_oracle(&w, &s, 0, 0, bad, 1e-3, GradTarget::Logit).is_err());
    }
}
