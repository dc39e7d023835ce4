use super::weights::{AttentionParams, Layout, Linear, Norm};
use super::{AttentionRecord, Detection, ModelConfig, Weights};
use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scenegen::{PanoPoint, Scene};
use crate::tensor::{Matrix, Tensor};

/// One entry of the recorded attention tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSite {
    Cross {
        camera: usize,
        layer: usize,
        head: usize,
        query: usize,
        token: usize,
    },
    SelfAttn {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
    },
}

impl AttentionSite {
    pub fn layer(&self) -> usize {
        match *self {
            AttentionSite::Cross { layer, .. } | AttentionSite::SelfAttn { layer, .. } => layer,
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let ok = match *self {
            AttentionSite::Cross {
                camera,
                layer,
                head,
                query,
                token,
            } => {
                camera < cfg.n_cameras
                    && layer < cfg.n_layers
                    && head < cfg.n_heads
                    && query < cfg.n_queries
                    && token < cfg.n_tokens()
            }
            AttentionSite::SelfAttn {
                layer,
                head,
                query,
                key,
            } => layer < cfg.n_layers && head < cfg.n_heads && query < cfg.n_queries && key < cfg.n_queries,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("attention site {self:?} out of range")))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct GraphOptions {
    /// Parameter leaves accumulate gradients (training).
    pub params_require_grad: bool,
    /// Adds a constant to one recorded probability before it is consumed.
    pub shift: Option<(AttentionSite, f64)>,
}

/// A recorded forward pass.
pub(crate) struct Graph {
    pub tape: Tape,
    pub params: Vec<NodeId>,
    /// `[layer][head]`, each `n_q × n_q`.
    pub self_taps: Vec<Vec<NodeId>>,
    /// `[layer][head]`, each `n_q × (n_c · n_t)`, camera-major columns.
    pub cross_taps: Vec<Vec<NodeId>>,
    /// `n_q × n_classes`
    pub class_logits: NodeId,
    /// `n_q × 2` panoramic `(x, y)`
    pub centers: NodeId,
}

/// `n_c · n_t` rows of flattened `patch × patch × 3` pixels, shifted to be
/// zero-centered around the background gray.
fn patch_matrix(scene: &Scene, cfg: &ModelConfig) -> Matrix {
    let (gh, gw, p) = (cfg.grid.0, cfg.grid.1, cfg.patch);
    let nt = cfg.n_tokens();
    let mut m = Matrix::zeros(cfg.n_cameras * nt, cfg.patch_dim());
    for c in 0..cfg.n_cameras {
        for gy in 0..gh {
            for gx in 0..gw {
                let row = m.row_mut(c * nt + gy * gw + gx);
                let mut k = 0;
                for py in 0..p {
                    for px in 0..p {
                        let px_val = scene.pixel(c, gy * p + py, gx * p + px);
                        for ch in px_val {
                            row[k] = ch as f64 - 0.5;
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    m
}

fn check_scene(scene: &Scene, cfg: &ModelConfig) -> Result<()> {
    if scene.n_cameras() != cfg.n_cameras
        || scene.height != cfg.image_height()
        || scene.width != cfg.image_width()
    {
        return Err(Error::Shape(format!(
            "scene {} is {}x{}x{} but the model expects {}x{}x{}",
            scene.id,
            scene.n_cameras(),
            scene.height,
            scene.width,
            cfg.n_cameras,
            cfg.image_height(),
            cfg.image_width()
        )));
    }
    Ok(())
}

struct Builder<'a> {
    tape: Tape,
    params: Vec<NodeId>,
    cfg: &'a ModelConfig,
    shift: Option<(AttentionSite, f64)>,
}

impl Builder<'_> {
    fn p(&self, idx: usize) -> NodeId {
        self.params[idx]
    }

    fn linear(&mut self, x: NodeId, lin: Linear) -> NodeId {
        let y = self.tape.matmul(x, self.p(lin.w));
        self.tape.add_row(y, self.p(lin.b))
    }

    fn norm(&mut self, x: NodeId, n: Norm) -> NodeId {
        self.tape.layer_norm(x, self.p(n.gamma), self.p(n.beta))
    }

    /// Multi-head scaled dot-product attention; returns the output
    /// projection and one probability tap per head.
    fn attention(
        &mut self,
        queries: NodeId,
        keys_values: NodeId,
        params: AttentionParams,
        shift_of: impl Fn(usize) -> Option<(usize, usize, f64)>,
    ) -> (NodeId, Vec<NodeId>) {
        let q = self.linear(queries, params.q);
        let k = self.linear(keys_values, params.k);
        let v = self.linear(keys_values, params.v);
        let s = self.cfg.head_dim();
        let scale = 1.0 / (self.cfg.d_model as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        let mut taps = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = self.tape.slice_cols(q, h * s, s);
            let kh = self.tape.slice_cols(k, h * s, s);
            let vh = self.tape.slice_cols(v, h * s, s);
            let logits = self.tape.matmul_t(qh, kh);
            let logits = self.tape.scale(logits, scale);
            let probs = self.tape.softmax_rows(logits);
            let tap = self.tape.tap(probs, shift_of(h));
            taps.push(tap);
            heads.push(self.tape.matmul(tap, vh));
        }
        let cat = self.tape.concat_cols(&heads);
        (self.linear(cat, params.o), taps)
    }
}

pub(crate) fn build_graph(weights: &Weights, scene: &Scene, opts: &GraphOptions) -> Result<Graph> {
    let cfg = weights.config();
    check_scene(scene, cfg)?;
    if let Some((site, _)) = &opts.shift {
        site.validate(cfg)?;
    }
    let layout: Layout = weights.layout();
    let mut tape = Tape::new();
    let params = weights
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), opts.params_require_grad))
        .collect();
    let mut b = Builder {
        tape,
        params,
        cfg,
        shift: opts.shift,
    };
    let nt = cfg.n_tokens();

    let patches = b.tape.leaf(patch_matrix(scene, cfg), false);
    let tokens = b.linear(patches, layout.patch_embed);
    let memory = b.tape.add(tokens, b.p(layout.pos_embed));
    let memory = b.norm(memory, layout.memory_norm);
    if !b.tape.value(memory).is_finite() {
        return Err(Error::NonFiniteForward { layer: 0 });
    }

    let mut x = b.p(layout.query_embed);
    let mut self_taps = Vec::with_capacity(cfg.n_layers);
    let mut cross_taps = Vec::with_capacity(cfg.n_layers);
    for (l, lp) in layout.layers.iter().enumerate() {
        let shift = b.shift;
        let h = b.norm(x, lp.self_norm);
        let (sa, taps) = b.attention(h, h, lp.self_attn, |head| match shift {
            Some((AttentionSite::SelfAttn { layer, head: sh, query, key }, delta))
                if layer == l && sh == head =>
            {
                Some((query, key, delta))
            }
            _ => None,
        });
        self_taps.push(taps);
        x = b.tape.add(x, sa);

        let h = b.norm(x, lp.cross_norm);
        let (ca, taps) = b.attention(h, memory, lp.cross_attn, |head| match shift {
            Some((
                AttentionSite::Cross {
                    camera,
                    layer,
                    head: sh,
                    query,
                    token,
                },
                delta,
            )) if layer == l && sh == head => Some((query, camera * nt + token, delta)),
            _ => None,
        });
        cross_taps.push(taps);
        x = b.tape.add(x, ca);

        let h = b.norm(x, lp.ffn_norm);
        let f = b.linear(h, lp.fc1);
        let f = b.tape.gelu(f);
        let f = b.linear(f, lp.fc2);
        x = b.tape.add(x, f);

        if !b.tape.value(x).is_finite() {
            return Err(Error::NonFiniteForward { layer: l });
        }
    }

    let h = b.norm(x, layout.final_norm);
    let class_logits = b.linear(h, layout.class_head);
    let raw_box = b.linear(h, layout.box_head);
    let unit_box = b.tape.sigmoid(raw_box);
    let centers = b.tape.scale_cols(unit_box, vec![cfg.n_cameras as f64, 1.0]);
    if !b.tape.value(class_logits).is_finite() || !b.tape.value(centers).is_finite() {
        return Err(Error::NonFiniteForward {
            layer: cfg.n_layers.saturating_sub(1),
        });
    }

    Ok(Graph {
        tape: b.tape,
        params: b.params,
        self_taps,
        cross_taps,
        class_logits,
        centers,
    })
}

impl Graph {
    pub fn detections(&self) -> Vec<Detection> {
        let logits = self.tape.value(self.class_logits);
        let centers = self.tape.value(self.centers);
        (0..logits.rows)
            .map(|q| Detection {
                query: q,
                class_probs: logits.row(q).iter().map(|&z| crate::autograd::sigmoid(z)).collect(),
                center: PanoPoint {
                    x: centers.get(q, 0),
                    y: centers.get(q, 1),
                },
            })
            .collect()
    }

    /// Gathers tap values (or gradients, via `value_of`) into record layout.
    pub fn gather<'a>(
        &'a self,
        cfg: &ModelConfig,
        value_of: impl Fn(NodeId) -> Option<&'a Matrix>,
    ) -> (Tensor, Tensor) {
        let (nc, nl, nh, nq, nt) = (
            cfg.n_cameras,
            cfg.n_layers,
            cfg.n_heads,
            cfg.n_queries,
            cfg.n_tokens(),
        );
        let mut cross = Tensor::zeros(&[nc, nl, nh, nq, nt]);
        let mut self_ = Tensor::zeros(&[nl, nh, nq, nq]);
        for l in 0..nl {
            for h in 0..nh {
                if let Some(m) = value_of(self.self_taps[l][h]) {
                    self_.slice_mut(&[l, h]).copy_from_slice(&m.data);
                }
                if let Some(m) = value_of(self.cross_taps[l][h]) {
                    for c in 0..nc {
                        for q in 0..nq {
                            cross
                                .slice_mut(&[c, l, h, q])
                                .copy_from_slice(&m.row(q)[c * nt..(c + 1) * nt]);
                        }
                    }
                }
            }
        }
        (cross, self_)
    }

    pub fn record(&self, cfg: &ModelConfig) -> AttentionRecord {
        let (cross, self_) = self.gather(cfg, |id| Some(self.tape.value(id)));
        AttentionRecord { cross, self_ }
    }
}

/// Runs the detector on one scene.
pub fn forward(weights: &Weights, scene: &Scene) -> Result<(Vec<Detection>, AttentionRecord)> {
    let graph = build_graph(weights, scene, &GraphOptions::default())?;
    Ok((graph.detections(), graph.record(weights.config())))
}
