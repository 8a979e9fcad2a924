//! Prompt-conditioned video segmenter with a FIFO memory bank.
//!
//! Per frame: the image encoder (three 3x3 conv blocks, strides 2, 2, 1)
//! maps `3 x H x W` to a `d x H/4 x W/4` feature map; one single-head
//! cross-attention layer lets the frame's feature tokens attend over the
//! memory entries, the first-frame prompt vectors and a learned sink token
//! (the frame's own tokens are included among the keys);
//! two stride-2 transposed convolutions and a 3x3 head decode `H x W`
//! logits. The fused (post-attention) tokens are pushed into the memory.
//!
//! Everything is built on an [`autograd::Graph`](crate::autograd::Graph), so
//! any scalar of the logits or features is differentiable with respect to
//! the frames (and to the weights when bound with `trainable = true`).

mod memory;
mod params;
pub mod train;

pub use memory::{MemoryBank, MemoryEntry};
pub use params::{ModelConfig, ModelParams, ParamArray};

use std::collections::HashMap;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::prompts::{Prompt, PromptKind};
use crate::tensor::Tensor;

/// `H x W` logits; foreground where the logit exceeds zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LogitMask {
    pub fn foreground(&self) -> Mask {
        Mask::from_vec(self.height, self.width, self.data.iter().map(|&v| v > 0.0).collect())
            .expect("logit mask shape")
    }
}

/// Prompt vectors (`n x d`) and their projected keys/values.
#[derive(Clone, Debug)]
pub struct PromptEmbedding {
    pub vectors: Var,
    pub kinds: Vec<PromptKind>,
    keys: Var,
    values: Var,
}

impl PromptEmbedding {
    pub fn len(&self) -> usize {
        self.kinds
            .iter()
            .map(|k| match k {
                PromptKind::Point => 1,
                PromptKind::Box => 2,
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Model weights registered in a graph.
pub struct BoundModel<'p> {
    pub params: &'p ModelParams,
    vars: HashMap<String, Var>,
    pos: Var,
    sink_k: Var,
    sink_v: Var,
}

/// Per-frame graph handles produced by [`segment_video_graph`].
pub struct VideoTrace {
    /// Raw encoder feature maps `F_i`.
    pub features: Vec<Var>,
    /// Post-attention feature maps.
    pub fused: Vec<Var>,
    /// `H x W` logits.
    pub logits: Vec<Var>,
    /// Attention matrices (`tokens x keys`).
    pub attention: Vec<Var>,
}

/// Sinusoidal encoding of a normalized coordinate pair.
fn positional_encoding(u: f64, v: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * freqs);
    for f in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << f) as f64;
        out.push((w * u).sin());
        out.push((w * u).cos());
        out.push((w * v).sin());
        out.push((w * v).cos());
    }
    out
}

impl ModelParams {
    /// Registers the weights in `g`; `trainable` makes them differentiable.
    pub fn bind<'p>(&'p self, g: &mut Graph, trainable: bool) -> BoundModel<'p> {
        let mut vars = HashMap::new();
        for a in &self.arrays {
            let v = if trainable {
                g.input(a.tensor.clone())
            } else {
                g.constant(a.tensor.clone())
            };
            vars.insert(a.name.clone(), v);
        }
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_hw();
        let mut table = Vec::with_capacity(fh * fw * cfg.pe_dim());
        for y in 0..fh {
            for x in 0..fw {
                table.extend(positional_encoding(
                    (x as f64 + 0.5) / fw as f64,
                    (y as f64 + 0.5) / fh as f64,
                    cfg.pe_freqs,
                ));
            }
        }
        let table = g.constant(Tensor::new(vec![fh * fw, cfg.pe_dim()], table).unwrap());
        let pos = g.matmul(table, vars["pe.w"]);
        let sink_k = g.matmul(vars["attn.sink"], vars["attn.k"]);
        let sink_v = g.matmul(vars["attn.sink"], vars["attn.v"]);
        BoundModel {
            params: self,
            vars,
            pos,
            sink_k,
            sink_v,
        }
    }
}

impl BoundModel<'_> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    /// Trainable handles in checkpoint order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.params.arrays.iter().map(|a| self.vars[&a.name]).collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// `F = E_img(x)` for a `3 x H x W` frame.
    pub fn encode_image(&self, g: &mut Graph, frame: Var) -> Result<Var> {
        let cfg = self.config();
        let want = [3, cfg.height, cfg.width];
        if g.value(frame).shape() != want {
            return Err(Error::Shape(format!(
                "frame shape {:?}, model expects {:?}",
                g.value(frame).shape(),
                want
            )));
        }
        let x = g.add_scalar(frame, -0.5);
        let x = g.conv2d(x, self.var("enc1.w"), self.var("enc1.b"), 2, 1);
        let x = g.silu(x);
        let x = g.conv2d(x, self.var("enc2.w"), self.var("enc2.b"), 2, 1);
        let x = g.silu(x);
        Ok(g.conv2d(x, self.var("enc3.w"), self.var("enc3.b"), 1, 1))
    }

    /// `Q = E_prompt(p)`: one vector per point, two per box (its corners).
    pub fn encode_prompt(&self, g: &mut Graph, prompts: &[Prompt]) -> Result<PromptEmbedding> {
        let cfg = self.config();
        if prompts.is_empty() {
            return Err(Error::Config("at least one prompt is required".into()));
        }
        let mut point_rows = Vec::new();
        let mut box_rows = Vec::new();
        for p in prompts {
            p.validate(cfg.height, cfg.width)?;
            let norm = |x: f64, y: f64| {
                positional_encoding(
                    (x + 0.5) / cfg.width as f64,
                    (y + 0.5) / cfg.height as f64,
                    cfg.pe_freqs,
                )
            };
            match *p {
                Prompt::Point { x, y } => point_rows.push(norm(x, y)),
                Prompt::Box { x1, y1, x2, y2 } => {
                    box_rows.push(norm(x1, y1));
                    box_rows.push(norm(x2, y2));
                }
            }
        }
        let mut parts = Vec::new();
        for (rows, label) in [(point_rows, "prompt.point"), (box_rows, "prompt.box")] {
            if rows.is_empty() {
                continue;
            }
            let n = rows.len();
            let t = g.constant(Tensor::new(vec![n, cfg.pe_dim()], rows.concat())?);
            let e = g.matmul(t, self.var("pe.w"));
            parts.push(g.add_rows(e, self.var(label)));
        }
        let vectors = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)
        };
        let keys = g.matmul(vectors, self.var("attn.k"));
        let values = g.matmul(vectors, self.var("attn.v"));
        Ok(PromptEmbedding {
            vectors,
            kinds: prompts.iter().map(|p| p.kind()).collect(),
            keys,
            values,
        })
    }

    /// Attention of the frame tokens over themselves, the memory entries,
    /// the prompt vectors and the sink.
    /// Returns the fused feature map, its token form and the attention
    /// weights.
    pub fn memory_attend(&self, g: &mut Graph, feature: Var, bank: &MemoryBank) -> (Var, Var, Var) {
        let cfg = self.config();
        let (fh, fw) = cfg.feature_hw();
        let d = cfg.dim;
        let flat = g.reshape(feature, &[d, fh * fw]);
        let tokens = g.transpose(flat);
        let tq = g.add(tokens, self.pos);
        let q = g.matmul(tq, self.var("attn.q"));
        let own_k = g.matmul(tq, self.var("attn.k"));
        let own_v = g.matmul(tq, self.var("attn.v"));
        let mut keys = vec![own_k];
        let mut values = vec![own_v];
        keys.extend(bank.entries().map(|e| e.keys));
        values.extend(bank.entries().map(|e| e.values));
        keys.push(bank.prompt().keys);
        values.push(bank.prompt().values);
        keys.push(self.sink_k);
        values.push(self.sink_v);
        let k = g.concat_rows(&keys);
        let v = g.concat_rows(&values);
        let logits = g.matmul_t(q, k, false, true);
        let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
        let attn = g.softmax_rows(logits);
        let mixed = g.matmul(attn, v);
        let projected = g.matmul(mixed, self.var("attn.o"));
        let fused_tokens = g.add(tokens, projected);
        let t = g.transpose(fused_tokens);
        let fused = g.reshape(t, &[d, fh, fw]);
        (fused, fused_tokens, attn)
    }

    /// Memory entry (with cached keys/values) for fused tokens.
    pub fn memory_entry(&self, g: &mut Graph, fused_tokens: Var) -> MemoryEntry {
        let p = g.add(fused_tokens, self.pos);
        let keys = g.matmul(p, self.var("attn.k"));
        let values = g.matmul(p, self.var("attn.v"));
        MemoryEntry {
            tokens: fused_tokens,
            keys,
            values,
        }
    }

    /// `H x W` logits from a fused feature map.
    pub fn decode_mask(&self, g: &mut Graph, fused: Var) -> Var {
        let cfg = self.config();
        let x = g.conv_transpose2d(fused, self.var("dec1.w"), self.var("dec1.b"));
        let x = g.silu(x);
        let x = g.conv_transpose2d(x, self.var("dec2.w"), self.var("dec2.b"));
        let x = g.silu(x);
        let x = g.conv2d(x, self.var("head.w"), self.var("head.b"), 1, 1);
        g.reshape(x, &[cfg.height, cfg.width])
    }

    pub fn new_bank(&self, prompt: PromptEmbedding) -> MemoryBank {
        MemoryBank::new(self.config().memory_k, prompt)
    }

    /// `Y = f(X, P)` with the prompt given on frame 0 only.
    pub fn segment_video_graph(&self, g: &mut Graph, frames: &[Var], prompts: &[Prompt]) -> Result<VideoTrace> {
        if frames.is_empty() {
            return Err(Error::Config("cannot segment an empty clip".into()));
        }
        let q = self.encode_prompt(g, prompts)?;
        let mut bank = self.new_bank(q);
        let mut trace = VideoTrace {
            features: Vec::with_capacity(frames.len()),
            fused: Vec::with_capacity(frames.len()),
            logits: Vec::with_capacity(frames.len()),
            attention: Vec::with_capacity(frames.len()),
        };
        for (i, &frame) in frames.iter().enumerate() {
            let f = self.encode_image(g, frame)?;
            let (fused, tokens, attn) = self.memory_attend(g, f, &bank);
            let logits = self.decode_mask(g, fused);
            if i + 1 < frames.len() {
                let entry = self.memory_entry(g, tokens);
                bank.push(entry);
            }
            trace.features.push(f);
            trace.fused.push(fused);
            trace.logits.push(logits);
            trace.attention.push(attn);
        }
        Ok(trace)
    }
}

impl ModelParams {
    /// Inference over a whole clip.
    pub fn segment_video(&self, frames: &[Tensor], prompts: &[Prompt]) -> Result<Vec<LogitMask>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
        let trace = bound.segment_video_graph(&mut g, &vars, prompts)?;
        Ok(trace
            .logits
            .iter()
            .map(|&l| LogitMask {
                height: self.config.height,
                width: self.config.width,
                data: g.value(l).data().to_vec(),
            })
            .collect())
    }

    /// Raw encoder features of one frame.
    pub fn encode_features(&self, frame: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_encoder(&mut g);
        let x = g.constant(frame.clone());
        let f = bound.encode_image(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Binding that skips the attention-side precomputation; only
    /// [`BoundModel::encode_image`] may be used on it.
    fn bind_encoder<'p>(&'p self, g: &mut Graph) -> BoundModel<'p> {
        let mut vars = HashMap::new();
        for a in self.arrays.iter().filter(|a| a.name.starts_with("enc")) {
            vars.insert(a.name.clone(), g.constant(a.tensor.clone()));
        }
        let dummy = g.constant(Tensor::zeros(&[1]));
        BoundModel {
            params: self,
            vars,
            pos: dummy,
            sink_k: dummy,
            sink_v: dummy,
        }
    }
}
