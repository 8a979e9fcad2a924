//! Supervised training of the segmenter on synthetic clips.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::prompts::{sample_eval_prompts, Prompt, PromptKind};
use crate::synthclip::VideoClip;
use crate::tensor::Tensor;

use super::{ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub seed: u64,
    pub max_epochs: usize,
    /// Optimizer steps per epoch; one random subsequence per step.
    pub steps_per_epoch: usize,
    /// Frames per training subsequence.
    pub subseq_len: usize,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Training stops once held-out mIoU reaches this value.
    pub target_miou: f64,
    /// Minimum best held-out mIoU; below it training is reported as stalled.
    pub gate_miou: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            seed: 7,
            max_epochs: 40,
            steps_per_epoch: 400,
            subseq_len: 3,
            lr: 3e-3,
            clip_norm: 1.0,
            target_miou: 0.70,
            gate_miou: 0.70,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_miou: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays.iter().map(|a| vec![0.0; a.tensor.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (a, g)) in params.arrays.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in a.tensor.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mixed prompt curriculum: single points, a few points, or a jittered box,
/// all derived from the first frame's ground truth.
fn training_prompts(clip: &VideoClip, rng: &mut ChaCha8Rng) -> Result<Vec<Prompt>> {
    let seed = rng.gen();
    let r: f64 = rng.gen();
    if r < 0.45 {
        sample_eval_prompts(&clip.masks[0], PromptKind::Point, 1, seed)
    } else if r < 0.6 {
        let n = rng.gen_range(2..=5).min(clip.masks[0].count());
        sample_eval_prompts(&clip.masks[0], PromptKind::Point, n, seed)
    } else {
        sample_eval_prompts(&clip.masks[0], PromptKind::Box, 1, seed)
    }
}

/// Mean per-pixel binary cross-entropy over all frames of the trace.
fn bce_loss(g: &mut Graph, logits: &[Var], clip: &VideoClip) -> Result<Var> {
    let mut terms = Vec::with_capacity(logits.len());
    for (&z, m) in logits.iter().zip(&clip.masks) {
        let y = g.constant(Tensor::new(vec![m.height(), m.width()], m.to_f64())?);
        let sp = g.softplus(z);
        let yz = g.mul(y, z);
        let l = g.sub(sp, yz);
        terms.push(g.mean(l));
    }
    let s = g.stack(&terms);
    Ok(g.mean(s))
}

/// Held-out mIoU with one ground-truth point prompt per clip.
pub fn point_miou(params: &ModelParams, clips: &[VideoClip], seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (i, clip) in clips.iter().enumerate() {
        let prompts = sample_eval_prompts(&clip.masks[0], PromptKind::Point, 1, seed + i as u64)?;
        let out = params.segment_video(&clip.frames, &prompts)?;
        let mut s = 0.0;
        for (lm, gt) in out.iter().zip(&clip.masks) {
            s += lm.foreground().iou(gt)?;
        }
        total += s / clip.len() as f64;
    }
    Ok(total / clips.len() as f64)
}

/// Trains from a seeded initialization until the held-out point-prompt mIoU
/// reaches `target_miou` or `max_epochs` pass. Returns the best-scoring
/// weights, rounded to `f32`, unless their mIoU is below `gate_miou`.
pub fn train_model(
    config: ModelConfig,
    train: &[VideoClip],
    val: &[VideoClip],
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation clips".into()));
    }
    if hyper.subseq_len == 0 || hyper.max_epochs == 0 || hyper.steps_per_epoch == 0 {
        return Err(Error::Config("subseq_len, max_epochs and steps_per_epoch must be positive".into()));
    }
    let mut params = ModelParams::init(config, hyper.seed)?;
    let mut opt = Adam::new(&params, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    for epoch in 0..hyper.max_epochs {
        let mut loss_sum = 0.0;
        for step in 0..hyper.steps_per_epoch {
            if step % order.len() == 0 {
                order.shuffle(&mut rng);
            }
            let clip = &train[order[step % order.len()]];
            let len = hyper.subseq_len.min(clip.len());
            let start = rng.gen_range(0..=clip.len() - len);
            let sub = VideoClip {
                spec: clip.spec.clone(),
                frames: clip.frames[start..start + len].to_vec(),
                masks: clip.masks[start..start + len].to_vec(),
            };
            if sub.masks[0].count() == 0 {
                continue;
            }
            let prompts = training_prompts(&sub, &mut rng)?;
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let frames: Vec<Var> = sub.frames.iter().map(|f| g.constant(f.clone())).collect();
            let trace = bound.segment_video_graph(&mut g, &frames, &prompts)?;
            let loss = bce_loss(&mut g, &trace.logits, &sub)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("training loss became {lv} at epoch {epoch}")));
            }
            loss_sum += lv;
            let mut grads = g.backward(loss);
            let mut gs: Vec<Tensor> = bound
                .param_vars()
                .into_iter()
                .zip(&params.arrays)
                .map(|(v, a)| grads.take(v).unwrap_or_else(|| Tensor::zeros(a.tensor.shape())))
                .collect();
            let norm = gs.iter().map(|t| t.dot(t)).sum::<f64>().sqrt();
            if norm > hyper.clip_norm {
                let c = hyper.clip_norm / norm;
                for t in &mut gs {
                    t.data_mut().iter_mut().for_each(|v| *v *= c);
                }
            }
            opt.step(&mut params, &gs);
        }
        let mut rounded = params.clone();
        rounded.round_to_f32();
        let val_miou = point_miou(&rounded, val, hyper.seed + 1_000_000)?;
        let rec = EpochRecord {
            epoch,
            mean_loss: loss_sum / hyper.steps_per_epoch as f64,
            val_miou,
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(b, _)| val_miou > *b) {
            best = Some((val_miou, rounded));
        }
        if val_miou >= hyper.target_miou {
            break;
        }
    }
    let (best_miou, params) = best.expect("at least one epoch");
    if best_miou < hyper.gate_miou {
        return Err(Error::TrainingStalled {
            target: hyper.gate_miou,
            epochs: hyper.max_epochs,
            best: best_miou,
        });
    }
    Ok(TrainReport { params, history })
}
