//! Projected sign-gradient optimization of universal and per-frame
//! perturbations under an L-infinity budget.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::fsutil::{f32_le_bytes, read_f32_le, read_with_header, sha256_hex, write_atomic, write_with_header};
use crate::losses::{
    build_region_masks, feature_shift, memory_misalign, prototype, semantic_confusion, total_loss, LossConfig,
    LossTerms, Prototype,
};
use crate::prompts::{scan_targets, Prompt};
use crate::segmodel::ModelParams;
use crate::synthclip::VideoClip;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PertMode {
    Universal,
    Samplewise,
}

impl PertMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PertMode::Universal => "universal",
            PertMode::Samplewise => "samplewise",
        }
    }
}

/// An additive perturbation: one `3 x H x W` delta shared by every frame of
/// every clip, or one delta per frame of a single clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub mode: PertMode,
    pub epsilon: f64,
    pub deltas: Vec<Tensor>,
    pub seed: u64,
    pub config_hash: String,
}

impl Perturbation {
    pub fn zeros(mode: PertMode, epsilon: f64, frames: usize, height: usize, width: usize) -> Self {
        let n = match mode {
            PertMode::Universal => 1,
            PertMode::Samplewise => frames,
        };
        Self {
            mode,
            epsilon,
            deltas: vec![Tensor::zeros(&[3, height, width]); n],
            seed: 0,
            config_hash: String::new(),
        }
    }

    /// Largest absolute entry over all deltas.
    pub fn linf(&self) -> f64 {
        self.deltas.iter().map(|d| d.max_abs()).fold(0.0, f64::max)
    }

    /// Delta applied to frame `i`.
    pub fn delta_for(&self, i: usize) -> &Tensor {
        match self.mode {
            PertMode::Universal => &self.deltas[0],
            PertMode::Samplewise => &self.deltas[i],
        }
    }
}

/// Elementwise clamp to `[-epsilon, epsilon]`.
pub fn project_linf(delta: &Tensor, epsilon: f64) -> Tensor {
    delta.map(|v| v.clamp(-epsilon, epsilon))
}

/// Rounds to `f32` without leaving `[-epsilon, epsilon]`, so a checkpoint
/// round trip preserves the budget bit-exactly.
fn round_in_budget(v: f64, epsilon: f64) -> f64 {
    let f = v as f32;
    if (f as f64).abs() <= epsilon {
        f as f64
    } else {
        // One step toward zero.
        let bits = f.to_bits();
        f32::from_bits(bits - 1) as f64
    }
}

/// `clamp(x + delta, 0, 1)` per frame; masks are copied.
pub fn apply(clip: &VideoClip, pert: &Perturbation) -> Result<VideoClip> {
    if pert.mode == PertMode::Samplewise && pert.deltas.len() != clip.len() {
        return Err(Error::Shape(format!(
            "sample-wise perturbation has {} frames, clip has {}",
            pert.deltas.len(),
            clip.len()
        )));
    }
    let mut frames = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        let d = pert.delta_for(i);
        if d.shape() != f.shape() {
            return Err(Error::Shape(format!(
                "perturbation shape {:?} vs frame shape {:?}",
                d.shape(),
                f.shape()
            )));
        }
        frames.push(f.zip_map(d, |x, d| (x + d).clamp(0.0, 1.0)));
    }
    Ok(VideoClip {
        spec: clip.spec.clone(),
        frames,
        masks: clip.masks.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `delta -= alpha * sign(grad)`.
    Sign,
    /// `delta -= alpha * grad / max|grad|`.
    Gradient,
}

/// How the frame-0 prompt is drawn from the scan grid each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// One region chosen uniformly at random.
    Sample,
    /// Regions visited in order, one per step.
    Sweep,
}

/// Source of the foreground mask driving semantic confusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    GroundTruth,
    /// Thresholded benign prediction under the same prompt.
    BenignPrediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub step_rule: StepRule,
    pub loss: LossConfig,
    pub scan_m: usize,
    pub scan_mode: ScanMode,
    pub region_source: RegionSource,
    pub seed: u64,
    pub frames_per_clip: usize,
    /// Optimize on frame 0 of each clip only.
    pub first_frame_only: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::universal()
    }
}

impl AttackConfig {
    pub fn universal() -> Self {
        Self {
            epsilon: 10.0 / 255.0,
            epochs: 10,
            step_size: 2.0 / 255.0,
            step_rule: StepRule::Sign,
            loss: LossConfig::default(),
            scan_m: 256,
            scan_mode: ScanMode::Sample,
            region_source: RegionSource::GroundTruth,
            seed: 30,
            frames_per_clip: 15,
            first_frame_only: false,
        }
    }

    pub fn samplewise() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            ..Self::universal()
        }
    }

    /// A zero budget is accepted and leaves delta at zero; otherwise the
    /// step must not exceed the budget.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.step_size > 0.0) || (self.epsilon > 0.0 && self.step_size > self.epsilon) {
            return Err(Error::Config(format!(
                "step size {} must lie in (0, epsilon = {}]",
                self.step_size, self.epsilon
            )));
        }
        if self.epochs < 1 || self.frames_per_clip < 1 {
            return Err(Error::Config("epochs and frames_per_clip must be at least 1".into()));
        }
        self.loss.validate()
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// One optimizer step's loss values, taken before the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub clip_id: usize,
    #[serde(rename = "J_sa")]
    pub j_sa: f64,
    #[serde(rename = "J_fa")]
    pub j_fa: f64,
    /// Empty for single-frame units.
    #[serde(rename = "J_ma")]
    pub j_ma: Option<f64>,
    #[serde(rename = "J_total")]
    pub j_total: f64,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub perturbation: Perturbation,
    pub trace: Vec<TraceRow>,
}

impl AttackOutcome {
    /// Mean `J_total` per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.trace.iter().filter(|r| r.epoch == e).map(|r| r.j_total).collect();
                rows.iter().sum::<f64>() / rows.len() as f64
            })
            .collect()
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Benign per-frame prototypes and cross-clip negatives of one unit.
struct UnitRefs {
    protos: Vec<Prototype>,
    negatives: Vec<Tensor>,
}

fn unit_refs(
    params: &ModelParams,
    unit: &VideoClip,
    unit_id: usize,
    pool: &[(usize, &VideoClip)],
    cfg: &AttackConfig,
) -> Result<UnitRefs> {
    let mut protos = Vec::with_capacity(unit.len());
    for (i, f) in unit.frames.iter().enumerate() {
        let seed = cfg.seed ^ ((unit_id as u64) << 32) ^ i as u64;
        protos.push(prototype(f, cfg.loss.rho, seed, params, (unit_id, i))?);
    }
    let others: Vec<(usize, usize)> = pool
        .iter()
        .filter(|(id, _)| *id != unit_id)
        .flat_map(|(id, c)| (0..c.len()).map(move |j| (*id, j)))
        .collect();
    let mut negatives = Vec::new();
    if cfg.loss.fa_form == crate::losses::FaForm::Contrastive {
        if others.is_empty() && cfg.loss.w_fa != 0.0 {
            return Err(Error::Config(
                "contrastive feature shift needs frames from other clips as negatives".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7_919 * (unit_id as u64 + 1)));
        let n = if others.is_empty() { 0 } else { cfg.loss.negatives };
        for _ in 0..n {
            let (id, j) = others[rng.gen_range(0..others.len())];
            let clip = pool.iter().find(|(cid, _)| *cid == id).unwrap().1;
            let f = params.encode_features(&clip.frames[j])?;
            let n = f.len();
            negatives.push(f.reshaped(&[n])?);
        }
    }
    Ok(UnitRefs { protos, negatives })
}

/// Loss terms and per-frame gradients of `J_total` with respect to the
/// adversarial frames, masked to where the valid-range clamp is inactive.
struct StepEval {
    row: TraceRow,
    grads: Vec<Tensor>,
}

fn evaluate_step(
    params: &ModelParams,
    unit: &VideoClip,
    refs: &UnitRefs,
    deltas: &[&Tensor],
    prompt: Prompt,
    cfg: &AttackConfig,
) -> Result<StepEval> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let mut frames = Vec::with_capacity(unit.len());
    let mut inside = Vec::with_capacity(unit.len());
    for (x, d) in unit.frames.iter().zip(deltas) {
        let raw = x.zip_map(d, |a, b| a + b);
        inside.push(raw.map(|v| if (0.0..=1.0).contains(&v) { 1.0 } else { 0.0 }));
        frames.push(g.input(raw.map(|v| v.clamp(0.0, 1.0))));
    }
    let trace = bound.segment_video_graph(&mut g, &frames, &[prompt])?;

    let masks = match cfg.region_source {
        RegionSource::GroundTruth => unit.masks.clone(),
        RegionSource::BenignPrediction => params
            .segment_video(&unit.frames, &[prompt])?
            .iter()
            .map(|l| l.foreground())
            .collect(),
    };
    let mut sa = Vec::with_capacity(unit.len());
    let mut fa = Vec::with_capacity(unit.len());
    for i in 0..unit.len() {
        let rm = build_region_masks(&masks[i], cfg.loss.threshold_value);
        sa.push(semantic_confusion(&mut g, trace.logits[i], &rm, cfg.loss.sa_form)?.0);
        if refs.negatives.is_empty() && cfg.loss.fa_form == crate::losses::FaForm::Contrastive {
            // Ablated and uncomputable: reported as 0.
            fa.push(g.constant(Tensor::scalar(0.0)));
            continue;
        }
        fa.push(feature_shift(
            &mut g,
            trace.features[i],
            &refs.protos[i],
            &refs.negatives,
            cfg.loss.tau,
            cfg.loss.fa_form,
        )?);
    }
    let mean = |g: &mut Graph, v: &[Var]| {
        let s = g.stack(v);
        g.mean(s)
    };
    let j_sa = mean(&mut g, &sa);
    let j_fa = mean(&mut g, &fa);
    let j_ma = if unit.len() >= 2 {
        Some(memory_misalign(&mut g, &trace.features)?)
    } else {
        None
    };
    let terms = LossTerms {
        sa: j_sa,
        fa: j_fa,
        ma: j_ma,
    };
    let total = total_loss(&mut g, &terms, &cfg.loss);
    let row = TraceRow {
        epoch: 0,
        clip_id: 0,
        j_sa: g.value(j_sa).item(),
        j_fa: g.value(j_fa).item(),
        j_ma: j_ma.map(|v| g.value(v).item()),
        j_total: g.value(total).item(),
    };
    for (name, v) in [("J_sa", row.j_sa), ("J_fa", row.j_fa), ("J_ma", row.j_ma.unwrap_or(0.0))] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} evaluated to {v}")));
        }
    }
    let mut gr = g.backward(total);
    let mut grads = Vec::with_capacity(frames.len());
    for (f, m) in frames.iter().zip(&inside) {
        let gf = gr.take(*f).unwrap_or_else(|| Tensor::zeros(m.shape()));
        grads.push(gf.zip_map(m, |a, b| a * b));
    }
    if grads.iter().any(|t| !t.all_finite()) {
        // Re-run each term alone to name the culprit.
        let named = [("J_sa", Some(j_sa)), ("J_fa", Some(j_fa)), ("J_ma", j_ma)];
        for (name, v) in named {
            let Some(v) = v else { continue };
            let mut gt = g.backward(v);
            if frames.iter().any(|f| gt.take(*f).is_some_and(|t| !t.all_finite())) {
                return Err(Error::Numeric(format!("non-finite gradient from {name}")));
            }
        }
        return Err(Error::Numeric("non-finite gradient in J_total".into()));
    }
    Ok(StepEval { row, grads })
}

fn step_delta(delta: &mut Tensor, grad: &Tensor, cfg: &AttackConfig) {
    let alpha = cfg.step_size;
    let scale = match cfg.step_rule {
        StepRule::Sign => 0.0,
        StepRule::Gradient => grad.max_abs(),
    };
    for (d, &gv) in delta.data_mut().iter_mut().zip(grad.data()) {
        let step = match cfg.step_rule {
            StepRule::Sign => gv.signum() * (gv != 0.0) as i32 as f64,
            StepRule::Gradient if scale > 0.0 => gv / scale,
            StepRule::Gradient => 0.0,
        };
        let v = (*d - alpha * step).clamp(-cfg.epsilon, cfg.epsilon);
        *d = round_in_budget(v, cfg.epsilon);
    }
}

/// Frame-0 prompt for one optimizer step.
fn scan_prompt(unit: &VideoClip, cfg: &AttackConfig, step: usize, rng: &mut ChaCha8Rng) -> Result<Prompt> {
    let grid = scan_targets(unit.height(), unit.width(), cfg.scan_m, rng.gen())?;
    let idx = match cfg.scan_mode {
        ScanMode::Sample => rng.gen_range(0..grid.m()),
        ScanMode::Sweep => step % grid.m(),
    };
    Ok(grid.prompts[idx])
}

fn prepare_units(clips: &[VideoClip], cfg: &AttackConfig) -> Result<Vec<VideoClip>> {
    if clips.is_empty() {
        return Err(Error::Config("attack needs at least one clip".into()));
    }
    let n = if cfg.first_frame_only { 1 } else { cfg.frames_per_clip };
    let units: Vec<VideoClip> = clips.iter().map(|c| c.truncated(n)).collect();
    let shape = (units[0].height(), units[0].width());
    if units.iter().any(|u| (u.height(), u.width()) != shape) {
        return Err(Error::Shape("all clips must share one frame size".into()));
    }
    Ok(units)
}

/// Universal perturbation over `clips` (the attack's training units).
pub fn optimize_uap(params: &ModelParams, clips: &[VideoClip], cfg: &AttackConfig) -> Result<AttackOutcome> {
    optimize_uap_with(params, clips, cfg, |_| {})
}

pub fn optimize_uap_with(
    params: &ModelParams,
    clips: &[VideoClip],
    cfg: &AttackConfig,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let units = prepare_units(clips, cfg)?;
    let pool: Vec<(usize, &VideoClip)> = clips.iter().enumerate().collect();
    let refs = units
        .iter()
        .enumerate()
        .map(|(i, u)| unit_refs(params, u, i, &pool, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut delta = Tensor::zeros(&[3, units[0].height(), units[0].width()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &ci in &order {
            let unit = &units[ci];
            let prompt = scan_prompt(unit, cfg, step, &mut rng)?;
            let deltas = vec![&delta; unit.len()];
            let ev = evaluate_step(params, unit, &refs[ci], &deltas, prompt, cfg)?;
            let mut sum = Tensor::zeros(delta.shape());
            for gr in &ev.grads {
                sum.add_assign(gr);
            }
            step_delta(&mut delta, &sum, cfg);
            let row = TraceRow {
                epoch,
                clip_id: ci,
                ..ev.row
            };
            on_step(&row);
            trace.push(row);
            step += 1;
        }
    }
    Ok(AttackOutcome {
        perturbation: Perturbation {
            mode: PertMode::Universal,
            epsilon: cfg.epsilon,
            deltas: vec![delta],
            seed: cfg.seed,
            config_hash: cfg.hash(),
        },
        trace,
    })
}

/// One delta per frame of `clip`, optimized jointly for `epochs` steps.
/// `negative_pool` supplies the other clips whose frames serve as
/// contrastive negatives.
pub fn optimize_samplewise(
    params: &ModelParams,
    clip: &VideoClip,
    negative_pool: &[VideoClip],
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let unit = prepare_units(std::slice::from_ref(clip), cfg)?.remove(0);
    // The attacked clip takes id 0; pool clips follow.
    let mut pool: Vec<(usize, &VideoClip)> = vec![(0, &unit)];
    pool.extend(negative_pool.iter().enumerate().map(|(i, c)| (i + 1, c)));
    let refs = unit_refs(params, &unit, 0, &pool, cfg)?;
    let mut deltas = vec![Tensor::zeros(&[3, unit.height(), unit.width()]); unit.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let prompt = scan_prompt(&unit, cfg, epoch, &mut rng)?;
        let refs_d: Vec<&Tensor> = deltas.iter().collect();
        let ev = evaluate_step(params, &unit, &refs, &refs_d, prompt, cfg)?;
        for (d, gr) in deltas.iter_mut().zip(&ev.grads) {
            step_delta(d, gr, cfg);
        }
        trace.push(TraceRow {
            epoch,
            clip_id: 0,
            ..ev.row
        });
    }
    Ok(AttackOutcome {
        perturbation: Perturbation {
            mode: PertMode::Samplewise,
            epsilon: cfg.epsilon,
            deltas,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        },
        trace,
    })
}

/// Universal delta optimized on frame 0 of each clip only; at evaluation
/// it is broadcast to every frame like any universal perturbation.
pub fn first_frame_probe(params: &ModelParams, clips: &[VideoClip], cfg: &AttackConfig) -> Result<AttackOutcome> {
    let cfg = AttackConfig {
        first_frame_only: true,
        ..cfg.clone()
    };
    optimize_uap(params, clips, &cfg)
}

const PERT_KIND: &str = "perturbation checkpoint";

/// Writes one or more perturbations sharing mode, budget and frame size:
/// a JSON header (mode, epsilon, shape, seed, config hash, frames per entry)
/// followed by the `f32` deltas in order, each rounded toward zero where
/// needed to stay within epsilon.
pub fn save_perturbations(path: &Path, perts: &[Perturbation]) -> Result<()> {
    let first = perts
        .first()
        .ok_or_else(|| Error::Config("no perturbation to save".into()))?;
    if perts
        .iter()
        .any(|p| p.mode != first.mode || p.epsilon != first.epsilon || p.deltas[0].shape() != first.deltas[0].shape())
    {
        return Err(Error::Config("perturbations in one file must share mode, epsilon and shape".into()));
    }
    let header = json!({
        "format": "uapsam-perturbation",
        "version": 1,
        "mode": first.mode,
        "epsilon": first.epsilon,
        "shape": first.deltas[0].shape(),
        "seed": first.seed,
        "config_hash": first.config_hash,
        "entries": perts.iter().map(|p| p.deltas.len()).collect::<Vec<_>>(),
    });
    let eps = first.epsilon;
    let payload = f32_le_bytes(
        perts
            .iter()
            .flat_map(|p| p.deltas.iter().flat_map(|d| d.data().iter().map(move |&v| round_in_budget(v, eps)))),
    );
    write_with_header(path, &header, &payload)
}

pub fn load_perturbations(path: &Path) -> Result<Vec<Perturbation>> {
    let (h, payload) = read_with_header(path, PERT_KIND)?;
    if h.get("format").and_then(|v| v.as_str()) != Some("uapsam-perturbation") {
        return Err(Error::format(PERT_KIND, "format", "not a uapsam-perturbation file"));
    }
    let get = |k: &str| h.get(k).cloned().ok_or_else(|| Error::format(PERT_KIND, k, "missing"));
    let mode: PertMode =
        serde_json::from_value(get("mode")?).map_err(|e| Error::format(PERT_KIND, "mode", e.to_string()))?;
    let epsilon = get("epsilon")?
        .as_f64()
        .filter(|e| (0.0..=1.0).contains(e))
        .ok_or_else(|| Error::format(PERT_KIND, "epsilon", "expected a number in [0, 1]"))?;
    let shape: Vec<usize> =
        serde_json::from_value(get("shape")?).map_err(|e| Error::format(PERT_KIND, "shape", e.to_string()))?;
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::format(PERT_KIND, "shape", format!("expected [3, H, W], got {shape:?}")));
    }
    let seed = get("seed")?
        .as_u64()
        .ok_or_else(|| Error::format(PERT_KIND, "seed", "expected an integer"))?;
    let config_hash = get("config_hash")?
        .as_str()
        .ok_or_else(|| Error::format(PERT_KIND, "config_hash", "expected a string"))?
        .to_string();
    let entries: Vec<usize> =
        serde_json::from_value(get("entries")?).map_err(|e| Error::format(PERT_KIND, "entries", e.to_string()))?;
    if mode == PertMode::Universal && entries.iter().any(|&n| n != 1) {
        return Err(Error::format(PERT_KIND, "entries", "universal entries hold exactly one delta"));
    }
    let per: usize = shape.iter().product();
    let total: usize = entries.iter().sum::<usize>() * per;
    if payload.len() != total * 4 {
        return Err(Error::format(
            PERT_KIND,
            "payload",
            format!("expected {} bytes, found {}", total * 4, payload.len()),
        ));
    }
    let values = read_f32_le(&payload);
    if let Some(v) = values.iter().find(|v| v.abs() > epsilon || !v.is_finite()) {
        return Err(Error::format(PERT_KIND, "payload", format!("value {v} exceeds epsilon {epsilon}")));
    }
    let mut chunks = values.chunks(per);
    let mut out = Vec::with_capacity(entries.len());
    for n in entries {
        let deltas = (0..n)
            .map(|_| Tensor::new(shape.clone(), chunks.next().unwrap().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        out.push(Perturbation {
            mode,
            epsilon,
            deltas,
            seed,
            config_hash: config_hash.clone(),
        });
    }
    Ok(out)
}
