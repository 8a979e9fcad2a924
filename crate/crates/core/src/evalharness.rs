//! IoU metrics, benign vs adversarial evaluation, cross-prompt and
//! multi-point protocols, avalanche curves, and seed-stability runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{apply, optimize_uap, AttackConfig, PertMode, Perturbation};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::mask::Mask;
use crate::prompts::{eval_prompt_seed, sample_eval_prompts, PromptKind};
use crate::segmodel::ModelParams;
use crate::synthclip::{Task, VideoClip};
use crate::tensor::Tensor;

/// `|a & b| / |a | b|`; 1 when both are empty.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.iou(gt)
}

pub fn miou(pairs: &[(Mask, Mask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("mIoU of an empty list".into()));
    }
    let mut s = 0.0;
    for (p, g) in pairs {
        s += iou(p, g)?;
    }
    Ok(s / pairs.len() as f64)
}

/// Arithmetic mean and sample (n - 1) standard deviation; std is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Benign,
    Adversarial,
    NoiseBaseline,
}

/// One evaluation pass over the test units.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset_id: String,
    pub model_id: String,
    pub task: Task,
    pub prompt_mode: PromptKind,
    /// Points per prompt (1 for boxes).
    pub points: usize,
    pub prompt_id: usize,
    pub prompt_seed: u64,
    pub condition: Condition,
    pub miou: f64,
    /// Per-unit IoU, each the mean over that unit's frames.
    pub clip_ious: Vec<f64>,
    /// Pruning ratio or corruption severity for defense sweeps.
    pub defense_level: Option<f64>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    dataset_id: &'a str,
    model_id: &'a str,
    task: Task,
    prompt_mode: PromptKind,
    points: usize,
    prompt_id: usize,
    prompt_seed: u64,
    condition: Condition,
    miou: String,
    clip_ious: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    defense_level: Option<String>,
}

/// Labels shared by every row of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalContext<'a> {
    pub params: &'a ModelParams,
    pub units: &'a [VideoClip],
    pub dataset_id: String,
    pub model_id: String,
    pub task: Task,
    /// Seed of the attack run; evaluation prompts derive from it.
    pub optimization_seed: u64,
}

/// What to evaluate besides the benign clips.
#[derive(Clone, Copy, Debug)]
pub enum Attack<'a> {
    None,
    /// A universal delta or one sample-wise delta per unit.
    Learned(&'a [Perturbation]),
    Noise(&'a Perturbation),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<Summary>,
    pub avalanche: Vec<AvalanchePoint>,
    pub config_hash: String,
    pub seed: u64,
}

/// Mean and spread over a group of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        rows_csv(&self.rows)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.csv"), &self.to_csv()?)?;
        if !self.summaries.is_empty() {
            let mut w = csv::Writer::from_writer(Vec::new());
            for s in &self.summaries {
                w.serialize(s)?;
            }
            write_atomic(&dir.join("summary.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        }
        if !self.avalanche.is_empty() {
            write_atomic(&dir.join("avalanche.csv"), &avalanche_csv(&self.avalanche)?)?;
        }
        Ok(())
    }
}

/// Row CSV; includes a `defense_level` column when any row carries one.
pub fn rows_csv(rows: &[EvalRow]) -> Result<Vec<u8>> {
    let with_level = rows.iter().any(|r| r.defense_level.is_some());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut header = vec![
        "dataset_id",
        "model_id",
        "task",
        "prompt_mode",
        "points",
        "prompt_id",
        "prompt_seed",
        "condition",
        "miou",
        "clip_ious",
    ];
    if with_level {
        header.push("defense_level");
    }
    w.write_record(&header)?;
    for r in rows {
        let row = CsvRow {
            dataset_id: &r.dataset_id,
            model_id: &r.model_id,
            task: r.task,
            prompt_mode: r.prompt_mode,
            points: r.points,
            prompt_id: r.prompt_id,
            prompt_seed: r.prompt_seed,
            condition: r.condition,
            miou: format!("{:.17}", r.miou),
            clip_ious: r.clip_ious.iter().map(|v| format!("{v:.17}")).collect::<Vec<_>>().join(";"),
            defense_level: with_level.then(|| format!("{}", r.defense_level.unwrap_or(0.0))),
        };
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn unit_iou(params: &ModelParams, clip: &VideoClip, prompts: &[crate::prompts::Prompt]) -> Result<f64> {
    let out = params.segment_video(&clip.frames, prompts)?;
    let mut s = 0.0;
    for (l, gt) in out.iter().zip(&clip.masks) {
        s += iou(&l.foreground(), gt)?;
    }
    Ok(s / clip.len() as f64)
}

fn perturbation_for<'p>(perts: &'p [Perturbation], unit: usize) -> Result<&'p Perturbation> {
    match perts {
        [p] if p.mode == PertMode::Universal => Ok(p),
        _ if perts.iter().all(|p| p.mode == PertMode::Samplewise) => perts
            .get(unit)
            .ok_or_else(|| Error::Config(format!("no sample-wise perturbation for unit {unit}"))),
        _ => Err(Error::Config("expected one universal or one sample-wise perturbation per unit".into())),
    }
}

/// Benign (and, when given, perturbed) rows for one prompt sample.
/// Prompts of `points` ground-truth points (or one box) are drawn from each
/// unit's first mask with seed `optimization_seed + 10000 + prompt_id`.
pub fn evaluate_with(
    ctx: &EvalContext,
    attack: Attack,
    kind: PromptKind,
    points: usize,
    prompt_id: usize,
) -> Result<Vec<EvalRow>> {
    evaluate_transformed(ctx, attack, kind, points, prompt_id, &|_, c| Ok(c))
}

/// Input transform applied to each (benign or perturbed) unit before
/// segmentation; receives the unit index.
pub type UnitTransform<'a> = dyn Fn(usize, VideoClip) -> Result<VideoClip> + 'a;

/// [`evaluate_with`] with `transform` applied after the perturbation.
pub fn evaluate_transformed(
    ctx: &EvalContext,
    attack: Attack,
    kind: PromptKind,
    points: usize,
    prompt_id: usize,
    transform: &UnitTransform,
) -> Result<Vec<EvalRow>> {
    if ctx.units.is_empty() {
        return Err(Error::Config("evaluation needs a non-empty test split".into()));
    }
    let seed = eval_prompt_seed(ctx.optimization_seed, prompt_id as u64);
    let count = match kind {
        PromptKind::Point => points,
        PromptKind::Box => 1,
    };
    let mut benign = Vec::with_capacity(ctx.units.len());
    let mut adv = Vec::with_capacity(ctx.units.len());
    for (j, unit) in ctx.units.iter().enumerate() {
        let prompts = sample_eval_prompts(&unit.masks[0], kind, count, seed)?;
        benign.push(unit_iou(ctx.params, &transform(j, unit.clone())?, &prompts)?);
        let pert = match attack {
            Attack::None => continue,
            Attack::Learned(perts) => perturbation_for(perts, j)?,
            Attack::Noise(p) => p,
        };
        adv.push(unit_iou(ctx.params, &transform(j, apply(unit, pert)?)?, &prompts)?);
    }
    let row = |condition, ious: Vec<f64>| EvalRow {
        dataset_id: ctx.dataset_id.clone(),
        model_id: ctx.model_id.clone(),
        task: ctx.task,
        prompt_mode: kind,
        points: count,
        prompt_id,
        prompt_seed: seed,
        condition,
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
        clip_ious: ious,
        defense_level: None,
    };
    let mut rows = vec![row(Condition::Benign, benign)];
    match attack {
        Attack::None => {}
        Attack::Learned(_) => rows.push(row(Condition::Adversarial, adv)),
        Attack::Noise(_) => rows.push(row(Condition::NoiseBaseline, adv)),
    }
    Ok(rows)
}

/// Single-point evaluation (prompt 0).
pub fn evaluate(ctx: &EvalContext, attack: Attack) -> Result<Vec<EvalRow>> {
    evaluate_with(ctx, attack, PromptKind::Point, 1, 0)
}

fn summarize(label: &str, rows: &[EvalRow]) -> Vec<Summary> {
    let mut out = Vec::new();
    for cond in [Condition::Benign, Condition::Adversarial, Condition::NoiseBaseline] {
        let v: Vec<f64> = rows.iter().filter(|r| r.condition == cond).map(|r| r.miou).collect();
        if v.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&v);
        out.push(Summary {
            label: label.to_string(),
            condition: cond,
            n: v.len(),
            mean,
            std,
        });
    }
    out
}

/// `count` independent prompt samples per kind; one summary per kind and
/// condition.
pub fn cross_prompt_eval(
    ctx: &EvalContext,
    attack: Attack,
    kinds: &[PromptKind],
    count: usize,
) -> Result<(Vec<EvalRow>, Vec<Summary>)> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &kind in kinds {
        let mut kr = Vec::new();
        for idx in 0..count {
            kr.extend(evaluate_with(ctx, attack, kind, 1, idx)?);
        }
        summaries.extend(summarize(&format!("cross-prompt {}", kind.as_str()), &kr));
        rows.extend(kr);
    }
    Ok((rows, summaries))
}

/// `k` jointly encoded ground-truth points per prompt, for each `k`.
pub fn multi_point_eval(ctx: &EvalContext, attack: Attack, ks: &[usize]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        if k == 0 {
            return Err(Error::Config("points per prompt must be at least 1".into()));
        }
        rows.extend(evaluate_with(ctx, attack, PromptKind::Point, k, 0)?);
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// Frame `i` vs frame `i + 1`.
    Consecutive,
    /// Frame `i` vs frame 0.
    VsFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvalanchePoint {
    pub clip_id: usize,
    pub frame_index: usize,
    pub series: Series,
    pub condition: Condition,
    pub similarity: f64,
}

pub fn avalanche_csv(points: &[AvalanchePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cosine(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm feature map".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

fn similarity_series(params: &ModelParams, clip: &VideoClip, clip_id: usize, condition: Condition) -> Result<Vec<AvalanchePoint>> {
    let feats = clip
        .frames
        .iter()
        .map(|f| params.encode_features(f))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..feats.len() - 1 {
        out.push(AvalanchePoint {
            clip_id,
            frame_index: i,
            series: Series::Consecutive,
            condition,
            similarity: cosine(&feats[i], &feats[i + 1])?,
        });
    }
    for (i, f) in feats.iter().enumerate().skip(1) {
        out.push(AvalanchePoint {
            clip_id,
            frame_index: i,
            series: Series::VsFirst,
            condition,
            similarity: cosine(&feats[0], f)?,
        });
    }
    Ok(out)
}

/// Encoder-feature similarity curves of a clip, benign and (optionally)
/// perturbed.
pub fn avalanche_curve(params: &ModelParams, clip: &VideoClip, clip_id: usize, pert: Option<&Perturbation>) -> Result<Vec<AvalanchePoint>> {
    if clip.len() < 2 {
        return Err(Error::Config("avalanche curve needs at least two frames".into()));
    }
    let mut out = similarity_series(params, clip, clip_id, Condition::Benign)?;
    if let Some(p) = pert {
        out.extend(similarity_series(params, &apply(clip, p)?, clip_id, Condition::Adversarial)?);
    }
    Ok(out)
}

/// Mean consecutive-frame similarity of one condition.
pub fn mean_consecutive(points: &[AvalanchePoint], condition: Condition) -> f64 {
    let v: Vec<f64> = points
        .iter()
        .filter(|p| p.condition == condition && p.series == Series::Consecutive)
        .map(|p| p.similarity)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Universal delta with every entry drawn from `{-epsilon, +epsilon}`.
pub fn noise_baseline(epsilon: f64, height: usize, width: usize, seed: u64) -> Perturbation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * height * width)
        .map(|_| if rng.gen::<bool>() { epsilon } else { -epsilon })
        .collect();
    Perturbation {
        mode: PertMode::Universal,
        epsilon,
        deltas: vec![Tensor::new(vec![3, height, width], data).unwrap()],
        seed,
        config_hash: String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub seeds: Vec<u64>,
    pub adversarial_miou: Vec<f64>,
    pub benign_miou: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Attack plus single-point evaluation per seed, with the attack seed and
/// the evaluation prompt seeds both following `seed`.
pub fn seed_stability(
    params: &ModelParams,
    train_units: &[VideoClip],
    ctx: &EvalContext,
    cfg: &AttackConfig,
    seeds: &[u64],
) -> Result<StabilitySummary> {
    if seeds.len() < 2 {
        return Err(Error::Config("seed stability needs at least two seeds".into()));
    }
    let mut adv = Vec::with_capacity(seeds.len());
    let mut benign = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let run_cfg = AttackConfig { seed: s, ..cfg.clone() };
        let pert = optimize_uap(params, train_units, &run_cfg)?.perturbation;
        let run_ctx = EvalContext {
            optimization_seed: s,
            ..ctx.clone()
        };
        let rows = evaluate(&run_ctx, Attack::Learned(std::slice::from_ref(&pert)))?;
        benign.push(rows[0].miou);
        adv.push(rows[1].miou);
    }
    let (mean, std) = mean_std(&adv);
    Ok(StabilitySummary {
        seeds: seeds.to_vec(),
        adversarial_miou: adv,
        benign_miou: benign,
        mean,
        std,
    })
}

/// Minimal PNG charts (no text): a line chart of series in `[0, 1]`, or a
/// bar chart of values in `[0, 1]`.
pub mod plot {
    use std::path::Path;

    use image::{Rgb, RgbImage};

    use crate::error::{Error, Result};

    const W: u32 = 480;
    const H: u32 = 320;
    const PAD: u32 = 24;
    const PALETTE: [[u8; 3]; 6] = [
        [31, 119, 180],
        [214, 39, 40],
        [44, 160, 44],
        [255, 127, 14],
        [148, 103, 189],
        [23, 190, 207],
    ];

    fn canvas() -> RgbImage {
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        for x in PAD..W - PAD {
            img.put_pixel(x, H - PAD, Rgb([0, 0, 0]));
        }
        for y in PAD..=H - PAD {
            img.put_pixel(PAD, y, Rgb([0, 0, 0]));
        }
        img
    }

    fn to_px(i: f64, n: f64, v: f64) -> (i64, i64) {
        let x = PAD as f64 + (W - 2 * PAD) as f64 * if n > 1.0 { i / (n - 1.0) } else { 0.5 };
        let y = (H - PAD) as f64 - (H - 2 * PAD) as f64 * v.clamp(0.0, 1.0);
        (x.round() as i64, y.round() as i64)
    }

    fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
                img.put_pixel(x as u32, y as u32, c);
            }
        }
    }

    fn save(img: &RgbImage, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        crate::fsutil::write_atomic(path, &bytes)
    }

    pub fn line_chart(path: &Path, series: &[Vec<f64>]) -> Result<()> {
        let mut img = canvas();
        let n = series.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
        for (k, s) in series.iter().enumerate() {
            let c = Rgb(PALETTE[k % PALETTE.len()]);
            for i in 1..s.len() {
                line(&mut img, to_px((i - 1) as f64, n, s[i - 1]), to_px(i as f64, n, s[i]), c);
            }
        }
        save(&img, path)
    }

    pub fn bar_chart(path: &Path, values: &[f64]) -> Result<()> {
        let mut img = canvas();
        let n = values.len().max(1) as u32;
        let slot = (W - 2 * PAD) / n;
        for (k, &v) in values.iter().enumerate() {
            let c = Rgb(PALETTE[k % PALETTE.len()]);
            let top = (H - PAD) as f64 - (H - 2 * PAD) as f64 * v.clamp(0.0, 1.0);
            let x0 = PAD + 1 + k as u32 * slot + slot / 6;
            for x in x0..x0 + (slot * 2 / 3).max(1) {
                for y in top.round() as u32..H - PAD {
                    img.put_pixel(x.min(W - 1), y, c);
                }
            }
        }
        save(&img, path)
    }
}
