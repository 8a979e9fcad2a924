//! Magnitude pruning, spatter/saturate input corruption, and the sweep
//! that evaluates benign and perturbed inputs under each defense level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::{evaluate_transformed, Attack, EvalContext, EvalRow};
use crate::prompts::PromptKind;
use crate::segmodel::ModelParams;
use crate::synthclip::VideoClip;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    /// One magnitude threshold over every prunable array.
    Global,
    /// The same ratio applied to each prunable array separately.
    PerLayer,
}

fn prune_count(ratio: f64, n: usize) -> usize {
    // The epsilon absorbs products like 0.3 * 10 = 2.9999999999999996.
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Zeroes the `floor(ratio * P)` smallest-magnitude prunable weights.
/// Equal magnitudes are taken in traversal order (array order, then
/// element order). The input is untouched.
pub fn prune_model(params: &ModelParams, ratio: f64, mode: PruneMode) -> Result<ModelParams> {
    if !(0.0..=0.9).contains(&ratio) {
        return Err(Error::Config(format!("pruning ratio {ratio} outside [0, 0.9]")));
    }
    let mut out = params.clone();
    match mode {
        PruneMode::Global => {
            let mut all: Vec<(f64, usize, usize)> = Vec::new();
            for (ai, a) in params.arrays.iter().enumerate().filter(|(_, a)| a.prunable) {
                all.extend(a.tensor.data().iter().enumerate().map(|(i, v)| (v.abs(), ai, i)));
            }
            // Stable sort keeps traversal order among ties.
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, ai, i) in &all[..prune_count(ratio, all.len())] {
                out.arrays[ai].tensor.data_mut()[i] = 0.0;
            }
        }
        PruneMode::PerLayer => {
            for a in out.arrays.iter_mut().filter(|a| a.prunable) {
                let mut idx: Vec<(f64, usize)> = a.tensor.data().iter().enumerate().map(|(i, v)| (v.abs(), i)).collect();
                idx.sort_by(|a, b| a.0.total_cmp(&b.0));
                let k = prune_count(ratio, idx.len());
                for &(_, i) in &idx[..k] {
                    a.tensor.data_mut()[i] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Spatter,
    Saturate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

const MUD: [f64; 3] = [0.42, 0.33, 0.22];
const SATURATION: [f64; 6] = [1.0, 1.3, 1.6, 2.0, 2.5, 3.0];

/// Radius of the spatter disks at severity `s`.
pub fn spatter_radius(severity: u8) -> f64 {
    1.0 + severity as f64
}

pub fn spatter_count(severity: u8) -> usize {
    4 * severity as usize
}

/// Severity 0 returns the input unchanged.
///
/// Spatter blends `4s` mud-coloured disks of radius `1 + s` at opacity
/// `0.15 s`; a pixel is covered when its centre lies within the radius.
/// Saturate multiplies HSV saturation by `[1, 1.3, 1.6, 2, 2.5, 3][s]`.
pub fn corrupt(image: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    if spec.severity > 5 {
        return Err(Error::Config(format!("corruption severity {} outside 0..=5", spec.severity)));
    }
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected a 3 x H x W image, got {s:?}")));
    }
    if spec.severity == 0 {
        return Ok(image.clone());
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut out = image.clone();
    let d = out.data_mut();
    match spec.kind {
        CorruptionKind::Spatter => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let r = spatter_radius(spec.severity);
            let alpha = 0.15 * spec.severity as f64;
            for _ in 0..spatter_count(spec.severity) {
                let cx = rng.gen_range(0.0..w as f64);
                let cy = rng.gen_range(0.0..h as f64);
                let y0 = (cy - r).floor().max(0.0) as usize;
                let y1 = ((cy + r).ceil() as usize).min(h);
                let x0 = (cx - r).floor().max(0.0) as usize;
                let x1 = ((cx + r).ceil() as usize).min(w);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        if dx * dx + dy * dy <= r * r {
                            for (c, m) in MUD.iter().enumerate() {
                                let v = &mut d[c * plane + y * w + x];
                                *v = (1.0 - alpha) * *v + alpha * m;
                            }
                        }
                    }
                }
            }
        }
        CorruptionKind::Saturate => {
            let f = SATURATION[spec.severity as usize];
            for i in 0..plane {
                let (r, g, b) = (d[i], d[plane + i], d[2 * plane + i]);
                let (hue, sat, val) = rgb_to_hsv(r, g, b);
                let (r, g, b) = hsv_to_rgb(hue, (sat * f).min(1.0), val);
                d[i] = r;
                d[plane + i] = g;
                d[2 * plane + i] = b;
            }
        }
    }
    for v in d.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { c / max };
    (h, s, max)
}

/// Hue in sextants `[0, 6)`.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

pub fn corrupt_clip(clip: VideoClip, kind: CorruptionKind, severity: u8, seed: u64) -> Result<VideoClip> {
    let frames = clip
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            corrupt(
                f,
                &CorruptionSpec {
                    kind,
                    severity,
                    seed: seed.wrapping_add(i as u64),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoClip { frames, ..clip })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    Prune,
    Spatter,
    Saturate,
}

/// Benign and perturbed single-point rows at each defense level. Pruning
/// levels are ratios; corruption levels are severities, applied after the
/// perturbation with per-frame seeds `seed + 1000 * unit + frame`.
pub fn defense_sweep(
    ctx: &EvalContext,
    attack: Attack,
    defense: DefenseKind,
    levels: &[f64],
    prune_mode: PruneMode,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &level in levels {
        let mut level_rows = match defense {
            DefenseKind::Prune => {
                let pruned = prune_model(ctx.params, level, prune_mode)?;
                let pctx = EvalContext {
                    params: &pruned,
                    ..ctx.clone()
                };
                evaluate_transformed(&pctx, attack, PromptKind::Point, 1, 0, &|_, c| Ok(c))?
            }
            DefenseKind::Spatter | DefenseKind::Saturate => {
                if level.fract() != 0.0 || !(0.0..=5.0).contains(&level) {
                    return Err(Error::Config(format!("corruption severity {level} must be an integer in 0..=5")));
                }
                let kind = if defense == DefenseKind::Spatter {
                    CorruptionKind::Spatter
                } else {
                    CorruptionKind::Saturate
                };
                let sev = level as u8;
                evaluate_transformed(ctx, attack, PromptKind::Point, 1, 0, &|j, c| {
                    corrupt_clip(c, kind, sev, seed.wrapping_add(1000 * j as u64))
                })?
            }
        };
        for r in &mut level_rows {
            r.defense_level = Some(level);
        }
        rows.extend(level_rows);
    }
    Ok(rows)
}

/// Parses `start:stop:step` (inclusive) or `a..b` (integers, inclusive), or
/// a comma list.
pub fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse levels `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).map(|v| v as f64).collect());
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded to 10 decimals so 0.1 * 3 prints as 0.3.
        return Ok((0..=n)
            .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
            .collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}
