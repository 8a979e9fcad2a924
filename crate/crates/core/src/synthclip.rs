//! Deterministic synthetic video clips with exact ground-truth masks.
//!
//! Every clip is a pure function of its [`ClipSpec`]. Randomness (colours,
//! start position, background texture) comes from ChaCha8 seeded with
//! `spec.seed`, so clips are identical on every platform.
//!
//! # On-disk layout
//!
//! One directory per clip:
//!
//! * `meta.json` holds the [`ClipSpec`] fields.
//! * `frames.bin` holds `frame_count * 3 * height * width` little-endian
//!   `f32` values ordered frame, channel (R, G, B), row, column.
//! * `masks.bin` holds `frame_count * height * width` little-endian `f32`
//!   values (`0.0` or `1.0`) ordered frame, row, column.
//!
//! A dataset is a directory with `manifest.json` and the clip directories it
//! references by relative path.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fsutil::{f32_le_bytes, read_f32_le, write_atomic};
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Solid,
    Gradient,
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Video,
    Image,
}

impl ShapeKind {
    fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

impl Background {
    fn as_str(self) -> &'static str {
        match self {
            Background::Solid => "solid",
            Background::Gradient => "gradient",
            Background::Noise => "noise",
        }
    }
}

/// Parameters of one synthetic clip.
///
/// `shape_size` is the shape's half-extent as a fraction of `min(H, W)`: the
/// radius of a circle, half the side of a square, the circumradius of an
/// upward equilateral triangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub shape_kind: ShapeKind,
    pub shape_size: f64,
    /// Centroid displacement per frame, `(dx, dy)` in pixels.
    pub velocity: [f64; 2],
    pub background: Background,
    pub seed: u64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frame_count: 15,
            height: 64,
            width: 64,
            shape_kind: ShapeKind::Circle,
            shape_size: 0.2,
            velocity: [1.5, -1.0],
            background: Background::Solid,
            seed: 30,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 1 {
            return Err(Error::Config("frame_count must be at least 1".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "frame size {}x{} is below the 8x8 minimum",
                self.height, self.width
            )));
        }
        if !(self.shape_size > 0.1 && self.shape_size < 0.4) {
            return Err(Error::Config(format!(
                "shape_size {} outside (0.1, 0.4)",
                self.shape_size
            )));
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("velocity must be finite".into()));
        }
        Ok(())
    }

    /// Half-extent of the shape in pixels.
    pub fn radius(&self) -> f64 {
        self.shape_size * self.height.min(self.width) as f64
    }

    /// Spec with every free attribute drawn from `seed`.
    pub fn random(seed: u64, frame_count: usize, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c11b);
        let shape_kind = match rng.gen_range(0..3) {
            0 => ShapeKind::Circle,
            1 => ShapeKind::Square,
            _ => ShapeKind::Triangle,
        };
        let background = match rng.gen_range(0..3) {
            0 => Background::Solid,
            1 => Background::Gradient,
            _ => Background::Noise,
        };
        let shape_size = rng.gen_range(0.14..0.24);
        let speed = rng.gen_range(0.5..2.0);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Self {
            frame_count,
            height,
            width,
            shape_kind,
            shape_size,
            velocity: [speed * angle.cos(), speed * angle.sin()],
            background,
            seed,
        }
    }
}

/// Frames plus per-frame ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub spec: ClipSpec,
    /// `3 x H x W` tensors with values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub masks: Vec<Mask>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    /// The first `n` frames (all frames when `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> VideoClip {
        let n = n.min(self.len());
        VideoClip {
            spec: ClipSpec {
                frame_count: n,
                ..self.spec.clone()
            },
            frames: self.frames[..n].to_vec(),
            masks: self.masks[..n].to_vec(),
        }
    }

    /// Single-frame clip holding frame `i`.
    pub fn single_frame(&self, i: usize) -> VideoClip {
        VideoClip {
            spec: ClipSpec {
                frame_count: 1,
                ..self.spec.clone()
            },
            frames: vec![self.frames[i].clone()],
            masks: vec![self.masks[i].clone()],
        }
    }
}

fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let mut q = (p - lo).rem_euclid(2.0 * span);
    if q > span {
        q = 2.0 * span - q;
    }
    lo + q
}

/// Centroid of the shape at frame `t` given its start point.
fn centroid(spec: &ClipSpec, start: (f64, f64), t: usize) -> (f64, f64) {
    let r = spec.radius();
    let x = reflect(start.0 + spec.velocity[0] * t as f64, r, spec.width as f64 - r);
    let y = reflect(start.1 + spec.velocity[1] * t as f64, r, spec.height as f64 - r);
    (x, y)
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Signed distance-like membership test: returns how far `(px, py)` lies
/// inside the shape (positive) or outside (negative), in pixels for circles
/// and squares and in a comparable scale for triangles.
pub fn shape_margin(kind: ShapeKind, center: (f64, f64), r: f64, px: f64, py: f64) -> f64 {
    let (dx, dy) = (px - center.0, py - center.1);
    match kind {
        ShapeKind::Circle => r - (dx * dx + dy * dy).sqrt(),
        ShapeKind::Square => r - dx.abs().max(dy.abs()),
        ShapeKind::Triangle => {
            // Upward equilateral triangle with circumradius r: inradius r/2.
            let inr = r / 2.0;
            let bottom = inr - dy;
            let right = inr - (SQRT3 / 2.0 * dx - 0.5 * dy);
            let left = inr - (-SQRT3 / 2.0 * dx - 0.5 * dy);
            bottom.min(right).min(left)
        }
    }
}

fn contrasting_color(rng: &mut ChaCha8Rng, avoid: &[[f64; 3]]) -> [f64; 3] {
    let mut best = [0.0; 3];
    let mut best_d = -1.0;
    for _ in 0..32 {
        let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let d = avoid
            .iter()
            .map(|a| (0..3).map(|i| (a[i] - c[i]).abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = c;
        }
        if d >= 0.9 {
            break;
        }
    }
    best
}

struct BackgroundField {
    kind: Background,
    base: [f64; 3],
    other: [f64; 3],
    direction: (f64, f64),
    grid: Vec<f64>,
    cells: usize,
}

impl BackgroundField {
    fn new(kind: Background, rng: &mut ChaCha8Rng) -> Self {
        let base = [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ];
        let other = [
            (base[0] + rng.gen_range(-0.3..0.3f64)).clamp(0.0, 1.0),
            (base[1] + rng.gen_range(-0.3..0.3f64)).clamp(0.0, 1.0),
            (base[2] + rng.gen_range(-0.3..0.3f64)).clamp(0.0, 1.0),
        ];
        let ux: f64 = rng.gen_range(-1.0..1.0);
        let uy: f64 = rng.gen_range(-1.0..1.0);
        let n = (ux * ux + uy * uy).sqrt().max(1e-3);
        let cells = 6;
        let grid = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f64>()).collect();
        Self {
            kind,
            base,
            other,
            direction: (ux / n, uy / n),
            grid,
            cells,
        }
    }

    fn palette(&self) -> Vec<[f64; 3]> {
        match self.kind {
            Background::Solid => vec![self.base],
            _ => vec![self.base, self.other],
        }
    }

    /// Colour at normalized position `(u, v)` in `[0, 1]^2`.
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let t = match self.kind {
            Background::Solid => return self.base,
            Background::Gradient => {
                let p = (u - 0.5) * self.direction.0 + (v - 0.5) * self.direction.1;
                (p + 0.7071).clamp(0.0, 1.4142) / 1.4142
            }
            Background::Noise => {
                let n = self.cells as f64;
                let (gx, gy) = (u * n, v * n);
                let (ix, iy) = ((gx as usize).min(self.cells - 1), (gy as usize).min(self.cells - 1));
                let (fx, fy) = (gx - ix as f64, gy - iy as f64);
                let s = |t: f64| t * t * (3.0 - 2.0 * t);
                let (sx, sy) = (s(fx), s(fy));
                let at = |x: usize, y: usize| self.grid[y * (self.cells + 1) + x];
                let top = at(ix, iy) * (1.0 - sx) + at(ix + 1, iy) * sx;
                let bot = at(ix, iy + 1) * (1.0 - sx) + at(ix + 1, iy + 1) * sx;
                top * (1.0 - sy) + bot * sy
            }
        };
        [
            self.base[0] * (1.0 - t) + self.other[0] * t,
            self.base[1] * (1.0 - t) + self.other[1] * t,
            self.base[2] * (1.0 - t) + self.other[2] * t,
        ]
    }
}

/// Renders the clip described by `spec`.
pub fn generate_clip(spec: &ClipSpec) -> Result<VideoClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = BackgroundField::new(spec.background, &mut rng);
    let fg = contrasting_color(&mut rng, &field.palette());
    let r = spec.radius();
    let (h, w) = (spec.height, spec.width);
    let start = (
        rng.gen_range(r..=(w as f64 - r)),
        rng.gen_range(r..=(h as f64 - r)),
    );
    let mut bg = vec![[0.0; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            bg[y * w + x] = field.color((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        }
    }
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut masks = Vec::with_capacity(spec.frame_count);
    for t in 0..spec.frame_count {
        let c = centroid(spec, start, t);
        let mask = Mask::from_fn(h, w, |y, x| {
            shape_margin(spec.shape_kind, c, r, x as f64 + 0.5, y as f64 + 0.5) >= 0.0
        });
        let mut data = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let color = if mask.get(y, x) { fg } else { bg[y * w + x] };
                for ch in 0..3 {
                    // f32-representable so that the on-disk format is lossless.
                    data[(ch * h + y) * w + x] = color[ch].clamp(0.0, 1.0) as f32 as f64;
                }
            }
        }
        frames.push(Tensor::new(vec![3, h, w], data)?);
        masks.push(mask);
    }
    Ok(VideoClip {
        spec: spec.clone(),
        frames,
        masks,
    })
}

/// Centroid trajectory `(x, y)` for every frame; exposed for tests and
/// diagnostics.
pub fn trajectory(spec: &ClipSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = BackgroundField::new(spec.background, &mut rng);
    let _ = contrasting_color(&mut rng, &field.palette());
    let r = spec.radius();
    let start = (
        rng.gen_range(r..=(spec.width as f64 - r)),
        rng.gen_range(r..=(spec.height as f64 - r)),
    );
    Ok((0..spec.frame_count).map(|t| centroid(spec, start, t)).collect())
}

const META: &str = "meta.json";
const FRAMES: &str = "frames.bin";
const MASKS: &str = "masks.bin";

fn meta_json(spec: &ClipSpec) -> Value {
    json!({
        "frame_count": spec.frame_count,
        "height": spec.height,
        "width": spec.width,
        "shape_kind": spec.shape_kind.as_str(),
        "shape_size": spec.shape_size,
        "velocity": spec.velocity,
        "background": spec.background.as_str(),
        "seed": spec.seed,
    })
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(META), serde_json::to_string_pretty(&meta_json(&clip.spec))?.as_bytes())?;
    let frames = f32_le_bytes(clip.frames.iter().flat_map(|f| f.data().iter().copied()));
    write_atomic(&dir.join(FRAMES), &frames)?;
    let masks = f32_le_bytes(clip.masks.iter().flat_map(|m| m.to_f64()));
    write_atomic(&dir.join(MASKS), &masks)?;
    Ok(())
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::format(META, name, "missing"))
}

fn uint_field(obj: &Value, name: &str) -> Result<u64> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| Error::format(META, name, "expected a non-negative integer"))
}

fn float_field(v: &Value, name: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::format(META, name, "expected a number"))
}

fn str_field<'a>(obj: &'a Value, name: &str) -> Result<&'a str> {
    field(obj, name)?
        .as_str()
        .ok_or_else(|| Error::format(META, name, "expected a string"))
}

fn parse_meta(v: &Value) -> Result<ClipSpec> {
    if !v.is_object() {
        return Err(Error::format(META, "<root>", "expected a JSON object"));
    }
    let shape_kind = match str_field(v, "shape_kind")? {
        "circle" => ShapeKind::Circle,
        "square" => ShapeKind::Square,
        "triangle" => ShapeKind::Triangle,
        other => return Err(Error::format(META, "shape_kind", format!("unknown shape `{other}`"))),
    };
    let background = match str_field(v, "background")? {
        "solid" => Background::Solid,
        "gradient" => Background::Gradient,
        "noise" => Background::Noise,
        other => {
            return Err(Error::format(META, "background", format!("unknown background `{other}`")))
        }
    };
    let vel = field(v, "velocity")?
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::format(META, "velocity", "expected a 2-element array"))?;
    let spec = ClipSpec {
        frame_count: uint_field(v, "frame_count")? as usize,
        height: uint_field(v, "height")? as usize,
        width: uint_field(v, "width")? as usize,
        shape_kind,
        shape_size: float_field(field(v, "shape_size")?, "shape_size")?,
        velocity: [float_field(&vel[0], "velocity")?, float_field(&vel[1], "velocity")?],
        background,
        seed: uint_field(v, "seed")?,
    };
    spec.validate()
        .map_err(|e| Error::format(META, "<spec>", e.to_string()))?;
    Ok(spec)
}

pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let missing: Vec<PathBuf> = [META, FRAMES, MASKS]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let meta: Value = serde_json::from_slice(&fs::read(dir.join(META))?)
        .map_err(|e| Error::format(META, "<root>", e.to_string()))?;
    let spec = parse_meta(&meta)?;
    let (n, h, w) = (spec.frame_count, spec.height, spec.width);
    let frame_bytes = fs::read(dir.join(FRAMES))?;
    let want = n * 3 * h * w * 4;
    if frame_bytes.len() != want {
        return Err(Error::format(
            FRAMES,
            "length",
            format!("expected {want} bytes, found {}", frame_bytes.len()),
        ));
    }
    let mask_bytes = fs::read(dir.join(MASKS))?;
    let want = n * h * w * 4;
    if mask_bytes.len() != want {
        return Err(Error::format(
            MASKS,
            "length",
            format!("expected {want} bytes, found {}", mask_bytes.len()),
        ));
    }
    let values = read_f32_le(&frame_bytes);
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::format(FRAMES, "values", format!("pixel {bad} outside [0, 1]")));
    }
    let frames = values
        .chunks(3 * h * w)
        .map(|c| Tensor::new(vec![3, h, w], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mvals = read_f32_le(&mask_bytes);
    let mut masks = Vec::with_capacity(n);
    for chunk in mvals.chunks(h * w) {
        let mut bits = Vec::with_capacity(h * w);
        for &v in chunk {
            if v == 0.0 {
                bits.push(false);
            } else if v == 1.0 {
                bits.push(true);
            } else {
                return Err(Error::format(MASKS, "values", format!("non-binary mask value {v}")));
            }
        }
        masks.push(Mask::from_vec(h, w, bits)?);
    }
    Ok(VideoClip {
        spec,
        frames,
        masks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    /// Clip directory, relative to the manifest's directory.
    pub path: PathBuf,
    pub split: Split,
    pub seed: u64,
    /// For image-task manifests, the frames sampled from this clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: Task,
    pub global_seed: u64,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.clips.iter().filter(|c| c.split == split).count()
    }
}

/// Generation knobs for [`generate_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    /// Frames sampled per clip for image-task manifests.
    pub image_frames_per_clip: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            frame_count: 15,
            height: 64,
            width: 64,
            image_frames_per_clip: 5,
        }
    }
}

/// In-memory dataset: the manifest plus the clips it references, in order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<VideoClip>,
}

/// Builds `n_clips` clips with seeds `base_seed + index`; the first 80%
/// (by index, at least one and at most `n - 1`) form the train split.
pub fn generate_dataset(n_clips: usize, base_seed: u64, task: Task, opts: &DatasetOptions) -> Result<Dataset> {
    if n_clips < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clips to split into train and test, got {n_clips}"
        )));
    }
    let n_train = (n_clips * 4 / 5).clamp(1, n_clips - 1);
    let mut entries = Vec::with_capacity(n_clips);
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let seed = base_seed + i as u64;
        let spec = ClipSpec::random(seed, opts.frame_count, opts.height, opts.width);
        let clip = generate_clip(&spec)?;
        let frames = match task {
            Task::Video => None,
            Task::Image => {
                let k = opts.image_frames_per_clip.min(clip.len());
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a6e_f8a3);
                let mut idx = rand::seq::index::sample(&mut rng, clip.len(), k).into_vec();
                idx.sort_unstable();
                Some(idx)
            }
        };
        entries.push(ClipEntry {
            path: PathBuf::from(format!("clips/clip_{i:03}")),
            split: if i < n_train { Split::Train } else { Split::Test },
            seed,
            frames,
        });
        clips.push(clip);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            task,
            global_seed: base_seed,
            frame_count: opts.frame_count,
            height: opts.height,
            width: opts.width,
            clips: entries,
        },
        clips,
    })
}

impl Dataset {
    /// Writes `manifest.json` and every clip under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        for (entry, clip) in self.manifest.clips.iter().zip(&self.clips) {
            save_clip(clip, &dir.join(&entry.path))?;
        }
        let path = dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&self.manifest)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        if !manifest_path.exists() {
            return Err(Error::Missing(vec![manifest_path.to_path_buf()]));
        }
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let missing: Vec<PathBuf> = manifest
            .clips
            .iter()
            .map(|c| root.join(&c.path))
            .filter(|p| !p.join(META).exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        let clips = manifest
            .clips
            .iter()
            .map(|c| load_clip(&root.join(&c.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, clips })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (&ClipEntry, &VideoClip)> {
        self.manifest
            .clips
            .iter()
            .zip(&self.clips)
            .filter(move |(e, _)| e.split == split)
    }

    /// Attack/evaluation units of a split: whole clips truncated to
    /// `frames_per_clip` for video manifests, one single-frame clip per
    /// sampled frame for image manifests.
    pub fn units(&self, split: Split, frames_per_clip: usize) -> Vec<VideoClip> {
        let mut out = Vec::new();
        for (entry, clip) in self.split(split) {
            match (&self.manifest.task, &entry.frames) {
                (Task::Image, Some(idx)) => out.extend(idx.iter().map(|&i| clip.single_frame(i))),
                _ => out.push(clip.truncated(frames_per_clip)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(frames: usize, velocity: [f64; 2]) -> ClipSpec {
        ClipSpec {
            frame_count: frames,
            shape_kind: ShapeKind::Circle,
            shape_size: 0.15,
            velocity,
            ..ClipSpec::default()
        }
    }

    #[test]
    fn zero_velocity_gives_static_mask() {
        let clip = generate_clip(&circle(3, [0.0, 0.0])).unwrap();
        assert_eq!(clip.masks[0], clip.masks[1]);
        assert_eq!(clip.masks[1], clip.masks[2]);
    }

    #[test]
    fn circle_area_matches_analytic_area() {
        for seed in 0..10 {
            let spec = ClipSpec {
                seed,
                ..circle(15, [1.7, -2.3])
            };
            let clip = generate_clip(&spec).unwrap();
            let r = spec.radius();
            let area = std::f64::consts::PI * r * r;
            for m in &clip.masks {
                let rel = (m.count() as f64 - area).abs() / area;
                assert!(rel <= 0.05, "area {} vs {area}", m.count());
            }
        }
    }

    #[test]
    fn same_spec_gives_identical_bytes() {
        let spec = ClipSpec::random(99, 6, 32, 32);
        let dir = tempfile::tempdir().unwrap();
        save_clip(&generate_clip(&spec).unwrap(), &dir.path().join("a")).unwrap();
        save_clip(&generate_clip(&spec).unwrap(), &dir.path().join("b")).unwrap();
        for f in [META, FRAMES, MASKS] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
    }

    #[test]
    fn trajectory_moves_by_velocity_away_from_borders() {
        let spec = ClipSpec {
            frame_count: 4,
            velocity: [0.5, 0.25],
            ..ClipSpec::default()
        };
        let tr = trajectory(&spec).unwrap();
        let r = spec.radius();
        for w in tr.windows(2) {
            let inside = |p: (f64, f64)| p.0 > r + 1.0 && p.0 < 64.0 - r - 1.0 && p.1 > r + 1.0 && p.1 < 64.0 - r - 1.0;
            if inside(w[0]) && inside(w[1]) {
                assert!((w[1].0 - w[0].0 - 0.5).abs() < 1e-12);
                assert!((w[1].1 - w[0].1 - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_stays_in_frame_with_fast_motion() {
        for kind in [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle] {
            let spec = ClipSpec {
                frame_count: 40,
                shape_kind: kind,
                shape_size: 0.3,
                velocity: [7.0, -5.0],
                ..ClipSpec::default()
            };
            let clip = generate_clip(&spec).unwrap();
            let tr = trajectory(&spec).unwrap();
            let r = spec.radius();
            for (m, c) in clip.masks.iter().zip(&tr) {
                assert!(c.0 >= r && c.0 <= 64.0 - r && c.1 >= r && c.1 <= 64.0 - r);
                assert!(m.count() > 0);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            ClipSpec { frame_count: 0, ..ClipSpec::default() },
            ClipSpec { shape_size: 0.05, ..ClipSpec::default() },
            ClipSpec { shape_size: 0.4, ..ClipSpec::default() },
            ClipSpec { height: 4, ..ClipSpec::default() },
        ];
        for spec in bad {
            assert!(generate_clip(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn dataset_split_is_eighty_twenty() {
        let opts = DatasetOptions { frame_count: 2, height: 16, width: 16, image_frames_per_clip: 2 };
        let ds = generate_dataset(10, 30, Task::Video, &opts).unwrap();
        assert_eq!(ds.manifest.count(Split::Train), 8);
        assert_eq!(ds.manifest.count(Split::Test), 2);
        let seeds: Vec<u64> = ds.manifest.clips.iter().map(|c| c.seed).collect();
        assert_eq!(seeds, (30..40).collect::<Vec<_>>());
        assert!(generate_dataset(1, 30, Task::Video, &opts).is_err());
    }

    #[test]
    fn image_manifest_samples_distinct_frames() {
        let opts = DatasetOptions { frame_count: 6, height: 16, width: 16, image_frames_per_clip: 3 };
        let ds = generate_dataset(10, 30, Task::Image, &opts).unwrap();
        assert_eq!(ds.manifest.count(Split::Train), 8);
        for c in &ds.manifest.clips {
            let f = c.frames.as_ref().unwrap();
            assert_eq!(f.len(), 3);
            assert!(f.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(ds.units(Split::Test, 15).len(), 6);
        assert!(ds.units(Split::Test, 15).iter().all(|u| u.len() == 1));
    }

    #[test]
    fn dataset_round_trip_and_missing_clip_error() {
        let opts = DatasetOptions { frame_count: 2, height: 16, width: 16, image_frames_per_clip: 1 };
        let ds = generate_dataset(3, 7, Task::Video, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = ds.save(dir.path()).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back.clips, ds.clips);
        assert_eq!(back.manifest, ds.manifest);
        fs::remove_dir_all(dir.path().join("clips/clip_001")).unwrap();
        match Dataset::load(&path) {
            Err(Error::Missing(p)) => {
                assert_eq!(p.len(), 1);
                assert!(p[0].ends_with("clips/clip_001"));
            }
            other => panic!("expected missing-clip error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_corrupt_files_are_load_errors() {
        let clip = generate_clip(&ClipSpec::random(3, 2, 16, 16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_clip(&clip, dir.path()).unwrap();
        assert_eq!(load_clip(dir.path()).unwrap(), clip);

        let frames = fs::read(dir.path().join(FRAMES)).unwrap();
        fs::write(dir.path().join(FRAMES), &frames[..frames.len() - 7]).unwrap();
        let err = load_clip(dir.path()).unwrap_err();
        assert!(err.to_string().contains("frames.bin"), "{err}");
        fs::write(dir.path().join(FRAMES), &frames).unwrap();

        let meta = fs::read_to_string(dir.path().join(META)).unwrap();
        fs::write(dir.path().join(META), meta.replace("\"height\": 16", "\"height\": \"tall\"")).unwrap();
        let err = load_clip(dir.path()).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }
}
