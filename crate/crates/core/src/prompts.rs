//! Point/box prompts, the target-scanning grid used during attack
//! optimization, and evaluation prompt sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// A localization hint in pixel coordinates (`x` = column, `y` = row).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prompt {
    Point { x: f64, y: f64 },
    Box { x1: f64, y1: f64, x2: f64, y2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Point,
    Box,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Point => "point",
            PromptKind::Box => "box",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(PromptKind::Point),
            "box" => Ok(PromptKind::Box),
            other => Err(Error::Config(format!("unknown prompt kind `{other}`"))),
        }
    }
}

impl Prompt {
    pub fn kind(&self) -> PromptKind {
        match self {
            Prompt::Point { .. } => PromptKind::Point,
            Prompt::Box { .. } => PromptKind::Box,
        }
    }

    /// Number of embedding vectors the prompt encoder emits.
    pub fn arity(&self) -> usize {
        match self {
            Prompt::Point { .. } => 1,
            Prompt::Box { .. } => 2,
        }
    }

    /// Checks the coordinates against an `height x width` frame. Boxes may
    /// be degenerate (`x1 == x2`) but must be ordered.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let inside = |x: f64, y: f64| (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
        match *self {
            Prompt::Point { x, y } => {
                if !inside(x, y) {
                    return Err(Error::Config(format!(
                        "point ({x}, {y}) outside {width}x{height} frame"
                    )));
                }
            }
            Prompt::Box { x1, y1, x2, y2 } => {
                if !inside(x1, y1) || !inside(x2, y2) {
                    return Err(Error::Config(format!(
                        "box ({x1}, {y1}, {x2}, {y2}) outside {width}x{height} frame"
                    )));
                }
                if x1 > x2 || y1 > y2 {
                    return Err(Error::Config(format!(
                        "box corners unordered: ({x1}, {y1}, {x2}, {y2})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// `sqrt(m) x sqrt(m)` tiling of the frame with one random point prompt per
/// region. Tile boundaries sit at `floor(i * H / sqrt(m))`, so frames that
/// do not divide evenly get tiles differing by at most one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrid {
    pub side: usize,
    pub regions: Vec<Region>,
    pub prompts: Vec<Prompt>,
}

impl ScanGrid {
    pub fn m(&self) -> usize {
        self.regions.len()
    }
}

pub fn scan_targets(height: usize, width: usize, m: usize, seed: u64) -> Result<ScanGrid> {
    if m < 1 {
        return Err(Error::Config("scan region count m must be at least 1".into()));
    }
    let side = (m as f64).sqrt().round() as usize;
    if side * side != m {
        return Err(Error::Config(format!("scan region count {m} is not a perfect square")));
    }
    if side > height.min(width) {
        return Err(Error::Config(format!(
            "{m} regions cannot tile a {width}x{height} frame"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regions = Vec::with_capacity(m);
    let mut prompts = Vec::with_capacity(m);
    for row in 0..side {
        let (y0, y1) = (row * height / side, (row + 1) * height / side);
        for col in 0..side {
            let (x0, x1) = (col * width / side, (col + 1) * width / side);
            regions.push(Region { x0, y0, x1, y1 });
            prompts.push(Prompt::Point {
                x: rng.gen_range(x0..x1) as f64,
                y: rng.gen_range(y0..y1) as f64,
            });
        }
    }
    Ok(ScanGrid {
        side,
        regions,
        prompts,
    })
}

/// Seed for the `index`-th evaluation prompt. Offsetting by 10000 keeps
/// evaluation prompts disjoint from the optimization seed stream.
pub fn eval_prompt_seed(optimization_seed: u64, index: u64) -> u64 {
    optimization_seed + 10_000 + index
}

/// Samples `count` prompts of `kind` from a ground-truth mask.
///
/// Points are distinct foreground pixels drawn sequentially (a partial
/// Fisher-Yates shuffle), so the first `k` of a larger draw equal a draw of
/// `k` with the same seed. Boxes are the tight bounding box with every
/// coordinate jittered by up to 10% of the box extent, clipped to the frame.
pub fn sample_eval_prompts(mask: &Mask, kind: PromptKind, count: usize, seed: u64) -> Result<Vec<Prompt>> {
    let fg = mask.foreground_pixels();
    if fg.is_empty() {
        return Err(Error::Config("cannot sample prompts from an empty mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        PromptKind::Point => {
            if count > fg.len() {
                return Err(Error::Config(format!(
                    "{count} distinct points requested but mask has {} foreground pixels",
                    fg.len()
                )));
            }
            let mut pool = fg;
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
                let (x, y) = pool[i];
                out.push(Prompt::Point {
                    x: x as f64,
                    y: y as f64,
                });
            }
            Ok(out)
        }
        PromptKind::Box => {
            let (bx1, by1, bx2, by2) = mask.bounding_box().expect("non-empty mask");
            let (bw, bh) = ((bx2 - bx1 + 1) as f64, (by2 - by1 + 1) as f64);
            let (wmax, hmax) = ((mask.width() - 1) as f64, (mask.height() - 1) as f64);
            let mut jitter = |v: usize, extent: f64, hi: f64| {
                let d = rng.gen_range(-0.1..=0.1) * extent;
                (v as f64 + d).round().clamp(0.0, hi)
            };
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let x1 = jitter(bx1, bw, wmax);
                let y1 = jitter(by1, bh, hmax);
                let x2 = jitter(bx2, bw, wmax);
                let y2 = jitter(by2, bh, hmax);
                out.push(Prompt::Box {
                    x1: x1.min(x2),
                    y1: y1.min(y2),
                    x2: x1.max(x2),
                    y2: y1.max(y2),
                });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_regions_on_64_frame() {
        let g = scan_targets(64, 64, 4, 123).unwrap();
        assert_eq!(g.regions.len(), 4);
        for r in &g.regions {
            assert_eq!((r.x1 - r.x0, r.y1 - r.y0), (32, 32));
        }
    }

    #[test]
    fn prompts_lie_in_their_regions() {
        for seed in 0..5 {
            let g = scan_targets(64, 48, 256, seed).unwrap();
            for (r, p) in g.regions.iter().zip(&g.prompts) {
                let Prompt::Point { x, y } = *p else { panic!() };
                assert!(r.contains(x, y));
                p.validate(64, 48).unwrap();
            }
        }
    }

    #[test]
    fn bad_region_counts_are_errors() {
        assert!(scan_targets(64, 64, 0, 1).is_err());
        assert!(scan_targets(64, 64, 8, 1).is_err());
    }

    #[test]
    fn scan_is_deterministic() {
        assert_eq!(scan_targets(64, 64, 256, 30).unwrap(), scan_targets(64, 64, 256, 30).unwrap());
    }

    #[test]
    fn full_frame_mask_point_is_in_bounds() {
        let m = Mask::from_fn(10, 12, |_, _| true);
        let p = sample_eval_prompts(&m, PromptKind::Point, 1, 4).unwrap();
        p[0].validate(10, 12).unwrap();
    }

    #[test]
    fn points_land_on_foreground() {
        let m = Mask::from_fn(32, 32, |y, x| (x as i32 - 16).pow(2) + (y as i32 - 12).pow(2) < 30);
        for seed in 0..5 {
            let ps = sample_eval_prompts(&m, PromptKind::Point, 1, eval_prompt_seed(30, seed)).unwrap();
            let Prompt::Point { x, y } = ps[0] else { panic!() };
            assert!(m.get(y as usize, x as usize));
        }
        let five = sample_eval_prompts(&m, PromptKind::Point, 5, 9).unwrap();
        assert_eq!(five.len(), 5);
        let one = sample_eval_prompts(&m, PromptKind::Point, 1, 9).unwrap();
        assert_eq!(one[0], five[0]);
    }

    #[test]
    fn box_covers_circle_bounds_within_jitter() {
        let (cx, cy, r) = (32.0, 32.0, 10.0);
        let m = Mask::from_fn(64, 64, |y, x| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            dx * dx + dy * dy <= r * r
        });
        // Analytic bounding box of the rasterized disk.
        let (lo, hi) = ((cx - r).floor(), (cx + r).ceil() - 1.0);
        let tol = 0.1 * (hi - lo + 1.0) + 0.5;
        for seed in 0..20 {
            let b = sample_eval_prompts(&m, PromptKind::Box, 1, seed).unwrap();
            let Prompt::Box { x1, y1, x2, y2 } = b[0] else { panic!() };
            assert!(x1 <= lo + tol && y1 <= lo + tol);
            assert!(x2 >= hi - tol && y2 >= hi - tol);
            b[0].validate(64, 64).unwrap();
        }
    }

    #[test]
    fn empty_mask_and_too_many_points_are_errors() {
        assert!(sample_eval_prompts(&Mask::empty(4, 4), PromptKind::Point, 1, 0).is_err());
        let m = Mask::from_fn(4, 4, |y, x| x == 0 && y == 0);
        assert!(sample_eval_prompts(&m, PromptKind::Point, 2, 0).is_err());
    }

    #[test]
    fn json_shape() {
        let p = Prompt::Point { x: 3.0, y: 4.0 };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"kind":"point","x":3.0,"y":4.0}"#);
        let b: Prompt = serde_json::from_str(r#"{"kind":"box","x1":1,"y1":2,"x2":3,"y2":4}"#).unwrap();
        assert_eq!(b, Prompt::Box { x1: 1.0, y1: 2.0, x2: 3.0, y2: 4.0 });
    }
}
