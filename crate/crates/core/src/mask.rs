use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary `H x W` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Mask as `0.0 / 1.0` values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Foreground pixel coordinates as `(x, y)` in row-major order.
    pub fn foreground_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Tight bounding box `(x1, y1, x2, y2)` of the foreground, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let px = self.foreground_pixels();
        if px.is_empty() {
            return None;
        }
        let x1 = px.iter().map(|p| p.0).min().unwrap();
        let x2 = px.iter().map(|p| p.0).max().unwrap();
        let y1 = px.iter().map(|p| p.1).min().unwrap();
        let y2 = px.iter().map(|p| p.1).max().unwrap();
        Some((x1, y1, x2, y2))
    }

    /// Intersection over union; 1 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "iou of {}x{} and {}x{} masks",
                self.height, self.width, other.height, other.width
            )));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}
