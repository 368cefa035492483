//! Axis-aligned boxes, column-major run-length masks and IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x}, {y}, {w}, {h}): width/height must be non-negative and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("mask grid is empty ({height}x{width})")]
    EmptyGrid { height: u32, width: u32 },
    #[error("mask pixel buffer has {actual} entries, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("RLE counts sum to {actual}, expected height*width = {expected}")]
    CountsMismatch { expected: u64, actual: u64 },
    #[error("RLE runs {index} and {} are both zero", index + 1)]
    AdjacentZeroRuns { index: usize },
    #[error("mask size mismatch: {a_h}x{a_w} vs {b_h}x{b_w}")]
    SizeMismatch { a_h: u32, a_w: u32, b_h: u32, b_w: u32 },
}

/// Box in COCO layout: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox { x, y, w, h })
        }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    /// `[x1, y1, x2, y2]`.
    pub fn to_corners(&self) -> [f64; 4] {
        [self.x, self.y, self.x + self.w, self.y + self.h]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Clip to the image rectangle `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let [x1, y1, x2, y2] = self.to_corners();
        let x1 = x1.clamp(0.0, width);
        let y1 = y1.clamp(0.0, height);
        let x2 = x2.clamp(0.0, width);
        let y2 = y2.clamp(0.0, height);
        BBox {
            x: x1,
            y: y1,
            w: (x2 - x1).max(0.0),
            h: (y2 - y1).max(0.0),
        }
    }
}

/// Intersection over union on real-valued areas. Zero when the union is empty.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Dense binary grid stored column-major: pixel `(row, col)` lives at `row + height * col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn from_column_major(
        height: u32,
        width: u32,
        pixels: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        let expected = height as usize * width as usize;
        if pixels.len() != expected {
            return Err(GeometryError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(BinaryMask {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(height as usize * width as usize);
        for col in 0..width {
            for row in 0..height {
                pixels.push(f(row, col));
            }
        }
        BinaryMask {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.pixels[row as usize + self.height as usize * col as usize]
    }

    pub fn column_major(&self) -> &[bool] {
        &self.pixels
    }

    pub fn area(&self) -> u64 {
        self.pixels.iter().filter(|&&p| p).count() as u64
    }
}

/// Column-major run-length mask. Even-indexed runs are background, odd-indexed
/// runs foreground; the first run may be zero-length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl RleMask {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, GeometryError> {
        if height == 0 || width == 0 {
            return Err(GeometryError::EmptyGrid { height, width });
        }
        let expected = height as u64 * width as u64;
        let actual: u64 = counts.iter().map(|&c| c as u64).sum();
        if actual != expected {
            return Err(GeometryError::CountsMismatch { expected, actual });
        }
        if let Some(index) = counts
            .windows(2)
            .position(|w| w[0] == 0 && w[1] == 0)
        {
            return Err(GeometryError::AdjacentZeroRuns { index });
        }
        Ok(RleMask {
            height,
            width,
            counts,
        })
    }

    /// All-background mask.
    pub fn empty(height: u32, width: u32) -> Result<Self, GeometryError> {
        Self::new(height, width, vec![height * width])
    }

    /// Filled rectangle. Pixel columns `round(x)..round(x + w)` and rows
    /// `round(y)..round(y + h)` are set, clipped to the image.
    pub fn from_box(b: &BBox, height: u32, width: u32) -> Result<Self, GeometryError> {
        if height == 0 || width == 0 {
            return Err(GeometryError::EmptyGrid { height, width });
        }
        let snap = |v: f64, hi: u32| v.round().clamp(0.0, hi as f64) as u32;
        let (x0, x1) = (snap(b.x, width), snap(b.x + b.w, width));
        let (y0, y1) = (snap(b.y, height), snap(b.y + b.h, height));
        let mut runs = RunBuilder::default();
        if x0 < x1 && y0 < y1 {
            runs.push(false, x0 as u64 * height as u64);
            for _ in x0..x1 {
                runs.push(false, y0 as u64);
                runs.push(true, (y1 - y0) as u64);
                runs.push(false, (height - y1) as u64);
            }
            runs.push(false, (width - x1) as u64 * height as u64);
        } else {
            runs.push(false, height as u64 * width as u64);
        }
        Self::new(height, width, runs.finish())
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

#[derive(Default)]
struct RunBuilder {
    counts: Vec<u32>,
    current: bool,
}

impl RunBuilder {
    fn push(&mut self, value: bool, len: u64) {
        if len == 0 {
            return;
        }
        if self.counts.is_empty() {
            if value {
                self.counts.push(0);
            }
            self.counts.push(len as u32);
        } else if value == self.current {
            *self.counts.last_mut().unwrap() += len as u32;
        } else {
            self.counts.push(len as u32);
        }
        self.current = value;
    }

    fn finish(mut self) -> Vec<u32> {
        if self.counts.is_empty() {
            self.counts.push(0);
        }
        self.counts
    }
}

pub fn rle_encode(mask: &BinaryMask) -> Result<RleMask, GeometryError> {
    if mask.height == 0 || mask.width == 0 {
        return Err(GeometryError::EmptyGrid {
            height: mask.height,
            width: mask.width,
        });
    }
    let mut runs = RunBuilder::default();
    let mut start = 0usize;
    let px = &mask.pixels;
    while start < px.len() {
        let value = px[start];
        let len = px[start..].iter().take_while(|&&p| p == value).count();
        runs.push(value, len as u64);
        start += len;
    }
    RleMask::new(mask.height, mask.width, runs.finish())
}

pub fn rle_decode(rle: &RleMask) -> BinaryMask {
    let mut pixels = Vec::with_capacity(rle.height as usize * rle.width as usize);
    for (i, &c) in rle.counts.iter().enumerate() {
        pixels.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    BinaryMask {
        height: rle.height,
        width: rle.width,
        pixels,
    }
}

/// Foreground intersection and union pixel counts, walking both run streams.
pub fn mask_intersection_union(a: &RleMask, b: &RleMask) -> Result<(u64, u64), GeometryError> {
    if a.height != b.height || a.width != b.width {
        return Err(GeometryError::SizeMismatch {
            a_h: a.height,
            a_w: a.width,
            b_h: b.height,
            b_w: b.width,
        });
    }
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut ra, mut rb) = (a.counts[0] as u64, b.counts[0] as u64);
    let (mut inter, mut union) = (0u64, 0u64);
    loop {
        while ra == 0 {
            ia += 1;
            if ia >= a.counts.len() {
                return Ok((inter, union));
            }
            ra = a.counts[ia] as u64;
        }
        while rb == 0 {
            ib += 1;
            if ib >= b.counts.len() {
                return Ok((inter, union));
            }
            rb = b.counts[ib] as u64;
        }
        let step = ra.min(rb);
        let (fa, fb) = (ia % 2 == 1, ib % 2 == 1);
        if fa && fb {
            inter += step;
        }
        if fa || fb {
            union += step;
        }
        ra -= step;
        rb -= step;
    }
}

/// Mask IoU. Two empty masks score 1.0; empty against non-empty scores 0.0.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64, GeometryError> {
    let (inter, union) = mask_intersection_union(a, b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
