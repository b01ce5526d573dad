//! Inpainting masks drawn by a simulated eraser.
//!
//! A stroke drops a disk-shaped brush at a random point, then sweeps it back
//! and forth: each segment travels a random distance, and at the end the
//! brush turns around with a small random deflection. Disks are stamped
//! every `step` pixels along the path, and the brush centre is kept far
//! enough from the border that every disk lies inside the image.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deflection, in radians, applied when the brush reverses.
const REVERSAL_JITTER: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    /// 1 = region to inpaint, 0 = keep.
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    /// Marks the integer-centred disk of radius `r`; returns newly set pixels.
    fn stamp_disk(&mut self, cy: i64, cx: i64, r: i64) -> usize {
        let mut added = 0;
        for y in (cy - r).max(0)..=(cy + r).min(self.height as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(self.width as i64 - 1) {
                let (dy, dx) = (y - cy, x - cx);
                if dy * dy + dx * dx <= r * r {
                    let b = &mut self.bits[y as usize * self.width + x as usize];
                    if *b == 0 {
                        *b = 1;
                        added += 1;
                    }
                }
            }
        }
        added
    }

    fn disk_gain(&self, cy: i64, cx: i64, r: i64) -> usize {
        let mut gain = 0;
        for y in (cy - r).max(0)..=(cy + r).min(self.height as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(self.width as i64 - 1) {
                let (dy, dx) = (y - cy, x - cx);
                if dy * dy + dx * dx <= r * r && self.bits[y as usize * self.width + x as usize] == 0
                {
                    gain += 1;
                }
            }
        }
        gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrushParams {
    pub radius_range: [usize; 2],
    pub stroke_count_range: [usize; 2],
    pub segment_count_range: [usize; 2],
    /// Brush advance per stamp, pixels.
    pub step: usize,
    pub target_coverage: [f64; 2],
    pub seed: u64,
}

impl Default for BrushParams {
    fn default() -> Self {
        Self {
            radius_range: [8, 48],
            stroke_count_range: [1, 4],
            segment_count_range: [3, 12],
            step: 2,
            target_coverage: [0.05, 0.40],
            seed: 0,
        }
    }
}

impl BrushParams {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("radius_range", self.radius_range),
            ("stroke_count_range", self.stroke_count_range),
            ("segment_count_range", self.segment_count_range),
        ] {
            if lo > hi {
                return Err(Error::param(format!("{name} min {lo} exceeds max {hi}")));
            }
        }
        if self.radius_range[0] == 0 {
            return Err(Error::param("brush radius must be >= 1"));
        }
        if self.step == 0 {
            return Err(Error::param("brush step must be >= 1"));
        }
        let [cmin, cmax] = self.target_coverage;
        if !(cmin > 0.0 && cmin <= cmax && cmax < 1.0) {
            return Err(Error::param(format!(
                "target coverage [{cmin}, {cmax}] must satisfy 0 < min <= max < 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrushMask {
    pub mask: BinaryMask,
    pub strokes: usize,
    pub coverage: f64,
    /// False when the stroke budget ran out before coverage reached the
    /// target interval.
    pub reached_target: bool,
}

/// Draws a seeded brush mask of `h`×`w` pixels.
///
/// At least `stroke_count_range[0]` strokes are drawn, and more are added
/// (up to the range maximum) while coverage is below the target minimum.
/// A stamp that would push coverage past the target maximum ends its stroke.
pub fn gen_brush_mask(h: usize, w: usize, p: &BrushParams) -> Result<BrushMask> {
    p.validate()?;
    let rmax = p.radius_range[1];
    if h < 2 * rmax + 1 || w < 2 * rmax + 1 {
        return Err(Error::param(format!(
            "mask {w}x{h} too small for brush radius {rmax}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut mask = BinaryMask::zeros(w, h);
    let total = (w * h) as f64;
    let max_ones = (p.target_coverage[1] * total).floor() as usize;
    let min_ones = (p.target_coverage[0] * total).ceil() as usize;
    let mut ones = 0usize;
    let mut strokes = 0;

    while strokes < p.stroke_count_range[1]
        && (strokes < p.stroke_count_range[0] || ones < min_ones)
    {
        strokes += 1;
        let r = rng.random_range(p.radius_range[0]..=p.radius_range[1]);
        let (lo_y, hi_y) = (r as f64, (h - 1 - r) as f64);
        let (lo_x, hi_x) = (r as f64, (w - 1 - r) as f64);
        let mut y = rng.random_range(lo_y..=hi_y);
        let mut x = rng.random_range(lo_x..=hi_x);
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let segments = rng.random_range(p.segment_count_range[0]..=p.segment_count_range[1]);
        let short_side = h.min(w) as f64;
        let seg_lo = r as f64;
        let seg_hi = (0.75 * short_side).max(seg_lo);

        let stamp = |y: f64, x: f64, mask: &mut BinaryMask, ones: &mut usize| -> bool {
            let (cy, cx, ri) = (y.round() as i64, x.round() as i64, r as i64);
            if *ones + mask.disk_gain(cy, cx, ri) > max_ones {
                return false;
            }
            *ones += mask.stamp_disk(cy, cx, ri);
            true
        };

        if !stamp(y, x, &mut mask, &mut ones) {
            continue;
        }
        'stroke: for _ in 0..segments {
            let length = rng.random_range(seg_lo..=seg_hi);
            let steps = (length / p.step as f64).ceil() as usize;
            for _ in 0..steps {
                y = (y + heading.sin() * p.step as f64).clamp(lo_y, hi_y);
                x = (x + heading.cos() * p.step as f64).clamp(lo_x, hi_x);
                if !stamp(y, x, &mut mask, &mut ones) {
                    break 'stroke;
                }
            }
            heading += PI + rng.random_range(-REVERSAL_JITTER..=REVERSAL_JITTER);
        }
    }

    let coverage = ones as f64 / total;
    Ok(BrushMask {
        reached_target: ones >= min_ones && ones <= max_ones,
        mask,
        strokes,
        coverage,
    })
}

/// Single-channel PNG, 0 = keep, 255 = inpaint.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?
        .to_luma8();
    let bits = img
        .as_raw()
        .iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::InvalidData(format!(
                "{}: mask value {other} is neither 0 nor 255",
                path.display()
            ))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(BinaryMask {
        width: img.width() as usize,
        height: img.height() as usize,
        bits,
    })
}
