//! Scan preprocessing: max-normalization, gamma correction, 16→8-bit
//! conversion and bicubic resizing to the square network input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{Augmentation, Grid, ProcessedImage, RawScan, ResizeMode, INPUT_SIDE};

pub const DEFAULT_GAMMA: f64 = 0.7;

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub gamma: f64,
    pub target: usize,
    pub mode: ResizeMode,
    pub pad_value: u8,
    /// Must be set to use a `target` other than [`INPUT_SIDE`].
    pub allow_target_override: bool,
}

impl PreprocessConfig {
    pub fn new(mode: ResizeMode) -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            target: INPUT_SIDE,
            mode,
            pad_value: 0,
            allow_target_override: false,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_target_override(mut self, target: usize) -> Self {
        self.target = target;
        self.allow_target_override = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.target != INPUT_SIDE && !self.allow_target_override {
            return Err(Error::InvalidConfig(format!(
                "target {} differs from {INPUT_SIDE} without explicit override",
                self.target
            )));
        }
        if self.target == 0 {
            return Err(Error::InvalidConfig("target must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(p / max)^gamma` for every pixel. The maximum maps to exactly 1.0.
pub fn normalize_and_gamma(scan: &RawScan, gamma: f64) -> Grid<f64> {
    let max = scan.max_value() as f64;
    let data = scan
        .pixels()
        .iter()
        .map(|&p| (p as f64 / max).powf(gamma))
        .collect();
    Grid {
        width: scan.width(),
        height: scan.height(),
        data,
    }
}

/// The same transform in flowchart order: gamma first, then division by
/// the maximum of the gamma-corrected values.
pub fn gamma_then_normalize(scan: &RawScan, gamma: f64) -> Grid<f64> {
    let corrected: Vec<f64> = scan.pixels().iter().map(|&p| (p as f64).powf(gamma)).collect();
    let max = corrected.iter().copied().fold(0.0_f64, f64::max);
    Grid {
        width: scan.width(),
        height: scan.height(),
        data: corrected.into_iter().map(|v| v / max).collect(),
    }
}

/// `round(v * 255)` with round-half-away-from-zero; values are clamped to
/// [0, 1] first to absorb accumulated rounding.
pub fn quantize_8bit(grid: &Grid<f64>) -> Grid<u8> {
    Grid {
        width: grid.width,
        height: grid.height,
        data: grid
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four clamped source indices and weights for one output coordinate.
#[derive(Debug, Clone, Copy)]
struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let ratio = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    (0..dst_len)
        .map(|d| {
            let src = (d as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let mut index = [0usize; 4];
            for (k, slot) in index.iter_mut().enumerate() {
                *slot = (base - 1 + k as isize).clamp(0, last) as usize;
            }
            Taps {
                index,
                weight: [
                    keys_kernel(t + 1.0),
                    keys_kernel(t),
                    keys_kernel(1.0 - t),
                    keys_kernel(2.0 - t),
                ],
            }
        })
        .collect()
}

/// Separable bicubic resize (Keys, half-pixel centers, clamp-to-edge).
pub fn resize_bicubic(grid: &Grid<u8>, out_w: usize, out_h: usize) -> Result<Grid<u8>> {
    if grid.width == 0 || grid.height == 0 {
        return Err(Error::InvalidImage(format!(
            "empty bicubic source {}x{}",
            grid.width, grid.height
        )));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidImage(format!("zero output size {out_w}x{out_h}")));
    }
    let xt = taps(grid.width, out_w);
    let yt = taps(grid.height, out_h);

    // horizontal pass: height x out_w
    let mut tmp = vec![0.0_f64; grid.height * out_w];
    for y in 0..grid.height {
        let row = grid.row(y);
        let out = &mut tmp[y * out_w..(y + 1) * out_w];
        for (o, t) in out.iter_mut().zip(&xt) {
            *o = t.weight[0] * row[t.index[0]] as f64
                + t.weight[1] * row[t.index[1]] as f64
                + t.weight[2] * row[t.index[2]] as f64
                + t.weight[3] * row[t.index[3]] as f64;
        }
    }

    let mut data = vec![0u8; out_w * out_h];
    for (y, t) in yt.iter().enumerate() {
        let rows = t.index.map(|i| &tmp[i * out_w..(i + 1) * out_w]);
        let out = &mut data[y * out_w..(y + 1) * out_w];
        for (x, o) in out.iter_mut().enumerate() {
            let v = t.weight[0] * rows[0][x]
                + t.weight[1] * rows[1][x]
                + t.weight[2] * rows[2][x]
                + t.weight[3] * rows[3][x];
            *o = v.clamp(0.0, 255.0).round() as u8;
        }
    }
    Grid::new(out_w, out_h, data)
}

/// Content size and top-left offset of the aspect-preserving resize.
pub fn scale_geometry(width: usize, height: usize, target: usize) -> (usize, usize, usize, usize) {
    let f = target as f64 / width.max(height) as f64;
    let w = ((width as f64 * f).round() as usize).clamp(1, target);
    let h = ((height as f64 * f).round() as usize).clamp(1, target);
    let left = (target - w) / 2;
    let top = (target - h) / 2;
    (w, h, left, top)
}

/// Full chain: normalize → gamma → 8-bit → resize.
pub fn to_network_input(scan: &RawScan, cfg: &PreprocessConfig) -> Result<ProcessedImage> {
    cfg.validate()?;
    let eight_bit = quantize_8bit(&normalize_and_gamma(scan, cfg.gamma));
    let side = cfg.target;
    let pixels = match cfg.mode {
        ResizeMode::Shrink => resize_bicubic(&eight_bit, side, side)?.data,
        ResizeMode::Scale => {
            let (w, h, left, top) = scale_geometry(scan.width(), scan.height(), side);
            let content = resize_bicubic(&eight_bit, w, h)?;
            let mut canvas = vec![cfg.pad_value; side * side];
            for y in 0..h {
                let dst = (top + y) * side + left;
                canvas[dst..dst + w].copy_from_slice(content.row(y));
            }
            canvas
        }
    };
    ProcessedImage::with_side(side, pixels, cfg.mode, scan.id(), Augmentation::None)
}
