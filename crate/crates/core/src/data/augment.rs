//! Stochastic training-time augmentation for image samples.
//!
//! Augmentation applies, in order: zero-pad + random crop, horizontal flip,
//! small random rotation (nearest-neighbour, zero fill), and a brightness
//! multiplier. Non-image samples (rank != 3) pass through unchanged so a
//! single training loop serves both vector and image datasets.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Zero padding (pixels) added on every side before a random crop back
    /// to the original size. 0 disables the crop jitter.
    pub crop_pad: usize,
    /// Rotation angle is drawn uniformly from [-rotation_range, +rotation_range]
    /// degrees. 0 disables rotation.
    pub rotation_range: f64,
    /// Brightness multiplier range [lo, hi]; (1.0, 1.0) disables it.
    pub brightness: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            crop_pad: 2,
            rotation_range: 30.0,
            brightness: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment` is the identity map.
    pub fn disabled() -> Self {
        AugmentConfig { hflip_prob: 0.0, crop_pad: 0, rotation_range: 0.0, brightness: (1.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::ScanError;
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(ScanError::config(format!(
                "hflip_prob must be in [0, 1], got {}",
                self.hflip_prob
            )));
        }
        if self.rotation_range < 0.0 {
            return Err(ScanError::config(format!(
                "rotation_range must be >= 0, got {}",
                self.rotation_range
            )));
        }
        let (lo, hi) = self.brightness;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
            return Err(ScanError::config(format!(
                "brightness range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Applies the configured augmentations to one `(C, H, W)` sample. Samples of
/// any other rank are returned unchanged.
pub fn augment(sample: &Tensor, cfg: &AugmentConfig, rng: &mut SeededRng) -> Tensor {
    if sample.shape().len() != 3 {
        return sample.clone();
    }
    let mut out = sample.clone();
    if cfg.crop_pad > 0 {
        let max = 2 * cfg.crop_pad;
        let dy = rng.index(max + 1);
        let dx = rng.index(max + 1);
        out = pad_crop(&out, cfg.crop_pad, dy, dx);
    }
    if cfg.hflip_prob > 0.0 && rng.bool(cfg.hflip_prob) {
        out = hflip(&out);
    }
    if cfg.rotation_range > 0.0 {
        let deg = rng.uniform_range(-cfg.rotation_range, cfg.rotation_range);
        out = rotate_nn(&out, deg);
    }
    let (lo, hi) = cfg.brightness;
    if lo != 1.0 || hi != 1.0 {
        let scale = if lo == hi { lo } else { rng.uniform_range(lo, hi) };
        out = out.map(|v| v * scale);
    }
    out
}

/// Zero-pads by `pad` on all sides, then crops the original size back out at
/// offset `(dy, dx)` from the padded top-left corner.
fn pad_crop(t: &Tensor, pad: usize, dy: usize, dx: usize) -> Tensor {
    let (c, h, w) = dims3(t);
    debug_assert!(dy <= 2 * pad && dx <= 2 * pad);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // Position in the padded canvas, mapped back to the source.
                let sy = (y + dy) as isize - pad as isize;
                let sx = (x + dx) as isize - pad as isize;
                if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w {
                    out[(ch * h + y) * w + x] = t.data()[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], out).expect("same element count")
}

fn hflip(t: &Tensor) -> Tensor {
    let (c, h, w) = dims3(t);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = t.data()[(ch * h + y) * w + (w - 1 - x)];
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], out).expect("same element count")
}

/// Rotates about the image centre by `deg` degrees with nearest-neighbour
/// sampling; source positions that fall outside the image read as zero.
fn rotate_nn(t: &Tensor, deg: f64) -> Tensor {
    let (c, h, w) = dims3(t);
    let theta = deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // Inverse-rotate the output pixel back into the source frame.
                let ry = y as f64 - cy;
                let rx = x as f64 - cx;
                let sy = (cos * ry + sin * rx + cy).round();
                let sx = (-sin * ry + cos * rx + cx).round();
                if sy >= 0.0 && sy < h as f64 && sx >= 0.0 && sx < w as f64 {
                    out[(ch * h + y) * w + x] =
                        t.data()[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Tensor::from_vec(vec![c, h, w], out).expect("same element count")
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}
