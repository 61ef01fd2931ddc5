//! Part-crop sampling and the augmented views used by the baseline attacks.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resample_window, Image, Window};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Smallest side accepted for cropping.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropSpec {
    pub m: usize,
    /// Area fraction range `(s_min, s_max)`.
    pub scale: (f64, f64),
    /// `(height, width)` of each resized crop.
    pub out_size: (usize, usize),
    /// Width/height ratio range, sampled log-uniformly.
    pub aspect: (f64, f64),
    pub seed: u64,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            m: 128,
            scale: (0.08, 0.2),
            out_size: (16, 16),
            aspect: (3.0 / 4.0, 4.0 / 3.0),
            seed: 0,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(format!("crops.{field}"), reason));
        if self.m < 1 {
            return bad("m", format!("crop count must be at least 1, got {}", self.m));
        }
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("scale", format!("need 0 < s_min <= s_max <= 1, got ({lo}, {hi})"));
        }
        let (ah, aw) = self.out_size;
        if ah < 2 || aw < 2 {
            return bad("out_size", format!("must be at least (2, 2), got ({ah}, {aw})"));
        }
        let (amin, amax) = self.aspect;
        if !(amin > 0.0 && amin <= amax && amax.is_finite()) {
            return bad("aspect", format!("need 0 < a_min <= a_max, got ({amin}, {amax})"));
        }
        Ok(())
    }
}

/// Draws one random-resized-crop window: area fraction uniform in `scale`,
/// aspect ratio (width/height) log-uniform in `aspect`, sides rounded and
/// clamped to the image, top-left uniform over valid positions.
pub fn sample_window(h: usize, w: usize, scale: (f64, f64), aspect: (f64, f64), r: &mut Rng) -> Window {
    let u = uniform(r, scale.0, scale.1);
    let area = u * (h * w) as f64;
    let ratio = uniform(r, aspect.0.ln(), aspect.1.ln()).exp();
    let cw = ((area * ratio).sqrt().round() as usize).clamp(1, w);
    let ch = ((area / ratio).sqrt().round() as usize).clamp(1, h);
    let top = r.random_range(0..=h - ch);
    let left = r.random_range(0..=w - cw);
    Window {
        top,
        left,
        height: ch,
        width: cw,
    }
}

fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    // always consume one draw so degenerate ranges keep streams aligned
    let t: f64 = r.random();
    lo + (hi - lo) * t
}

fn check_croppable(img: &Image) -> Result<()> {
    if img.height() < MIN_SIDE || img.width() < MIN_SIDE {
        return Err(Error::Sampling(format!(
            "image {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// The `m` crop windows `sample_crops` would cut, in order.
pub fn sample_crop_windows(img: &Image, spec: &CropSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    check_croppable(img)?;
    let mut r = rng::seeded(spec.seed);
    Ok((0..spec.m)
        .map(|_| sample_window(img.height(), img.width(), spec.scale, spec.aspect, &mut r))
        .collect())
}

/// Cuts `spec.m` random part crops and resizes each to `spec.out_size`.
/// Each returned tensor is `[h, w, 3]` with values in [0, 1].
pub fn sample_crops(img: &Image, spec: &CropSpec) -> Result<Vec<Tensor>> {
    let windows = sample_crop_windows(img, spec)?;
    let src = img.to_f32();
    let (oh, ow) = spec.out_size;
    windows
        .into_iter()
        .map(|win| {
            let values = resample_window(&src, img.width(), 3, win, oh, ow);
            Tensor::new(vec![oh, ow, 3], values.into_iter().map(|v| v / 255.0).collect())
        })
        .collect()
}

/// Augmentation used to build the views for the EncoderMI and
/// variance baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub crop_scale: (f64, f64),
    pub aspect: (f64, f64),
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale: (0.2, 1.0),
            aspect: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            max_rotation_deg: 15.0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale: (1.0, 1.0),
            aspect: (1.0, 1.0),
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
        }
    }
}

pub fn augment_views(img: &Image, n: usize, seed: u64) -> Result<Vec<Image>> {
    augment_views_with(img, n, seed, &AugmentConfig::default())
}

/// `n` views, each a random resized crop back to the original size, an
/// optional horizontal flip and a rotation about the center with black fill.
pub fn augment_views_with(img: &Image, n: usize, seed: u64, cfg: &AugmentConfig) -> Result<Vec<Image>> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 views, got {n}")));
    }
    check_croppable(img)?;
    let (h, w) = (img.height(), img.width());
    let src = img.to_f32();
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let win = sample_window(h, w, cfg.crop_scale, cfg.aspect, &mut r);
            let mut view = resample_window(&src, w, 3, win, h, w);
            if r.random::<f64>() < cfg.flip_prob {
                flip_horizontal(&mut view, h, w);
            }
            let deg = uniform(&mut r, -cfg.max_rotation_deg, cfg.max_rotation_deg);
            let view = rotate(&view, h, w, deg.to_radians());
            Image::from_f32(h, w, &view)
        })
        .collect()
}

fn flip_horizontal(buf: &mut [f32], h: usize, w: usize) {
    for y in 0..h {
        for x in 0..w / 2 {
            for c in 0..3 {
                buf.swap((y * w + x) * 3 + c, (y * w + (w - 1 - x)) * 3 + c);
            }
        }
    }
}

/// Bilinear rotation about the image center; samples outside are black.
fn rotate(buf: &[f32], h: usize, w: usize, theta: f64) -> Vec<f32> {
    if theta == 0.0 {
        return buf.to_vec();
    }
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let fetch = |y: isize, x: isize, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            f64::from(buf[(y as usize * w + x as usize) * 3 + c])
        }
    };
    let mut out = Vec::with_capacity(buf.len());
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse map the destination pixel into the source
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let tx = sx - x0;
            let ty = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let top = fetch(y0, x0, c) * (1.0 - tx) + fetch(y0, x0 + 1, c) * tx;
                let bottom = fetch(y0 + 1, x0, c) * (1.0 - tx) + fetch(y0 + 1, x0 + 1, c) * tx;
                out.push((top * (1.0 - ty) + bottom * ty) as f32);
            }
        }
    }
    out
}
