//! 8-bit RGB images and bilinear resampling.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    /// H×W×3, row-major.
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!("empty image {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Validation(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Image::new(height, width, pixels)
    }

    /// Decodes a PNG or JPEG file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = ::image::open(path).map_err(|e| match e {
            ::image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(h as usize, w as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ::image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// A deterministic textured image: smooth color gradients plus
    /// per-pixel noise, keyed by `seed`.
    pub fn procedural(height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let base: [f32; 3] = [r.random(), r.random(), r.random()];
        let fx: [f32; 3] = [r.random_range(0.5..3.0), r.random_range(0.5..3.0), r.random_range(0.5..3.0)];
        let fy: [f32; 3] = [r.random_range(0.5..3.0), r.random_range(0.5..3.0), r.random_range(0.5..3.0)];
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let u = x as f32 / width as f32;
                let v = y as f32 / height as f32;
                for c in 0..3 {
                    let wave = (std::f32::consts::TAU * (fx[c] * u + fy[c] * v + base[c])).sin();
                    let noise: f32 = r.random_range(-0.1..0.1);
                    let val = (0.5 + 0.4 * wave + noise).clamp(0.0, 1.0);
                    pixels.push((val * 255.0).round() as u8);
                }
            }
        }
        Image::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel values as f32 in [0, 255].
    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| f32::from(p)).collect()
    }

    /// `[H, W, 3]` tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("image tensor is valid")
    }

    /// Inverse of [`Image::to_tensor`], quantizing with round-half-to-even.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w, 3] => {
                let px = t.data().iter().map(|&v| quantize(v * 255.0)).collect();
                Image::new(*h, *w, px)
            }
            other => Err(Error::Dimension(format!("expected [H, W, 3], got {other:?}"))),
        }
    }

    pub(crate) fn from_f32(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        Image::new(height, width, values.iter().map(|&v| quantize(v)).collect())
    }
}

/// Round-half-to-even into [0, 255].
pub fn quantize(v: f32) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// A rectangular window of a source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    // exact when a == b, so constant regions stay constant
    a + (b - a) * t
}

/// Source sample positions for half-pixel-center resampling of `src` pixels
/// onto `dst` pixels: `(index0, index1, weight of index1)`.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|i| {
            let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f32)
        })
        .collect()
}

/// Bilinear resampling of a window of an interleaved `[H, W, C]` f32 buffer
/// with half-pixel centers.
pub(crate) fn resample_window(
    src: &[f32],
    src_width: usize,
    channels: usize,
    win: Window,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let ys = taps(win.height, out_h);
    let xs = taps(win.width, out_w);
    let at = |y: usize, x: usize, c: usize| src[((win.top + y) * src_width + win.left + x) * channels + c];
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..channels {
                let top = lerp(at(y0, x0, c), at(y0, x1, c), tx);
                let bottom = lerp(at(y1, x0, c), at(y1, x1, c), tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    out
}

/// Unquantized bilinear resize; values stay in [0, 255].
pub fn resize_bilinear_f32(img: &Image, h: usize, w: usize) -> Result<Vec<f32>> {
    if h == 0 || w == 0 {
        return Err(Error::Parameter(format!("resize target {h}x{w} must be at least 1x1")));
    }
    let win = Window {
        top: 0,
        left: 0,
        height: img.height,
        width: img.width,
    };
    Ok(resample_window(&img.to_f32(), img.width, 3, win, h, w))
}

/// Bilinear resize with half-pixel centers, f32 accumulation and
/// round-half-to-even quantization.
pub fn resize_bilinear(img: &Image, h: usize, w: usize) -> Result<Image> {
    let values = resize_bilinear_f32(img, h, w)?;
    Image::from_f32(h, w, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Image {
        // rows [[0, 0], [255, 255]] in every channel
        Image::new(2, 2, [0u8; 6].into_iter().chain([255u8; 6]).collect()).unwrap()
    }

    #[test]
    fn identity_resize() {
        let img = Image::procedural(16, 16, 4).unwrap();
        assert_eq!(resize_bilinear(&img, 16, 16).unwrap(), img);
    }

    #[test]
    fn half_pixel_centers_average_rows() {
        let values = resize_bilinear_f32(&two_by_two(), 1, 2).unwrap();
        assert_eq!(values, vec![127.5; 6]);
        // 127.5 rounds to the even neighbour
        let q = resize_bilinear(&two_by_two(), 1, 2).unwrap();
        assert!(q.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn quantize_ties_to_even() {
        assert_eq!(quantize(126.5), 126);
        assert_eq!(quantize(127.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(7, 11, [13, 200, 77]).unwrap();
        for (h, w) in [(1, 1), (3, 5), (16, 16), (29, 4)] {
            let out = resize_bilinear(&img, h, w).unwrap();
            assert!(out.pixels().chunks(3).all(|p| p == [13, 200, 77]));
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize_bilinear(&two_by_two(), 0, 3).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let img = Image::procedural(9, 12, 1).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[9, 12, 3]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::procedural(10, 8, 2).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::open(&path).unwrap(), img);
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = Image::open(&path).unwrap_err();
        assert!(err.to_string().contains("junk.png"), "{err}");
    }
}
