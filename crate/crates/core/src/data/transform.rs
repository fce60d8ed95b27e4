//! Image transforms on `[H, W, 3]` tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pnm::dims3;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centers: output pixel `o` samples the
/// source at `(o + 0.5)·in/out − 0.5`, clamped to the border pixels.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!("resize to {out_h}x{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |inp: usize, out: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

pub fn crop(img: &Tensor, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    if top + size_h > h || left + size_w > w {
        return Err(Error::Argument(format!(
            "crop {size_h}x{size_w} at ({top}, {left}) exceeds {h}x{w} image"
        )));
    }
    let mut out = Vec::with_capacity(size_h * size_w * c);
    for y in top..top + size_h {
        let row = (y * w + left) * c;
        out.extend_from_slice(&img.data()[row..row + size_w * c]);
    }
    Tensor::new(&[size_h, size_w, c], out)
}

/// Offsets drawn uniformly from `[0, H − size] × [0, W − size]`.
pub fn random_crop_offsets<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if size == 0 || size > h || size > w {
        return Err(Error::Argument(format!("crop {size} from a {h}x{w} image")));
    }
    Ok((rng.random_range(0..=h - size), rng.random_range(0..=w - size)))
}

pub fn random_crop<R: Rng + ?Sized>(img: &Tensor, size: usize, rng: &mut R) -> Result<Tensor> {
    let (h, w, _) = dims3(img)?;
    let (top, left) = random_crop_offsets(h, w, size, rng)?;
    crop(img, top, left, size, size)
}

pub fn center_crop(img: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w, _) = dims3(img)?;
    if size == 0 || size > h || size > w {
        return Err(Error::Argument(format!("crop {size} from a {h}x{w} image")));
    }
    crop(img, (h - size) / 2, (w - size) / 2, size, size)
}

pub fn flip_lr(img: &Tensor) -> Tensor {
    let (h, w, c) = dims3(img).expect("image tensor");
    let mut out = Vec::with_capacity(img.numel());
    for row in img.data().chunks_exact(w * c) {
        for px in row.chunks_exact(c).rev() {
            out.extend_from_slice(px);
        }
    }
    Tensor::new(&[h, w, c], out).expect("same shape")
}

pub fn flip_ud(img: &Tensor) -> Tensor {
    let (h, w, c) = dims3(img).expect("image tensor");
    let mut out = Vec::with_capacity(img.numel());
    for row in img.data().chunks_exact(w * c).rev() {
        out.extend_from_slice(row);
    }
    Tensor::new(&[h, w, c], out).expect("same shape")
}

/// Each flip is applied independently with probability 0.5.
pub fn random_flip<R: Rng + ?Sized>(img: &Tensor, lr: bool, ud: bool, rng: &mut R) -> Tensor {
    let mut out = img.clone();
    if lr && rng.random_bool(0.5) {
        out = flip_lr(&out);
    }
    if ud && rng.random_bool(0.5) {
        out = flip_ud(&out);
    }
    out
}

/// Sampling ranges for photometric jitter. Hue is in turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    pub contrast: [f32; 2],
    pub saturation: [f32; 2],
    pub hue: [f32; 2],
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            contrast: [0.7, 1.3],
            saturation: [0.7, 1.3],
            hue: [-0.05, 0.05],
        }
    }
}

impl JitterConfig {
    pub const IDENTITY: JitterConfig = JitterConfig {
        contrast: [1.0, 1.0],
        saturation: [1.0, 1.0],
        hue: [0.0, 0.0],
    };

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("jitter {name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.contrast[0] < 0.0 || self.saturation[0] < 0.0 {
            return Err(Error::Config("contrast and saturation factors must be >= 0".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Jitter {
        let draw = |rng: &mut R, [lo, hi]: [f32; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        Jitter {
            contrast: draw(rng, self.contrast),
            saturation: draw(rng, self.saturation),
            hue: draw(rng, self.hue),
        }
    }
}

/// One concrete draw of jitter factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Contrast about the image mean, saturation about per-pixel luma, then a
/// hue rotation in HSV. Each stage clamps to `[0, 1]`; identity factors
/// leave the image bitwise unchanged.
pub fn photometric_jitter(img: &Tensor, j: Jitter) -> Result<Tensor> {
    let (_, _, c) = dims3(img)?;
    if c != 3 {
        return Err(Error::Argument(format!("jitter needs RGB, got {c} channels")));
    }
    let mut data = img.data().to_vec();
    if j.contrast != 1.0 {
        let mean = (data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64) as f32;
        data.iter_mut()
            .for_each(|v| *v = (mean + j.contrast * (*v - mean)).clamp(0.0, 1.0));
    }
    if j.saturation != 1.0 {
        for px in data.chunks_exact_mut(3) {
            let y: f32 = px.iter().zip(LUMA).map(|(v, k)| v * k).sum();
            px.iter_mut()
                .for_each(|v| *v = (y + j.saturation * (*v - y)).clamp(0.0, 1.0));
        }
    }
    if j.hue != 0.0 {
        for px in data.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb((h + j.hue).rem_euclid(1.0), s, v);
            px.copy_from_slice(&[r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]);
        }
    }
    Tensor::new(img.shape(), data)
}

/// Hue in turns `[0, 1)`.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h.rem_euclid(1.0) * 6.0).min(6.0 - f32::EPSILON);
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// `(x − mean) / max(std, 1/√numel)` over all elements; moments in f64.
pub fn standardize(img: &Tensor) -> Tensor {
    let n = img.numel() as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let denom = var.sqrt().max(1.0 / n.sqrt());
    img.map(|v| ((v as f64 - mean) / denom) as f32)
}
