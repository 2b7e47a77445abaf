//! Training-time augmentation: random resized crop, flips, normalization.

use rand::Rng;

use super::image::{normalize, to_unit};
use crate::tensor::{resize_planes, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub size: usize,
    /// Crop area as a fraction of the image area.
    pub scale: (f64, f64),
    /// Crop aspect ratio `w/h`, sampled log-uniformly.
    pub ratio: (f64, f64),
    pub hflip: f64,
    pub vflip: f64,
}

impl AugmentConfig {
    pub fn new(size: usize) -> Self {
        Self { size, scale: (0.7, 1.0), ratio: (0.85, 1.15), hflip: 0.5, vflip: 0.3 }
    }
}

pub const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn area_fraction(&self, h: usize, w: usize) -> f64 {
        (self.height * self.width) as f64 / (h * w) as f64
    }
}

/// Samples a crop whose realized area fraction and aspect lie in the
/// configured ranges; after [`CROP_ATTEMPTS`] failures falls back to the
/// largest centered crop with admissible aspect.
pub fn sample_crop(h: usize, w: usize, rng: &mut impl Rng, cfg: &AugmentConfig) -> CropBox {
    let area = (h * w) as f64;
    let (lr0, lr1) = (cfg.ratio.0.ln(), cfg.ratio.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.random_range(cfg.scale.0..=cfg.scale.1);
        let r = rng.random_range(lr0..=lr1).exp();
        let cw = (target * r).sqrt().round() as usize;
        let ch = (target / r).sqrt().round() as usize;
        if cw == 0 || ch == 0 || cw > w || ch > h {
            continue;
        }
        let frac = (cw * ch) as f64 / area;
        if frac < cfg.scale.0 || frac > cfg.scale.1 {
            continue;
        }
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        return CropBox { top, left, height: ch, width: cw };
    }
    let in_ratio = w as f64 / h as f64;
    let (cw, ch) = if in_ratio < cfg.ratio.0 {
        (w, ((w as f64 / cfg.ratio.0).round() as usize).clamp(1, h))
    } else if in_ratio > cfg.ratio.1 {
        (((h as f64 * cfg.ratio.1).round() as usize).clamp(1, w), h)
    } else {
        (w, h)
    };
    CropBox { top: (h - ch) / 2, left: (w - cw) / 2, height: ch, width: cw }
}

fn crop_resize<T: Scalar>(img: &Tensor<u8>, b: CropBox, size: usize) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut crop = Vec::with_capacity(3 * b.height * b.width);
    for c in 0..3 {
        for y in b.top..b.top + b.height {
            let row = &img.data()[(c * h + y) * w + b.left..][..b.width];
            crop.extend(row.iter().map(|&v| T::from_f64(v as f64 / 255.0)));
        }
    }
    let out = if (b.height, b.width) == (size, size) {
        crop
    } else {
        resize_planes(&crop, 3, b.height, b.width, size, size)
    };
    Tensor::new(&[3, size, size], out).expect("crop_resize: 3 planes")
}

fn flip_horizontal<T: Copy>(t: &mut Tensor<T>) {
    let w = t.shape()[2];
    t.data_mut().chunks_mut(w).for_each(<[T]>::reverse);
}

fn flip_vertical<T: Copy>(t: &mut Tensor<T>) {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    for plane in t.data_mut().chunks_mut(h * w) {
        for y in 0..h / 2 {
            let (a, b) = plane.split_at_mut((h - 1 - y) * w);
            a[y * w..][..w].swap_with_slice(&mut b[..w]);
        }
    }
}

/// Random resized crop → horizontal flip → vertical flip → normalization.
pub fn augment_train<T: Scalar>(img: &Tensor<u8>, rng: &mut impl Rng, cfg: &AugmentConfig) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let b = sample_crop(h, w, rng, cfg);
    let mut out = crop_resize(img, b, cfg.size);
    let (hf, vf) = (rng.random_bool(cfg.hflip), rng.random_bool(cfg.vflip));
    if hf {
        flip_horizontal(&mut out);
    }
    if vf {
        flip_vertical(&mut out);
    }
    normalize(&mut out);
    out
}

/// Deterministic validation transform: resize the full image and normalize.
pub fn eval_transform<T: Scalar>(img: &Tensor<u8>, size: usize) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = if (h, w) == (size, size) {
        to_unit(img)
    } else {
        crop_resize(img, CropBox { top: 0, left: 0, height: h, width: w }, size)
    };
    normalize(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    #[test]
    fn flips_are_involutions() {
        let t = Tensor::from_fn(&[3, 3, 4], |i| i as u32);
        let mut a = t.clone();
        flip_horizontal(&mut a);
        assert_eq!(a.data()[..4], [3, 2, 1, 0]);
        flip_horizontal(&mut a);
        assert_eq!(a, t);
        let mut b = t.clone();
        flip_vertical(&mut b);
        assert_eq!(b.data()[..4], [8, 9, 10, 11]);
        flip_vertical(&mut b);
        assert_eq!(b, t);
    }

    #[test]
    fn degenerate_ranges_reduce_to_eval_path() {
        let img = Tensor::from_fn(&[3, 20, 20], |i| (i * 7 % 251) as u8);
        let cfg = AugmentConfig { size: 12, scale: (1.0, 1.0), ratio: (1.0, 1.0), hflip: 0.0, vflip: 0.0 };
        let mut rng = derive_rng(3, "aug", &[]);
        let a: Tensor<f64> = augment_train(&img, &mut rng, &cfg);
        assert_eq!(a, eval_transform(&img, 12));
    }

    #[test]
    fn fallback_is_centered() {
        let cfg = AugmentConfig { size: 8, scale: (0.7, 1.0), ratio: (0.85, 1.15), hflip: 0.0, vflip: 0.0 };
        // 1×40 strip: no admissible crop exists, the fallback clamps the aspect.
        let b = sample_crop(1, 40, &mut derive_rng(0, "c", &[]), &cfg);
        assert_eq!((b.height, b.width), (1, 1));
        assert_eq!(b.left, 19);
    }
}
