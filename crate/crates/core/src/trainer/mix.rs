use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which mixed-sample augmentation touched a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixMode {
    None,
    MixUp { lambda: f64 },
    /// `lambda` is the realized kept-area fraction.
    CutMix { lambda: f64, top: usize, left: usize, height: usize, width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
}

fn beta(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let d = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    Ok(d.sample(rng))
}

/// `x ← λx + (1−λ)x[perm]`, same for the targets.
pub fn mixup_with<T: Scalar>(images: &mut Tensor<T>, targets: &mut [f64], perm: &[usize], lambda: f64) {
    let b = perm.len();
    let per = images.len() / b;
    let classes = targets.len() / b;
    let (src, ysrc) = (images.clone(), targets.to_vec());
    let (l, r) = (T::from_f64(lambda), T::from_f64(1.0 - lambda));
    let data = images.data_mut();
    for (i, &j) in perm.iter().enumerate() {
        for (d, &s) in data[i * per..][..per].iter_mut().zip(&src.data()[j * per..][..per]) {
            *d = l * *d + r * s;
        }
        for c in 0..classes {
            targets[i * classes + c] = lambda * ysrc[i * classes + c] + (1.0 - lambda) * ysrc[j * classes + c];
        }
    }
}

/// Pastes the box from `x[perm]` into every sample. Returns the kept-area
/// fraction, which also mixes the targets.
pub fn cutmix_with<T: Scalar>(
    images: &mut Tensor<T>,
    targets: &mut [f64],
    perm: &[usize],
    (top, left, height, width): (usize, usize, usize, usize),
) -> f64 {
    let shape = images.shape().to_vec();
    let (b, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let lambda = 1.0 - (height * width) as f64 / (h * w) as f64;
    let classes = targets.len() / b;
    let (src, ysrc) = (images.clone(), targets.to_vec());
    let data = images.data_mut();
    for (i, &j) in perm.iter().enumerate() {
        for c in 0..ch {
            for y in top..top + height {
                let dst = ((i * ch + c) * h + y) * w + left;
                let from = ((j * ch + c) * h + y) * w + left;
                data[dst..dst + width].copy_from_slice(&src.data()[from..from + width]);
            }
        }
        for c in 0..classes {
            targets[i * classes + c] = lambda * ysrc[i * classes + c] + (1.0 - lambda) * ysrc[j * classes + c];
        }
    }
    lambda
}

/// Box with side fraction `sqrt(1 − λ)` centered uniformly, clipped to the image.
pub fn cutmix_box(h: usize, w: usize, lambda: f64, rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    let r = (1.0 - lambda).sqrt();
    let (ch, cw) = ((h as f64 * r) as usize, (w as f64 * r) as usize);
    let cy = rng.random_range(0..h) as isize;
    let cx = rng.random_range(0..w) as isize;
    let clip = |c: isize, half: isize, n: usize| ((c - half).max(0) as usize, ((c + half).min(n as isize)) as usize);
    let (y0, y1) = clip(cy, ch as isize / 2, h);
    let (x0, x1) = clip(cx, cw as isize / 2, w);
    (y0, x0, y1 - y0, x1 - x0)
}

/// One fair coin picks MixUp or CutMix for the whole batch; the partner of
/// each sample comes from a random permutation. Batches of one pass through.
pub fn mix_batch<T: Scalar>(
    images: &mut Tensor<T>,
    targets: &mut [f64],
    rng: &mut impl Rng,
    cfg: &MixConfig,
) -> Result<MixMode> {
    let b = images.shape()[0];
    if b < 2 {
        log::warn!("mix_batch: batch of {b}, passing through");
        return Ok(MixMode::None);
    }
    let use_mixup = rng.random_bool(0.5);
    let lambda = beta(if use_mixup { cfg.mixup_alpha } else { cfg.cutmix_alpha }, rng)?;
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    if use_mixup {
        mixup_with(images, targets, &perm, lambda);
        Ok(MixMode::MixUp { lambda })
    } else {
        let (h, w) = (images.shape()[2], images.shape()[3]);
        let bx = cutmix_box(h, w, lambda, rng);
        let lambda = cutmix_with(images, targets, &perm, bx);
        Ok(MixMode::CutMix { lambda, top: bx.0, left: bx.1, height: bx.2, width: bx.3 })
    }
}
