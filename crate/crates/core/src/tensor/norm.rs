//! Batch normalization (per channel over B·H·W) and channel-wise layer
//! normalization (per pixel over C).

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }
}

fn check_affine<T: Scalar>(op: &'static str, tape: &Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = tape.value(x).dims4()?;
    if tape.shape(gamma) != [c] || tape.shape(beta) != [c] {
        return Err(Error::shape(
            op,
            format!("{c} channels but affine {:?}/{:?}", tape.shape(gamma), tape.shape(beta)),
        ));
    }
    Ok((b, c, h * w))
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization. In training mode batch statistics are used and
    /// `state` is updated as `running ← (1−m)·running + m·batch` (unbiased
    /// batch variance for the running estimate); in eval mode `state` is read.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<T>,
        training: bool,
    ) -> Result<Var> {
        let (b, c, plane) = check_affine("batch_norm", self, x, gamma, beta)?;
        if state.running_mean.shape() != [c] || state.running_var.shape() != [c] {
            return Err(Error::shape("batch_norm", "running statistics do not match channels"));
        }
        let n = b * plane;
        if training && n < 2 {
            return Err(Error::Config(format!(
                "batch_norm: training needs at least 2 values per channel, got {n}"
            )));
        }
        let eps = T::from_f64(BN_EPS);
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        if training {
            let nt = T::from_f64(n as f64);
            let m = T::from_f64(BN_MOMENTUM);
            for ch in 0..c {
                let planes = (0..b).map(|bi| &xv[(bi * c + ch) * plane..][..plane]);
                let mu = planes.clone().flatten().copied().sum::<T>() / nt;
                let var = planes.flatten().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nt;
                mean[ch] = mu;
                inv_std[ch] = T::one() / (var + eps).sqrt();
                let unbiased = var * nt / (nt - T::one());
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = (T::one() - m) * *rm + m * mu;
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = (T::one() - m) * *rv + m * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = state.running_mean.data()[ch];
                inv_std[ch] = T::one() / (state.running_var.data()[ch] + eps).sqrt();
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![T::zero(); xv.len()];
        for (idx, (o, i)) in out.chunks_mut(plane).zip(xv.chunks(plane)).enumerate() {
            let ch = idx % c;
            let scale = gv[ch] * inv_std[ch];
            let shift = bv[ch] - mean[ch] * scale;
            for (o, &i) in o.iter_mut().zip(i) {
                *o = i * scale + shift;
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        self.push("batch_norm", out, &[x, gamma, beta], move |ctx| {
            let dy = ctx.grad.data();
            let xv = ctx.value(x).data();
            let gv = ctx.value(gamma).data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (idx, (g, i)) in dy.chunks(plane).zip(xv.chunks(plane)).enumerate() {
                let ch = idx % c;
                let (mu, inv) = (mean[ch], inv_std[ch]);
                dbeta[ch] = dbeta[ch] + g.iter().copied().sum::<T>();
                dgamma[ch] = dgamma[ch] + g.iter().zip(i).map(|(&g, &v)| g * (v - mu) * inv).sum::<T>();
            }
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); xv.len()];
                let nt = T::from_f64(n as f64);
                for (idx, ((d, g), i)) in dx.chunks_mut(plane).zip(dy.chunks(plane)).zip(xv.chunks(plane)).enumerate() {
                    let ch = idx % c;
                    let (mu, inv) = (mean[ch], inv_std[ch]);
                    if training {
                        let k = gv[ch] * inv / nt;
                        for ((d, &g), &v) in d.iter_mut().zip(g).zip(i) {
                            let xhat = (v - mu) * inv;
                            *d = k * (nt * g - dbeta[ch] - xhat * dgamma[ch]);
                        }
                    } else {
                        let k = gv[ch] * inv;
                        for (d, &g) in d.iter_mut().zip(g) {
                            *d = k * g;
                        }
                    }
                }
                Tensor::new(ctx.value(x).shape(), dx).expect("bn dx")
            });
            vec![
                dx,
                ctx.needs[1].then(|| Tensor::new(&[c], dgamma.clone()).expect("bn dgamma")),
                ctx.needs[2].then(|| Tensor::new(&[c], dbeta.clone()).expect("bn dbeta")),
            ]
        })
    }

    /// Normalizes each pixel's channel vector, then applies a per-channel affine map.
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (b, c, plane) = check_affine("layer_norm_channels", self, x, gamma, beta)?;
        let eps = T::from_f64(LN_EPS);
        let ct = T::from_f64(c as f64);
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); b * plane];
        let mut inv_std = vec![T::zero(); b * plane];
        for bi in 0..b {
            let xb = &xv[bi * c * plane..][..c * plane];
            let mu = &mut mean[bi * plane..][..plane];
            for ch in xb.chunks(plane) {
                for (m, &v) in mu.iter_mut().zip(ch) {
                    *m = *m + v;
                }
            }
            for m in mu.iter_mut() {
                *m = *m / ct;
            }
            let inv = &mut inv_std[bi * plane..][..plane];
            for ch in xb.chunks(plane) {
                for ((s, &v), &m) in inv.iter_mut().zip(ch).zip(mu.iter()) {
                    *s = *s + (v - m) * (v - m);
                }
            }
            for s in inv.iter_mut() {
                *s = T::one() / (*s / ct + eps).sqrt();
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![T::zero(); xv.len()];
        for (idx, (o, i)) in out.chunks_mut(plane).zip(xv.chunks(plane)).enumerate() {
            let (bi, ch) = (idx / c, idx % c);
            let mu = &mean[bi * plane..][..plane];
            let inv = &inv_std[bi * plane..][..plane];
            for p in 0..plane {
                o[p] = (i[p] - mu[p]) * inv[p] * gv[ch] + bv[ch];
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        self.push("layer_norm_channels", out, &[x, gamma, beta], move |ctx| {
            let dy = ctx.grad.data();
            let xv = ctx.value(x).data();
            let gv = ctx.value(gamma).data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = ctx.needs[0].then(|| vec![T::zero(); xv.len()]);
            let mut sum_g = vec![T::zero(); plane];
            let mut sum_gx = vec![T::zero(); plane];
            for bi in 0..b {
                let mu = &mean[bi * plane..][..plane];
                let inv = &inv_std[bi * plane..][..plane];
                sum_g.fill(T::zero());
                sum_gx.fill(T::zero());
                for ch in 0..c {
                    let off = (bi * c + ch) * plane;
                    let g = &dy[off..][..plane];
                    let i = &xv[off..][..plane];
                    let mut dg = T::zero();
                    for p in 0..plane {
                        let xhat = (i[p] - mu[p]) * inv[p];
                        dg = dg + g[p] * xhat;
                        let gg = g[p] * gv[ch];
                        sum_g[p] = sum_g[p] + gg;
                        sum_gx[p] = sum_gx[p] + gg * xhat;
                    }
                    dgamma[ch] = dgamma[ch] + dg;
                    dbeta[ch] = dbeta[ch] + g.iter().copied().sum::<T>();
                }
                if let Some(dx) = dx.as_mut() {
                    for ch in 0..c {
                        let off = (bi * c + ch) * plane;
                        let g = &dy[off..][..plane];
                        let i = &xv[off..][..plane];
                        let d = &mut dx[off..][..plane];
                        for p in 0..plane {
                            let xhat = (i[p] - mu[p]) * inv[p];
                            d[p] = inv[p] / ct * (ct * g[p] * gv[ch] - sum_g[p] - xhat * sum_gx[p]);
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::new(ctx.value(x).shape(), d).expect("ln dx")),
                ctx.needs[1].then(|| Tensor::new(&[c], dgamma).expect("ln dgamma")),
                ctx.needs[2].then(|| Tensor::new(&[c], dbeta).expect("ln dbeta")),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn affine(tape: &mut Tape<f64>, c: usize, g: f64, b: f64) -> (Var, Var) {
        (tape.param(Tensor::full(&[c], g)), tape.param(Tensor::full(&[c], b)))
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        // mean 5, std 2 per channel after exact standardization of the sample
        let raw = Tensor::<f64>::uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(raw.map(|v| 5.0 + 2.0 * v));
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut st = BnState::new(2);
        let y = tape.batch_norm(x, g, b, &mut st, true).unwrap();
        let y = tape.value(y);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|bi| y.data()[(bi * 2 + ch) * 9..][..9].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 36.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 36.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // running stats moved 10% of the way toward the batch mean
        assert!(st.running_mean.data().iter().all(|&m| m > 0.4 && m < 0.6));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut tape = Tape::new();
        let raw = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64 - 3.0);
        let x = tape.constant(raw.clone());
        let (g, b) = affine(&mut tape, 2, 2.0, 1.0);
        let mut st = BnState::new(2);
        let y = tape.batch_norm(x, g, b, &mut st, false).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in tape.value(y).data().iter().zip(raw.data()) {
            assert!((o - (2.0 * i * scale + 1.0)).abs() < 1e-12);
        }
        assert_eq!(st, BnState::new(2));
    }

    #[test]
    fn single_value_per_channel_rejected_in_training() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 1, 1]));
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut st = BnState::new(2);
        assert!(tape.batch_norm(x, g, b, &mut st, true).is_err());
        assert!(tape.batch_norm(x, g, b, &mut st, false).is_ok());
    }

    #[test]
    fn layer_norm_pixel_vector() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2, 1, 1], vec![1.0f64, 3.0]).unwrap());
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let y = tape.layer_norm_channels(x, g, b).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_constant_input_gives_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::full(&[2, 3, 2, 2], 4.2));
        let g = tape.param(Tensor::new(&[3], vec![1.5, -2.0, 0.5]).unwrap());
        let b = tape.param(Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = tape.layer_norm_channels(x, g, b).unwrap();
        for (idx, ch) in tape.value(y).data().chunks(4).enumerate() {
            let beta = [0.1, 0.2, 0.3][idx % 3];
            assert!(ch.iter().all(|&v| (v - beta).abs() < 1e-9));
        }
    }
}
