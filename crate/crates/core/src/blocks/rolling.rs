//! Sparse rolling geometric product.
//!
//! For state `u` and context `v` (both `B×D×H×W`) the context is taken in
//! differential form `C = v − u`, and for every shift `s` two feature maps are
//! produced from channel rolls:
//!
//! ```text
//! wedge_s = u ⊙ roll(C, s) − C ⊙ roll(u, s)     (antisymmetric in (u, C))
//! inner_s = SiLU(u ⊙ roll(C, s))
//! ```
//!
//! The `2·|S|·D` maps are laid out as `[wedge_s, inner_s]` per shift, shifts
//! ascending, and projected back to `D` channels by a 1×1 convolution. Cost is
//! `O(|S|·D)` per pixel instead of the `O(D²)` of a dense pairing.

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, ParamBuilder};
use crate::tensor::elementwise::{silu, silu_grad};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Offsets `{1, 2, D/4, D/2}`, deduplicated and ascending.
pub fn shift_set(dim: usize) -> Result<Vec<usize>> {
    if !dim.is_multiple_of(4) || dim < 8 {
        return Err(Error::Config(format!("shift set needs D divisible by 4 and D >= 8, got {dim}")));
    }
    let mut s = vec![1, 2, dim / 4, dim / 2];
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RollingConfig {
    pub dim: usize,
    pub shifts: Vec<usize>,
}

impl RollingConfig {
    pub fn from_dim(dim: usize) -> Result<Self> {
        Ok(Self { dim, shifts: shift_set(dim)? })
    }

    pub fn with_shifts(dim: usize, shifts: Vec<usize>) -> Result<Self> {
        let mut sorted = shifts.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != shifts.len() || shifts.iter().any(|&s| s == 0 || s >= dim) {
            return Err(Error::Config(format!("shifts {shifts:?} must be distinct and in [1, {dim})")));
        }
        Ok(Self { dim, shifts })
    }

    /// Channels entering the projection.
    pub fn feature_width(&self) -> usize {
        2 * self.shifts.len() * self.dim
    }

    /// Multiplies before projection per sample: two products and the SiLU gate
    /// for every (shift, channel, pixel).
    pub fn multiplies(&self, pixels: usize) -> usize {
        3 * self.shifts.len() * self.dim * pixels
    }
}

fn check_pair<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, shifts: &[usize]) -> Result<(usize, usize, usize)> {
    if u.shape() != v.shape() {
        return Err(Error::shape("rolling_product", format!("u {:?} vs v {:?}", u.shape(), v.shape())));
    }
    let (b, d, h, w) = u.dims4()?;
    if let Some(&s) = shifts.iter().find(|&&s| s == 0 || s >= d) {
        return Err(Error::Config(format!("shift {s} invalid for {d} channels")));
    }
    Ok((b, d, h * w))
}

/// Plane-vectorized forward producing `B × 2|S|D × H × W`.
pub fn rolling_features<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, shifts: &[usize]) -> Result<Tensor<T>> {
    let (b, d, p) = check_pair(u, v, shifts)?;
    let (_, _, h, w) = u.dims4()?;
    let width = 2 * shifts.len() * d;
    let mut out = vec![T::zero(); b * width * p];
    let mut ctx = vec![T::zero(); d * p];
    for bi in 0..b {
        let ub = &u.data()[bi * d * p..][..d * p];
        let vb = &v.data()[bi * d * p..][..d * p];
        for ((c, &uu), &vv) in ctx.iter_mut().zip(ub).zip(vb) {
            *c = vv - uu;
        }
        let ob = &mut out[bi * width * p..][..width * p];
        for (k, &s) in shifts.iter().enumerate() {
            for c in 0..d {
                let src = (c + d - s) % d;
                let (u_c, u_s) = (&ub[c * p..][..p], &ub[src * p..][..p]);
                let (c_c, c_s) = (&ctx[c * p..][..p], &ctx[src * p..][..p]);
                let (wedge, rest) = ob[(2 * k * d + c) * p..].split_at_mut(d * p);
                let wedge = &mut wedge[..p];
                let inner = &mut rest[..p];
                for i in 0..p {
                    let a = u_c[i] * c_s[i];
                    wedge[i] = a - c_c[i] * u_s[i];
                    inner[i] = silu(a);
                }
            }
        }
    }
    Tensor::new(&[b, width, h, w], out)
}

/// Disjoint mutable views of planes `a` and `b` (`a != b`) of length `p`.
fn two_planes<T>(buf: &mut [T], a: usize, b: usize, p: usize) -> (&mut [T], &mut [T]) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = buf.split_at_mut(b * p);
        (&mut lo[a * p..][..p], &mut hi[..p])
    } else {
        let (lo, hi) = buf.split_at_mut(a * p);
        (&mut hi[..p], &mut lo[b * p..][..p])
    }
}

/// Backward of [`rolling_features`]: returns `(du, dv)`.
pub fn rolling_features_backward<T: Scalar>(
    u: &Tensor<T>,
    v: &Tensor<T>,
    shifts: &[usize],
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, d, p) = check_pair(u, v, shifts)?;
    let width = 2 * shifts.len() * d;
    let mut du = vec![T::zero(); b * d * p];
    let mut dctx = vec![T::zero(); b * d * p];
    let mut ctx = vec![T::zero(); d * p];
    for bi in 0..b {
        let ub = &u.data()[bi * d * p..][..d * p];
        let vb = &v.data()[bi * d * p..][..d * p];
        for ((c, &uu), &vv) in ctx.iter_mut().zip(ub).zip(vb) {
            *c = vv - uu;
        }
        let gb = &grad.data()[bi * width * p..][..width * p];
        let dub = &mut du[bi * d * p..][..d * p];
        let dcb = &mut dctx[bi * d * p..][..d * p];
        for (k, &s) in shifts.iter().enumerate() {
            for c in 0..d {
                let src = (c + d - s) % d;
                let gw = &gb[(2 * k * d + c) * p..][..p];
                let gi = &gb[((2 * k + 1) * d + c) * p..][..p];
                let (u_c, u_s) = (&ub[c * p..][..p], &ub[src * p..][..p]);
                let (c_c, c_s) = (&ctx[c * p..][..p], &ctx[src * p..][..p]);
                let (du_c, du_s) = two_planes(dub, c, src, p);
                let (dc_c, dc_s) = two_planes(dcb, c, src, p);
                for i in 0..p {
                    let ga = gw[i] + gi[i] * silu_grad(u_c[i] * c_s[i]);
                    let gbt = -gw[i];
                    du_c[i] = du_c[i] + ga * c_s[i];
                    dc_s[i] = dc_s[i] + ga * u_c[i];
                    dc_c[i] = dc_c[i] + gbt * u_s[i];
                    du_s[i] = du_s[i] + gbt * c_c[i];
                }
            }
        }
    }
    // C = v − u
    for (du, &dc) in du.iter_mut().zip(&dctx) {
        *du = *du - dc;
    }
    Ok((Tensor::new(u.shape(), du)?, Tensor::new(v.shape(), dctx)?))
}

/// Scalar reference with explicit index arithmetic; also returns the number
/// of multiplications performed.
pub fn rolling_features_naive<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, shifts: &[usize]) -> Result<(Tensor<T>, usize)> {
    let (b, d, _) = check_pair(u, v, shifts)?;
    let (_, _, h, w) = u.dims4()?;
    let width = 2 * shifts.len() * d;
    let at = |t: &Tensor<T>, bi: usize, c: usize, y: usize, x: usize| t.data()[((bi * d + c) * h + y) * w + x];
    let mut out = Tensor::zeros(&[b, width, h, w]);
    let mut mults = 0usize;
    for bi in 0..b {
        for (k, &s) in shifts.iter().enumerate() {
            for c in 0..d {
                let src = (c + d - s) % d;
                for y in 0..h {
                    for x in 0..w {
                        let uc = at(u, bi, c, y, x);
                        let us = at(u, bi, src, y, x);
                        let cc = at(v, bi, c, y, x) - uc;
                        let cs = at(v, bi, src, y, x) - us;
                        let a = uc * cs;
                        let bt = cc * us;
                        let sig = T::one() / (T::one() + (-a).exp());
                        let inner = a * sig;
                        mults += 3;
                        let o = out.data_mut();
                        o[((bi * width + 2 * k * d + c) * h + y) * w + x] = a - bt;
                        o[((bi * width + (2 * k + 1) * d + c) * h + y) * w + x] = inner;
                    }
                }
            }
        }
    }
    Ok((out, mults / b.max(1)))
}

impl<T: Scalar> Tape<T> {
    /// Pre-projection interaction features `[wedge_s, inner_s]_s`.
    pub fn rolling_interaction(&mut self, u: Var, v: Var, shifts: &[usize]) -> Result<Var> {
        let out = rolling_features(self.value(u), self.value(v), shifts)?;
        let shifts = shifts.to_vec();
        self.push("rolling_interaction", out, &[u, v], move |ctx| {
            let (du, dv) = rolling_features_backward(ctx.value(u), ctx.value(v), &shifts, ctx.grad)
                .expect("rolling backward: shapes validated in forward");
            vec![Some(du), Some(dv)]
        })
    }
}

/// Rolling interaction followed by the `2|S|D → D` projection.
#[derive(Debug, Clone)]
pub struct SparseRollingProduct {
    pub config: RollingConfig,
    pub proj: Conv2d,
}

impl SparseRollingProduct {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, config: RollingConfig) -> Self {
        let proj = Conv2d::pointwise(pb, &format!("{name}.proj"), config.feature_width(), config.dim, true);
        Self { config, proj }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, u: Var, v: Var) -> Result<Var> {
        let d = ctx.tape.shape(u).get(1).copied().unwrap_or(0);
        if d != self.config.dim {
            return Err(Error::shape("rolling_product", format!("{d} channels, configured for {}", self.config.dim)));
        }
        let feats = ctx.tape.rolling_interaction(u, v, &self.config.shifts)?;
        self.proj.forward(ctx, feats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn shift_sets() {
        assert_eq!(shift_set(96).unwrap(), vec![1, 2, 24, 48]);
        assert_eq!(shift_set(8).unwrap(), vec![1, 2, 4]);
        assert_eq!(shift_set(16).unwrap(), vec![1, 2, 4, 8]);
        assert!(shift_set(10).is_err());
        assert!(shift_set(4).is_err());
        assert!(RollingConfig::with_shifts(8, vec![1, 1]).is_err());
        assert!(RollingConfig::with_shifts(8, vec![8]).is_err());
        assert_eq!(RollingConfig::from_dim(96).unwrap().feature_width(), 768);
    }

    #[test]
    fn fused_matches_naive_and_counts_multiplies() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u = Tensor::<f64>::uniform(&[2, 8, 3, 2], -1.0, 1.0, &mut rng);
        let v = Tensor::<f64>::uniform(&[2, 8, 3, 2], -1.0, 1.0, &mut rng);
        let cfg = RollingConfig::from_dim(8).unwrap();
        let fast = rolling_features(&u, &v, &cfg.shifts).unwrap();
        let (slow, mults) = rolling_features_naive(&u, &v, &cfg.shifts).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-14);
        assert_eq!(mults, cfg.multiplies(6));
    }

    #[test]
    fn wedge_vanishes_when_context_equals_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let u = Tensor::<f64>::uniform(&[1, 16, 2, 2], -2.0, 2.0, &mut rng);
        let v = u.map(|x| 2.0 * x);
        let shifts = shift_set(16).unwrap();
        let f = rolling_features(&u, &v, &shifts).unwrap();
        for (k, _) in shifts.iter().enumerate() {
            let wedge = &f.data()[2 * k * 16 * 4..][..16 * 4];
            assert!(wedge.iter().all(|&x| x == 0.0));
        }
        let zero = Tensor::<f64>::zeros(&[1, 16, 2, 2]);
        let f0 = rolling_features(&zero, &v, &shifts).unwrap();
        assert!(f0.data().iter().all(|&x| x == 0.0));
    }
}
