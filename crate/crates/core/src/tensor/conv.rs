//! 2-D cross-correlation with grouped, depthwise and pointwise fast paths.

use rayon::prelude::*;

use super::tape::{BackwardCtx, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec { stride: 1, pad: 0, groups: 1 };

    pub fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self { stride, pad, groups }
    }

    /// Same-size depthwise 3×3 over `channels`.
    pub fn depthwise3(channels: usize) -> Self {
        Self { stride: 1, pad: 1, groups: channels }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn resolve(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<Self> {
        let (&[batch, cin, h, wd], &[cout, cin_g, kh, kw]) = (x, w) else {
            return Err(Error::shape("conv2d", format!("need rank-4 input and weight, got {x:?} / {w:?}")));
        };
        let g = spec.groups;
        if g == 0 || spec.stride == 0 {
            return Err(Error::Config("conv2d: groups and stride must be positive".into()));
        }
        if cin % g != 0 || cout % g != 0 || cin_g != cin / g {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin}, output {cout}, groups {g}, weight {w:?}"),
            ));
        }
        if h + 2 * spec.pad < kh || wd + 2 * spec.pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {})", spec.pad),
            ));
        }
        let ho = (h + 2 * spec.pad - kh) / spec.stride + 1;
        let wo = (wd + 2 * spec.pad - kw) / spec.stride + 1;
        Ok(Self { batch, cin, h, w: wd, cout, kh, kw, ho, wo, spec })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec == ConvSpec::POINTWISE
    }

    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cout == self.cin
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Rows of the unfolded input for one group.
    fn col_rows(&self) -> usize {
        self.cin / self.spec.groups * self.kh * self.kw
    }
}

/// Output positions `o` whose input index `o*stride + offset` lies in `[0, len)`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi_excl = if (in_len as isize) - 1 - offset < 0 {
        0
    } else {
        ((in_len as isize - 1 - offset) / s + 1).min(out_len as isize)
    };
    let lo = lo.min(out_len as isize) as usize;
    (lo, (hi_excl.max(lo as isize)) as usize)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, group: usize, col: &mut [T]) {
    let cin_g = g.cin / g.spec.groups;
    let op = g.out_plane();
    col.fill(T::zero());
    for ci in 0..cin_g {
        let plane = &x[(group * cin_g + ci) * g.in_plane()..][..g.in_plane()];
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_range(g.ho, g.h, g.spec.stride, ki as isize - g.spec.pad as isize);
            for kj in 0..g.kw {
                let off_w = kj as isize - g.spec.pad as isize;
                let (ow_lo, ow_hi) = valid_range(g.wo, g.w, g.spec.stride, off_w);
                let row = &mut col[((ci * g.kh + ki) * g.kw + kj) * op..][..op];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.spec.stride + ki - g.spec.pad;
                    let src = &plane[ih * g.w..][..g.w];
                    let dst = &mut row[oh * g.wo..][..g.wo];
                    for ow in ow_lo..ow_hi {
                        dst[ow] = src[(ow * g.spec.stride) + kj - g.spec.pad];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, group: usize, dx: &mut [T]) {
    let cin_g = g.cin / g.spec.groups;
    let op = g.out_plane();
    for ci in 0..cin_g {
        let plane = &mut dx[(group * cin_g + ci) * g.in_plane()..][..g.in_plane()];
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_range(g.ho, g.h, g.spec.stride, ki as isize - g.spec.pad as isize);
            for kj in 0..g.kw {
                let (ow_lo, ow_hi) =
                    valid_range(g.wo, g.w, g.spec.stride, kj as isize - g.spec.pad as isize);
                let row = &col[((ci * g.kh + ki) * g.kw + kj) * op..][..op];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.spec.stride + ki - g.spec.pad;
                    let dst = &mut plane[ih * g.w..][..g.w];
                    let src = &row[oh * g.wo..][..g.wo];
                    for ow in ow_lo..ow_hi {
                        let iw = ow * g.spec.stride + kj - g.spec.pad;
                        dst[iw] = dst[iw] + src[ow];
                    }
                }
            }
        }
    }
}

/// Depthwise correlation of one plane; accumulates into `out`.
fn depthwise_plane<T: Scalar>(x: &[T], k: &[T], g: &Geometry, out: &mut [T]) {
    let s = g.spec.stride;
    for ki in 0..g.kh {
        let (oh_lo, oh_hi) = valid_range(g.ho, g.h, s, ki as isize - g.spec.pad as isize);
        for kj in 0..g.kw {
            let wv = k[ki * g.kw + kj];
            let (ow_lo, ow_hi) = valid_range(g.wo, g.w, s, kj as isize - g.spec.pad as isize);
            for oh in oh_lo..oh_hi {
                let ih = oh * s + ki - g.spec.pad;
                let src = &x[ih * g.w..][..g.w];
                let dst = &mut out[oh * g.wo..][..g.wo];
                if s == 1 {
                    let shift = kj as isize - g.spec.pad as isize;
                    let src = &src[(ow_lo as isize + shift) as usize..(ow_hi as isize + shift) as usize];
                    for (d, &v) in dst[ow_lo..ow_hi].iter_mut().zip(src) {
                        *d = *d + wv * v;
                    }
                } else {
                    for ow in ow_lo..ow_hi {
                        dst[ow] = dst[ow] + wv * src[ow * s + kj - g.spec.pad];
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation, no tape.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::resolve(x.shape(), w.shape(), spec)?;
    if let Some(b) = b {
        if b.shape() != [g.cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", b.shape(), g.cout)));
        }
    }
    let mut out = vec![T::zero(); g.batch * g.cout * g.out_plane()];
    let xs = x.data();
    let ws = w.data();
    let per_in = g.cin * g.in_plane();
    let per_out = g.cout * g.out_plane();
    if g.batch > 0 && per_out > 0 {
        out.par_chunks_mut(per_out).enumerate().for_each(|(bi, ob)| {
            let xb = &xs[bi * per_in..][..per_in];
            if g.is_pointwise() {
                let hw = g.out_plane();
                T::gemm(g.cout, g.cin, hw, T::one(), ws, g.cin as isize, 1, xb, hw as isize, 1, T::zero(), ob, hw as isize, 1);
            } else if g.is_depthwise() {
                let kk = g.kh * g.kw;
                for c in 0..g.cin {
                    depthwise_plane(
                        &xb[c * g.in_plane()..][..g.in_plane()],
                        &ws[c * kk..][..kk],
                        &g,
                        &mut ob[c * g.out_plane()..][..g.out_plane()],
                    );
                }
            } else {
                let rows = g.col_rows();
                let op = g.out_plane();
                let cout_g = g.cout / g.spec.groups;
                let mut col = vec![T::zero(); rows * op];
                for grp in 0..g.spec.groups {
                    im2col(xb, &g, grp, &mut col);
                    let wg = &ws[grp * cout_g * rows..][..cout_g * rows];
                    let og = &mut ob[grp * cout_g * op..][..cout_g * op];
                    T::gemm(cout_g, rows, op, T::one(), wg, rows as isize, 1, &col, op as isize, 1, T::zero(), og, op as isize, 1);
                }
            }
            if let Some(b) = b {
                for (c, plane) in ob.chunks_mut(g.out_plane()).enumerate() {
                    let bv = b.data()[c];
                    for v in plane {
                        *v = *v + bv;
                    }
                }
            }
        });
    }
    Tensor::new(&[g.batch, g.cout, g.ho, g.wo], out)
}

fn conv2d_backward<T: Scalar>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let per_in = g.cin * g.in_plane();
    let per_out = g.cout * g.out_plane();
    let op = g.out_plane();
    let mut dx = need_x.then(|| vec![T::zero(); g.batch * per_in]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);

    if g.is_pointwise() {
        if let Some(dx) = dx.as_mut() {
            dx.par_chunks_mut(per_in).enumerate().for_each(|(bi, dxb)| {
                let dyb = &dy[bi * per_out..][..per_out];
                // dX_b = Wᵀ · dY_b
                T::gemm(g.cin, g.cout, op, T::one(), w, 1, g.cin as isize, dyb, op as isize, 1, T::zero(), dxb, op as isize, 1);
            });
        }
        if let Some(dw) = dw.as_mut() {
            for bi in 0..g.batch {
                let dyb = &dy[bi * per_out..][..per_out];
                let xb = &x[bi * per_in..][..per_in];
                // dW += dY_b · X_bᵀ
                T::gemm(g.cout, op, g.cin, T::one(), dyb, op as isize, 1, xb, 1, op as isize, T::one(), dw, g.cin as isize, 1);
            }
        }
    } else if g.is_depthwise() {
        let kk = g.kh * g.kw;
        let s = g.spec.stride;
        if let Some(dx) = dx.as_mut() {
            dx.par_chunks_mut(g.in_plane()).enumerate().for_each(|(idx, dxp)| {
                let c = idx % g.cin;
                let dyp = &dy[idx * op..][..op];
                let k = &w[c * kk..][..kk];
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = valid_range(g.ho, g.h, s, ki as isize - g.spec.pad as isize);
                    for kj in 0..g.kw {
                        let wv = k[ki * g.kw + kj];
                        let (ow_lo, ow_hi) = valid_range(g.wo, g.w, s, kj as isize - g.spec.pad as isize);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ki - g.spec.pad;
                            let src = &dyp[oh * g.wo..][..g.wo];
                            let dst = &mut dxp[ih * g.w..][..g.w];
                            if s == 1 {
                                let iw_lo = ow_lo + kj - g.spec.pad;
                                let dst = &mut dst[iw_lo..iw_lo + (ow_hi - ow_lo)];
                                for (d, &v) in dst.iter_mut().zip(&src[ow_lo..ow_hi]) {
                                    *d = *d + wv * v;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * s + kj - g.spec.pad;
                                    dst[iw] = dst[iw] + wv * src[ow];
                                }
                            }
                        }
                    }
                }
            });
        }
        if let Some(dw) = dw.as_mut() {
            dw.par_chunks_mut(kk).enumerate().for_each(|(c, dk)| {
                // Per-column partial sums keep the inner loop vectorizable;
                // they are reduced in a fixed order at the end.
                let mut lanes = vec![T::zero(); kk * g.wo];
                for bi in 0..g.batch {
                    let xp = &x[(bi * g.cin + c) * g.in_plane()..][..g.in_plane()];
                    let dyp = &dy[(bi * g.cin + c) * op..][..op];
                    for ki in 0..g.kh {
                        let (oh_lo, oh_hi) = valid_range(g.ho, g.h, s, ki as isize - g.spec.pad as isize);
                        for kj in 0..g.kw {
                            let (ow_lo, ow_hi) =
                                valid_range(g.wo, g.w, s, kj as isize - g.spec.pad as isize);
                            let lane = &mut lanes[(ki * g.kw + kj) * g.wo..][..g.wo];
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + ki - g.spec.pad;
                                let src = &xp[ih * g.w..][..g.w];
                                let gy = &dyp[oh * g.wo..][..g.wo];
                                if s == 1 {
                                    let iw_lo = ow_lo + kj - g.spec.pad;
                                    let src = &src[iw_lo..iw_lo + (ow_hi - ow_lo)];
                                    for ((l, &a), &b) in lane[ow_lo..ow_hi].iter_mut().zip(&gy[ow_lo..ow_hi]).zip(src) {
                                        *l = *l + a * b;
                                    }
                                } else {
                                    for ow in ow_lo..ow_hi {
                                        lane[ow] = lane[ow] + gy[ow] * src[ow * s + kj - g.spec.pad];
                                    }
                                }
                            }
                        }
                    }
                }
                for (d, lane) in dk.iter_mut().zip(lanes.chunks(g.wo)) {
                    *d = *d + lane.iter().copied().sum::<T>();
                }
            });
        }
    } else {
        let rows = g.col_rows();
        let cout_g = g.cout / g.spec.groups;
        let mut col = vec![T::zero(); rows * op];
        let mut dcol = vec![T::zero(); rows * op];
        for bi in 0..g.batch {
            let xb = &x[bi * per_in..][..per_in];
            let dyb = &dy[bi * per_out..][..per_out];
            for grp in 0..g.spec.groups {
                let dyg = &dyb[grp * cout_g * op..][..cout_g * op];
                let wg = &w[grp * cout_g * rows..][..cout_g * rows];
                if let Some(dw) = dw.as_mut() {
                    im2col(xb, g, grp, &mut col);
                    let dwg = &mut dw[grp * cout_g * rows..][..cout_g * rows];
                    T::gemm(cout_g, op, rows, T::one(), dyg, op as isize, 1, &col, 1, op as isize, T::one(), dwg, rows as isize, 1);
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm(rows, cout_g, op, T::one(), wg, 1, rows as isize, dyg, op as isize, 1, T::zero(), &mut dcol, op as isize, 1);
                    col2im(&dcol, g, grp, &mut dx[bi * per_in..][..per_in]);
                }
            }
        }
    }
    (dx, dw)
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation `x ⋆ w + b` (no kernel flip).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let g = Geometry::resolve(self.shape(x), self.shape(w), spec)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push("conv2d", out, &parents, move |ctx: &BackwardCtx<'_, T>| {
            let dy = ctx.grad.data();
            let xv = ctx.value(x);
            let wv = ctx.value(w);
            let (dx, dw) = conv2d_backward(&g, xv.data(), wv.data(), dy, ctx.needs[0], ctx.needs[1]);
            let mut grads = vec![
                dx.map(|d| Tensor::new(xv.shape(), d).expect("conv dx")),
                dw.map(|d| Tensor::new(wv.shape(), d).expect("conv dw")),
            ];
            if b.is_some() {
                let db = ctx.needs[2].then(|| {
                    let op = g.out_plane();
                    let mut db = vec![T::zero(); g.cout];
                    for (idx, plane) in dy.chunks(op).enumerate() {
                        let c = idx % g.cout;
                        db[c] = db[c] + plane.iter().copied().sum::<T>();
                    }
                    Tensor::new(&[g.cout], db).expect("conv db")
                });
                grads.push(db);
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop correlation.
    fn reference(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: ConvSpec) -> Tensor<f64> {
        let (bn, cin, h, wd) = x.dims4().unwrap();
        let (cout, cin_g, kh, kw) = w.dims4().unwrap();
        let ho = (h + 2 * spec.pad - kh) / spec.stride + 1;
        let wo = (wd + 2 * spec.pad - kw) / spec.stride + 1;
        let cout_g = cout / spec.groups;
        let mut out = Tensor::zeros(&[bn, cout, ho, wo]);
        for bi in 0..bn {
            for co in 0..cout {
                let grp = co / cout_g;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cin_g {
                            let cabs = grp * cin_g + ci;
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (oh * spec.stride + ki) as isize - spec.pad as isize;
                                    let iw = (ow * spec.stride + kj) as isize - spec.pad as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * cin + cabs) * h + ih as usize) * wd + iw as usize]
                                        * w.data()[((co * cin_g + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        let _ = cin;
        out
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand::SeedableRng::seed_from_u64(7)
    }

    #[test]
    fn all_paths_match_reference() {
        let mut r = rng();
        let cases = [
            ([2, 3, 9, 9], [4, 3, 7, 7], ConvSpec::new(4, 3, 1)),
            ([2, 4, 5, 5], [4, 1, 3, 3], ConvSpec::depthwise3(4)),
            ([1, 6, 6, 5], [6, 1, 3, 3], ConvSpec::new(2, 1, 6)),
            ([2, 4, 5, 5], [6, 2, 3, 3], ConvSpec::new(1, 0, 2)),
            ([3, 5, 4, 4], [7, 5, 1, 1], ConvSpec::POINTWISE),
        ];
        for (xs, ws, spec) in cases {
            let x = Tensor::<f64>::uniform(&xs, -1.0, 1.0, &mut r);
            let w = Tensor::<f64>::uniform(&ws, -1.0, 1.0, &mut r);
            let b = Tensor::<f64>::uniform(&[ws[0]], -1.0, 1.0, &mut r);
            let got = conv2d_forward(&x, &w, Some(&b), spec).unwrap();
            let want = reference(&x, &w, Some(&b), spec);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn identity_permutation_kernel_permutes_channels() {
        let mut r = rng();
        let x = Tensor::<f64>::uniform(&[1, 3, 2, 2], -1.0, 1.0, &mut r);
        // out0 <- in2, out1 <- in0, out2 <- in1
        let perm = [2usize, 0, 1];
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if perm[i / 3] == i % 3 { 1.0 } else { 0.0 });
        let out = conv2d_forward(&x, &w, None, ConvSpec::POINTWISE).unwrap();
        for (co, &ci) in perm.iter().enumerate() {
            assert_eq!(&out.data()[co * 4..co * 4 + 4], &x.data()[ci * 4..ci * 4 + 4]);
        }
    }

    #[test]
    fn ones_kernel_counts_overlapped_taps() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 1)).unwrap();
        let d = out.data();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[3], 4.0);
        assert_eq!(d[5], 9.0);
        assert_eq!(d[10], 9.0);
        assert_eq!(d[1], 6.0);
    }

    #[test]
    fn mismatched_groups_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[4, 1, 3, 3]);
        assert!(conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 2)).is_err());
        let big = Tensor::<f64>::zeros(&[1, 3, 9, 9]);
        let w = Tensor::<f64>::zeros(&[1, 3, 9, 9]);
        assert!(conv2d_forward(&Tensor::zeros(&[1, 3, 4, 4]), &w, None, ConvSpec::POINTWISE).is_err());
        assert!(conv2d_forward(&big, &w, None, ConvSpec::POINTWISE).is_ok());
    }

    #[test]
    fn valid_range_bounds() {
        // pad 1, kernel tap 0 -> offset -1: output 0 reads input -1
        assert_eq!(valid_range(4, 4, 1, -1), (1, 4));
        assert_eq!(valid_range(4, 4, 1, 1), (0, 3));
        assert_eq!(valid_range(3, 9, 4, -3), (1, 3));
        assert_eq!(valid_range(2, 2, 1, 5), (0, 0));
    }
}
