//! Resampling, pooling and spatial broadcast.

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Half-pixel-center source coordinate for output index `dst`, clamped to the
/// input: returns `(lower index, upper index, weight of upper)`.
pub fn bilinear_source(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Window `[start, end)` per output cell with edges at `round(i·in/out)`.
pub fn adaptive_windows(in_len: usize, out_len: usize) -> Result<Vec<(usize, usize)>> {
    if out_len == 0 || in_len < out_len {
        return Err(Error::Config(format!("cannot pool extent {in_len} onto {out_len} cells")));
    }
    let edge = |i: usize| (2 * i * in_len + out_len) / (2 * out_len);
    Ok((0..out_len).map(|i| (edge(i), edge(i + 1))).collect())
}

struct Axis {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Axis {
    fn new(in_len: usize, out_len: usize) -> Self {
        let mut axis = Axis { lo: vec![], hi: vec![], frac: vec![] };
        for d in 0..out_len {
            let (lo, hi, f) = bilinear_source(d, in_len, out_len);
            axis.lo.push(lo);
            axis.hi.push(hi);
            axis.frac.push(f);
        }
        axis
    }
}

/// Bilinear resampling of consecutive `h×w` planes.
pub fn resize_planes<T: Scalar>(src: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ay = Axis::new(h, oh);
    let ax = Axis::new(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in src.chunks(h * w).take(planes) {
        for y in 0..oh {
            let (r0, r1) = (&p[ay.lo[y] * w..][..w], &p[ay.hi[y] * w..][..w]);
            let fy = T::from_f64(ay.frac[y]);
            for x in 0..ow {
                let fx = T::from_f64(ax.frac[x]);
                let top = r0[ax.lo[x]] * (T::one() - fx) + r0[ax.hi[x]] * fx;
                let bot = r1[ax.lo[x]] * (T::one() - fx) + r1[ax.hi[x]] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    out
}

fn pool_windows<T: Scalar>(
    tape: &mut Tape<T>,
    op: &'static str,
    x: Var,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
) -> Result<Var> {
    let (b, c, h, w) = tape.value(x).dims4()?;
    let (oh, ow) = (rows.len(), cols.len());
    let src = tape.value(x).data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for p in src.chunks(h * w) {
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut acc = T::zero();
                for y in r0..r1 {
                    acc = acc + p[y * w + c0..y * w + c1].iter().copied().sum::<T>();
                }
                out.push(acc / T::from_f64(((r1 - r0) * (c1 - c0)) as f64));
            }
        }
    }
    let out = Tensor::new(&[b, c, oh, ow], out)?;
    tape.push(op, out, &[x], move |ctx| {
        let g = ctx.grad.data();
        let mut dx = vec![T::zero(); b * c * h * w];
        for (d, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let share = gp[i * ow + j] / T::from_f64(((r1 - r0) * (c1 - c0)) as f64);
                    for y in r0..r1 {
                        for v in &mut d[y * w + c0..y * w + c1] {
                            *v = *v + share;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(&[b, c, h, w], dx).expect("pool grad"))]
    })
}

impl<T: Scalar> Tape<T> {
    /// Half-pixel-center bilinear resize with edge clamping.
    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 {
            return Err(Error::Config("bilinear_resize: target extent must be positive".into()));
        }
        let out = resize_planes(self.value(x).data(), b * c, h, w, oh, ow);
        let out = Tensor::new(&[b, c, oh, ow], out)?;
        self.push("bilinear_resize", out, &[x], move |ctx| {
            let ay = Axis::new(h, oh);
            let ax = Axis::new(w, ow);
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); b * c * h * w];
            for (d, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                for y in 0..oh {
                    let fy = T::from_f64(ay.frac[y]);
                    for xo in 0..ow {
                        let fx = T::from_f64(ax.frac[xo]);
                        let gv = gp[y * ow + xo];
                        let (l, r) = (ax.lo[xo], ax.hi[xo]);
                        let top = gv * (T::one() - fy);
                        let bot = gv * fy;
                        d[ay.lo[y] * w + l] = d[ay.lo[y] * w + l] + top * (T::one() - fx);
                        d[ay.lo[y] * w + r] = d[ay.lo[y] * w + r] + top * fx;
                        d[ay.hi[y] * w + l] = d[ay.hi[y] * w + l] + bot * (T::one() - fx);
                        d[ay.hi[y] * w + r] = d[ay.hi[y] * w + r] + bot * fx;
                    }
                }
            }
            vec![Some(Tensor::new(&[b, c, h, w], dx).expect("resize grad"))]
        })
    }

    /// Non-overlapping `k×k` mean pooling; extents must be divisible by `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::Config(format!("avg_pool: {h}x{w} not divisible by {k}")));
        }
        let rows = (0..h / k).map(|i| (i * k, i * k + k)).collect();
        let cols = (0..w / k).map(|i| (i * k, i * k + k)).collect();
        pool_windows(self, "avg_pool", x, rows, cols)
    }

    /// Mean pooling onto a fixed grid with window edges at `round(i·in/out)`;
    /// reduces to exact-factor pooling when the extents divide.
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let rows = adaptive_windows(h, oh)?;
        let cols = adaptive_windows(w, ow)?;
        pool_windows(self, "adaptive_avg_pool", x, rows, cols)
    }

    /// Mean over all spatial positions, `B×C×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        pool_windows(self, "global_avg_pool", x, vec![(0, h)], vec![(0, w)])
    }

    /// Repeats a `B×C×1×1` tensor over an `h×w` grid.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (b, c, xh, xw) = self.value(x).dims4()?;
        if (xh, xw) != (1, 1) {
            return Err(Error::shape("broadcast_spatial", format!("expected 1x1 grid, got {xh}x{xw}")));
        }
        let mut out = Vec::with_capacity(b * c * h * w);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat_n(v, h * w));
        }
        let out = Tensor::new(&[b, c, h, w], out)?;
        self.push("broadcast_spatial", out, &[x], move |ctx| {
            let d = ctx.grad.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>()).collect();
            vec![Some(Tensor::new(&[b, c, 1, 1], d).expect("broadcast grad"))]
        })
    }
}
