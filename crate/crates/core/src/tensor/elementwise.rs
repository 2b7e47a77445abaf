use super::tape::{Tape, Var};
use super::{same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

#[inline(always)]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    x.sigmoid()
}

#[inline(always)]
pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// d/dx silu(x) = σ(x)·(1 + x·(1 − σ(x)))
#[inline(always)]
pub(crate) fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("zip_map: same shape")
}

/// `out = x[(c − s) mod D]` along axis 1.
pub(crate) fn roll_channels<T: Scalar>(x: &Tensor<T>, s: isize) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("channel_roll", format!("rank {} tensor", x.rank())));
    }
    let shape = x.shape();
    let (b, d) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for bi in 0..b {
        for c in 0..d {
            let from = (c as isize - s).rem_euclid(d as isize) as usize;
            out[(bi * d + c) * plane..][..plane].copy_from_slice(&src[(bi * d + from) * plane..][..plane]);
        }
    }
    Tensor::new(shape, out)
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, &[a, b], |ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, &[a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, &[a, b], move |ctx| {
            vec![
                ctx.needs[0].then(|| zip_map(ctx.grad, ctx.value(b), |g, y| g * y)),
                ctx.needs[1].then(|| zip_map(ctx.grad, ctx.value(a), |g, x| g * x)),
            ]
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let saved = out.clone();
        self.push("sigmoid", out, &[x], move |ctx| {
            vec![Some(zip_map(ctx.grad, &saved, |g, s| g * s * (T::one() - s)))]
        })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(silu);
        self.push("silu", out, &[x], move |ctx| {
            vec![Some(zip_map(ctx.grad, ctx.value(x), |g, v| g * silu_grad(v)))]
        })
    }

    /// Multiplies a `B×C×…` tensor by a per-channel vector of length `C`.
    pub fn scale_channels(&mut self, x: Var, gamma: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(gamma) != [shape[1]] {
            return Err(Error::shape(
                "scale_channels",
                format!("input {shape:?}, scale {:?}", self.shape(gamma)),
            ));
        }
        let c = shape[1];
        let plane: usize = shape[2..].iter().product();
        let scale = move |v: &Tensor<T>, g: &Tensor<T>| {
            let mut out = v.clone();
            for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let s = g.data()[idx % c];
                for e in chunk {
                    *e = *e * s;
                }
            }
            out
        };
        let out = scale(self.value(x), self.value(gamma));
        self.push("scale_channels", out, &[x, gamma], move |ctx| {
            let dx = ctx.needs[0].then(|| scale(ctx.grad, ctx.value(gamma)));
            let dg = ctx.needs[1].then(|| {
                let mut dg = vec![T::zero(); c];
                let xv = ctx.value(x).data();
                for (idx, (gch, xch)) in ctx.grad.data().chunks(plane).zip(xv.chunks(plane)).enumerate() {
                    let acc: T = gch.iter().zip(xch).map(|(&g, &v)| g * v).sum();
                    dg[idx % c] = dg[idx % c] + acc;
                }
                Tensor::new(&[c], dg).expect("scale_channels dg")
            });
            vec![dx, dg]
        })
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_channels", "no inputs"));
        };
        let (b, _, h, w) = self.value(first).dims4()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[bi * c * plane..][..c * plane]);
            }
        }
        let out = Tensor::new(&[b, total, h, w], out)?;
        let parts_owned = parts.to_vec();
        self.push("concat_channels", out, parts, move |ctx| {
            let g = ctx.grad.data();
            let mut offset = 0;
            parts_owned
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (_, &c))| {
                    let this = offset;
                    offset += c;
                    ctx.needs[i].then(|| {
                        let mut d = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            d.extend_from_slice(&g[(bi * total + this) * plane..][..c * plane]);
                        }
                        Tensor::new(&[b, c, h, w], d).expect("concat grad")
                    })
                })
                .collect()
        })
    }

    /// Cyclic shift along channels toward higher index: `out[c] = x[(c − s) mod D]`.
    pub fn channel_roll(&mut self, x: Var, s: usize) -> Result<Var> {
        let d = self.shape(x).get(1).copied().unwrap_or(0);
        if s >= d {
            return Err(Error::Config(format!("channel_roll: shift {s} must be < {d} channels")));
        }
        let out = roll_channels(self.value(x), s as isize)?;
        self.push("channel_roll", out, &[x], move |ctx| {
            vec![Some(roll_channels(ctx.grad, -(s as isize)).expect("roll grad"))]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(x).to_vec();
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, &[x], move |ctx| {
            vec![Some(ctx.grad.clone().reshape(&from).expect("reshape grad"))]
        })
    }

    /// `Σ x ⊙ weights` as a one-element tensor; used to scalarize outputs.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        same_shape("weighted_sum", self.shape(x), weights.shape())?;
        let s: T = self.value(x).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        self.push("weighted_sum", Tensor::scalar(s), &[x], move |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(weights.map(|w| w * g))]
        })
    }
}
