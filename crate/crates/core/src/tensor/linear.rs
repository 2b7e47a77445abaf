use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// `x·Wᵀ + b` for `x: B×F`, `W: O×F`, `b: O`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (&[bn, f], &[o, wf], &[bo]) = (self.shape(x), self.shape(w), self.shape(b)) else {
            return Err(Error::shape(
                "linear",
                format!("{:?} · {:?}ᵀ + {:?}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        };
        if f != wf || o != bo {
            return Err(Error::shape("linear", format!("features {f} vs {wf}, outputs {o} vs {bo}")));
        }
        let mut out = vec![T::zero(); bn * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(bn, f, o, T::one(), self.value(x).data(), f as isize, 1, self.value(w).data(), 1, f as isize, T::one(), &mut out, o as isize, 1);
        let out = Tensor::new(&[bn, o], out)?;
        self.push("linear", out, &[x, w, b], move |ctx| {
            let dy = ctx.grad.data();
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); bn * f];
                T::gemm(bn, o, f, T::one(), dy, o as isize, 1, ctx.value(w).data(), f as isize, 1, T::zero(), &mut dx, f as isize, 1);
                Tensor::new(&[bn, f], dx).expect("linear dx")
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); o * f];
                T::gemm(o, bn, f, T::one(), dy, 1, o as isize, ctx.value(x).data(), f as isize, 1, T::zero(), &mut dw, f as isize, 1);
                Tensor::new(&[o, f], dw).expect("linear dw")
            });
            let db = ctx.needs[2].then(|| {
                let mut db = vec![T::zero(); o];
                for row in dy.chunks(o) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d = *d + g;
                    }
                }
                Tensor::new(&[o], db).expect("linear db")
            });
            vec![dx, dw, db]
        })
    }
}
