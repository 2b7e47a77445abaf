use rand::Rng;

use super::tape::{Tape, Var};
use super::Scalar;
use crate::error::{Error, Result};

fn check_rate(op: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("{op}: rate {p} outside [0, 1)")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    fn apply_mask(&mut self, op: &'static str, x: Var, mask: Vec<T>, unit: usize) -> Result<Var> {
        let mut out = self.value(x).clone();
        for (chunk, &m) in out.data_mut().chunks_mut(unit).zip(&mask) {
            for v in chunk {
                *v = *v * m;
            }
        }
        self.push(op, out, &[x], move |ctx| {
            let mut g = ctx.grad.clone();
            for (chunk, &m) in g.data_mut().chunks_mut(unit).zip(&mask) {
                for v in chunk {
                    *v = *v * m;
                }
            }
            vec![Some(g)]
        })
    }

    /// Stochastic depth: each sample's branch is kept with probability `1−p`
    /// and rescaled by `1/(1−p)`. Identity when not training or `p == 0`.
    pub fn drop_path(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        check_rate("drop_path", p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let b = self.shape(x)[0];
        let per = self.value(x).len() / b.max(1);
        let scale = T::from_f64(1.0 / (1.0 - p));
        let mask = (0..b)
            .map(|_| if rng.random::<f64>() < 1.0 - p { scale } else { T::zero() })
            .collect();
        self.apply_mask("drop_path", x, mask, per)
    }

    /// Elementwise dropout with inverted scaling. Identity when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        check_rate("dropout", p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let mask = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < 1.0 - p { scale } else { T::zero() })
            .collect();
        self.apply_mask("dropout", x, mask, 1)
    }
}
