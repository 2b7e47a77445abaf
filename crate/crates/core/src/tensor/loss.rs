use super::tape::{Tape, Var};
use super::{same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Logits are hard-clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` inside the loss.
pub const LOGIT_CLAMP: f64 = 20.0;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Tape<T> {
    /// Positive-weighted binary cross-entropy on `[B, C]` logits:
    /// mean over classes per sample, then mean over the batch.
    ///
    /// `−w·y·log σ(z) − (1 − y)·log(1 − σ(z))` is evaluated as
    /// `w·y·softplus(−z) + (1 − y)·softplus(z)` on the clamped logit; the
    /// gradient is zero where the clamp is active.
    pub fn weighted_bce(&mut self, logits: Var, targets: &Tensor<T>, weights: &[T]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        same_shape("weighted_bce", &shape, targets.shape())?;
        if shape.len() != 2 || shape[1] != weights.len() || shape[0] == 0 {
            return Err(Error::shape("weighted_bce", format!("logits {shape:?} with {} weights", weights.len())));
        }
        let z = self.value(logits);
        if !z.all_finite() {
            return Err(Error::NonFinite("weighted_bce input"));
        }
        let (b, c) = (shape[0], shape[1]);
        let scale = 1.0 / (b * c) as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(b * c);
        for (row, yrow) in z.data().chunks(c).zip(targets.data().chunks(c)) {
            let mut sample = 0.0;
            for ((&zi, &yi), &wi) in row.iter().zip(yrow).zip(weights) {
                let (zi, yi, wi) = (zi.to_f64(), yi.to_f64(), wi.to_f64());
                let zc = zi.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                sample += wi * yi * softplus(-zc) + (1.0 - yi) * softplus(zc);
                let d = if zi.abs() > LOGIT_CLAMP {
                    0.0
                } else {
                    let s = 1.0 / (1.0 + (-zc).exp());
                    -wi * yi * (1.0 - s) + (1.0 - yi) * s
                };
                grad.push(T::from_f64(d * scale));
            }
            total += sample / c as f64;
        }
        let local = Tensor::new(&shape, grad)?;
        self.push("weighted_bce", Tensor::scalar(T::from_f64(total / b as f64)), &[logits], move |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(local.map(|v| v * g))]
        })
    }
}
