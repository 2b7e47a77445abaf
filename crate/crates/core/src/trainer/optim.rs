use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base: f64,
    pub min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    /// Linear from 0 to `base` over the warmup, then cosine down to `min` at
    /// `total_steps`. Update `k` (0-based) uses `lr_at(k + 1)`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = self.warmup_steps.min(self.total_steps);
        if step < warm {
            return self.base * (step as f64 / warm as f64);
        }
        if self.total_steps == warm {
            return self.base;
        }
        let p = (step.min(self.total_steps) - warm) as f64 / (self.total_steps - warm) as f64;
        self.min + (self.base - self.min) * 0.5 * (1.0 + (PI * p).cos())
    }
}

/// Global L2 norm, accumulated in f64 in parameter order.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|&v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max / norm` when the norm exceeds `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::from_f64(v.to_f64() * s);
            }
        }
    }
    norm
}

/// AdamW with decoupled weight decay on tensors whose kind decays.
/// Moments are kept in f64 regardless of the parameter type.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(params: &ParamStore<T>, (beta1, beta2): (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1, beta2, eps, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    /// One update: `p ← p − lr·wd·p` (decaying kinds only), then
    /// `p ← p − lr·m̂ / (√v̂ + eps)`.
    pub fn update<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape("adamw", format!("{} grads for {} params", grads.len(), self.m.len())));
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite("adamw gradients"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let decay = if params.kind(id).decays() { lr * self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = params.get_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(grads[k].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mut x = p.to_f64();
                x -= decay * x;
                x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *p = T::from_f64(x);
            }
        }
        Ok(())
    }
}

/// `shadow ← decay·shadow + (1 − decay)·params`; BN buffers are copied.
pub fn ema_update<T: Scalar>(shadow: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) {
    for (s, p) in shadow.tensors_mut().iter_mut().zip(params.tensors()) {
        for (s, &p) in s.data_mut().iter_mut().zip(p.data()) {
            *s = T::from_f64(decay * s.to_f64() + (1.0 - decay) * p.to_f64());
        }
    }
    for (s, p) in shadow.bn_states_mut().iter_mut().zip(params.bn_states()) {
        *s = p.clone();
    }
}
