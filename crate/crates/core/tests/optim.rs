use cliffordm::nn::{ParamBuilder, ParamStore};
use cliffordm::tensor::Tensor;
use cliffordm::trainer::{clip_global_norm, ema_update, global_norm, AdamW, Schedule, ADAM_BETAS, ADAM_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One decaying weight tensor and one non-decaying bias.
fn store(w: &[f64], b: &[f64]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pb = ParamBuilder::<f64>::new(&mut rng);
    let wid = pb.kaiming("w", &[w.len()], 1);
    let bid = pb.zeros("b", b.len());
    let mut s = pb.finish();
    s.get_mut(wid).data_mut().copy_from_slice(w);
    s.get_mut(bid).data_mut().copy_from_slice(b);
    s
}

fn grads(w: &[f64], b: &[f64]) -> Vec<Tensor<f64>> {
    vec![Tensor::new(&[w.len()], w.to_vec()).unwrap(), Tensor::new(&[b.len()], b.to_vec()).unwrap()]
}

/// Scalar AdamW written out step by step.
struct Oracle {
    m: f64,
    v: f64,
    t: i32,
}

impl Oracle {
    fn step(&mut self, p: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mhat = self.m / (1.0 - b1f(b1, self.t));
        let vhat = self.v / (1.0 - b1f(b2, self.t));
        let p = p - lr * wd * p;
        p - lr * mhat / (vhat.sqrt() + eps)
    }
}

fn b1f(b: f64, t: i32) -> f64 {
    let mut x = 1.0;
    for _ in 0..t {
        x *= b;
    }
    x
}

#[test]
fn adamw_three_steps_match_hand_oracle() {
    let (w0, b0) = (vec![0.5, -1.25, 2.0], vec![0.3, -0.7]);
    let mut params = store(&w0, &b0);
    let mut opt = AdamW::new(&params, ADAM_BETAS, ADAM_EPS, 0.08);
    let seq = [
        (vec![0.1, -0.2, 0.3], vec![1.0, -2.0], 1e-3),
        (vec![-0.05, 0.4, 0.0], vec![0.5, 0.25], 2e-3),
        (vec![0.2, 0.2, -0.6], vec![-1.5, 3.0], 5e-4),
    ];
    let mut ow: Vec<Oracle> = w0.iter().map(|_| Oracle { m: 0.0, v: 0.0, t: 0 }).collect();
    let mut ob: Vec<Oracle> = b0.iter().map(|_| Oracle { m: 0.0, v: 0.0, t: 0 }).collect();
    let (mut w, mut b) = (w0.clone(), b0.clone());
    for (gw, gb, lr) in &seq {
        opt.update(&mut params, &grads(gw, gb), *lr).unwrap();
        for i in 0..w.len() {
            w[i] = ow[i].step(w[i], gw[i], *lr, 0.08);
        }
        for i in 0..b.len() {
            b[i] = ob[i].step(b[i], gb[i], *lr, 0.0);
        }
    }
    for (got, want) in params.tensors()[0].data().iter().zip(&w) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    for (got, want) in params.tensors()[1].data().iter().zip(&b) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert_eq!(opt.step, 3);
}

#[test]
fn first_step_moves_by_lr_against_the_gradient_sign() {
    let mut params = store(&[1.0, 1.0, 1.0], &[0.0]);
    let mut opt = AdamW::new(&params, ADAM_BETAS, ADAM_EPS, 0.0);
    opt.update(&mut params, &grads(&[3.0, -0.01, 0.0], &[-7.0]), 0.1).unwrap();
    let w = params.tensors()[0].data();
    // m̂/√v̂ = sign(g) on the first step, up to eps
    assert!((w[0] - 0.9).abs() < 1e-8);
    assert!((w[1] - 1.1).abs() < 1e-6);
    assert_eq!(w[2], 1.0);
    assert!((params.tensors()[1].data()[0] - 0.1).abs() < 1e-8);
}

#[test]
fn zero_gradient_applies_decay_to_weights_only() {
    let mut params = store(&[2.0, -4.0], &[5.0]);
    let mut opt = AdamW::new(&params, ADAM_BETAS, ADAM_EPS, 0.08);
    for _ in 0..3 {
        opt.update(&mut params, &grads(&[0.0, 0.0], &[0.0]), 0.01).unwrap();
    }
    let f = (1.0f64 - 0.01 * 0.08).powi(3);
    assert!((params.tensors()[0].data()[0] - 2.0 * f).abs() < 1e-15);
    assert!((params.tensors()[0].data()[1] + 4.0 * f).abs() < 1e-15);
    assert_eq!(params.tensors()[1].data()[0], 5.0);
}

#[test]
fn non_finite_gradients_are_refused_without_side_effects() {
    let mut params = store(&[1.0], &[1.0]);
    let mut opt = AdamW::new(&params, ADAM_BETAS, ADAM_EPS, 0.08);
    assert!(opt.update(&mut params, &grads(&[f64::NAN], &[0.0]), 0.1).is_err());
    assert_eq!(opt.step, 0);
    assert_eq!(params.tensors()[0].data()[0], 1.0);
}

#[test]
fn ema_weight_on_a_constant_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let decay = rng.random_range(0.5..0.9999);
        let k = rng.random_range(1..200);
        let mut shadow = store(&[0.0, 0.0], &[0.0]);
        let target = store(&[1.0, -3.0], &[0.5]);
        for _ in 0..k {
            ema_update(&mut shadow, &target, decay);
        }
        let frac = 1.0 - decay.powi(k);
        let s = shadow.tensors();
        assert!((s[0].data()[0] - frac).abs() < 1e-12);
        assert!((s[0].data()[1] + 3.0 * frac).abs() < 1e-12);
        assert!((s[1].data()[0] - 0.5 * frac).abs() < 1e-12);
    }
}

#[test]
fn schedule_shape() {
    let s = Schedule { base: 2e-4, min: 1e-7, warmup_steps: 10, total_steps: 110 };
    assert_eq!(s.lr_at(0), 0.0);
    assert!((s.lr_at(5) - 1e-4).abs() < 1e-18);
    assert_eq!(s.lr_at(10), 2e-4);
    let mid = 1e-7 + (2e-4 - 1e-7) * 0.5;
    assert!((s.lr_at(60) - mid).abs() < 1e-18);
    assert!((s.lr_at(110) - 1e-7).abs() < 1e-18);
    assert!((s.lr_at(500) - 1e-7).abs() < 1e-18);
    for k in 10..110 {
        assert!(s.lr_at(k + 1) <= s.lr_at(k));
    }
}

proptest! {
    #[test]
    fn clipping_bounds_the_global_norm(seed in any::<u64>(), scale in 0.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..6);
        let mut g: Vec<Tensor<f64>> = (0..n)
            .map(|_| Tensor::uniform(&[rng.random_range(1..40)], -scale, scale, &mut rng))
            .collect();
        let before = g.clone();
        let pre = clip_global_norm(&mut g, 0.5);
        prop_assert!((pre - global_norm(&before)).abs() <= 1e-12 * pre.max(1.0));
        let post = global_norm(&g);
        prop_assert!(post <= 0.5 + 1e-9);
        if pre <= 0.5 {
            prop_assert_eq!(&g, &before);
        } else {
            prop_assert!((post - 0.5).abs() < 1e-9);
            // direction is preserved
            for (a, b) in g.iter().zip(&before) {
                for (&x, &y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y * 0.5 / pre).abs() < 1e-12);
                }
            }
        }
    }
}
