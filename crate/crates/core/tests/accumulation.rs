//! Gradient accumulation over micro-batches against one concatenated batch.
use cliffordm::backbone::{CliffordM, ModelConfig};
use cliffordm::nn::Mode;
use cliffordm::tensor::Tensor;
use cliffordm::trainer::{accumulate_grads, loss_and_grads, AdamW, ADAM_BETAS, ADAM_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        input_size: 32,
        dim: 8,
        stem_width: 16,
        num_self_blocks: 1,
        high_grid: 8,
        low_grid: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn two_micro_batches_equal_one_full_batch() {
    let cfg = tiny();
    let (model, params) = CliffordM::build::<f64>(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (b, c, s) = (4, cfg.num_classes, cfg.input_size);
    let images = Tensor::<f64>::uniform(&[b, 3, s, s], -2.0, 2.0, &mut rng);
    let targets: Vec<f64> = (0..b * c).map(|_| rng.random_range(0.0..1.0)).collect();
    let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..15.0)).collect();
    let per = 3 * s * s;
    let half = |k: usize| {
        let img = Tensor::new(&[2, 3, s, s], images.data()[k * 2 * per..][..2 * per].to_vec()).unwrap();
        (img, targets[k * 2 * c..][..2 * c].to_vec())
    };

    // Eval mode: normalization uses running statistics, so samples are independent.
    let mut p_acc = params.clone();
    let mut rngs = vec![ChaCha8Rng::seed_from_u64(0), ChaCha8Rng::seed_from_u64(1)];
    let (losses, g_acc) =
        accumulate_grads(&model, &mut p_acc, vec![half(0), half(1)], &weights, Mode::Eval, &mut rngs).unwrap();

    let mut p_full = params.clone();
    let (loss, g_full) = loss_and_grads(
        &model,
        &mut p_full,
        images,
        &targets,
        &weights,
        1.0,
        Mode::Eval,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();

    assert!((0.5 * (losses[0] + losses[1]) - loss).abs() < 1e-12);
    let scale = g_full.iter().map(|g| g.max_abs()).fold(0.0f64, f64::max);
    assert!(scale > 0.0);
    for (a, f) in g_acc.iter().zip(&g_full) {
        assert!(a.max_abs_diff(f) < 1e-10 * scale.max(1.0));
    }

    let mut opt_a = AdamW::new(&p_acc, ADAM_BETAS, ADAM_EPS, 0.08);
    let mut opt_f = AdamW::new(&p_full, ADAM_BETAS, ADAM_EPS, 0.08);
    opt_a.update(&mut p_acc, &g_acc, 1e-3).unwrap();
    opt_f.update(&mut p_full, &g_full, 1e-3).unwrap();
    for (a, f) in p_acc.tensors().iter().zip(p_full.tensors()) {
        assert!(a.max_abs_diff(f) < 1e-10);
    }
}
