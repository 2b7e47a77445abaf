use cliffordm::tensor::Tensor;
use cliffordm::trainer::{cutmix_box, cutmix_with, mix_batch, mixup_with, MixConfig, MixMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEFAULT_MIX: MixConfig = MixConfig { mixup_alpha: 0.3, cutmix_alpha: 1.0 };

#[test]
fn coin_splits_mixup_and_cutmix_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 10_000;
    let mut mixup = 0;
    for _ in 0..draws {
        let mut x = Tensor::<f32>::zeros(&[2, 1, 4, 4]);
        let mut y = vec![1.0, 0.0, 0.0, 1.0];
        match mix_batch(&mut x, &mut y, &mut rng, &DEFAULT_MIX).unwrap() {
            MixMode::MixUp { lambda } => {
                mixup += 1;
                assert!((0.0..=1.0).contains(&lambda));
            }
            MixMode::CutMix { lambda, height, width, .. } => {
                assert!((lambda - (1.0 - (height * width) as f64 / 16.0)).abs() < 1e-15);
            }
            MixMode::None => panic!("batch of two was not mixed"),
        }
        // mixed targets stay convex combinations
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((y[0] + y[1] - 1.0).abs() < 1e-12);
    }
    let frac = mixup as f64 / draws as f64;
    assert!((0.49..=0.51).contains(&frac), "mixup fraction {frac}");
}

#[test]
fn single_sample_batches_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = Tensor::<f64>::full(&[1, 3, 4, 4], 0.25);
    let mut y = vec![1.0, 0.0];
    assert_eq!(mix_batch(&mut x, &mut y, &mut rng, &DEFAULT_MIX).unwrap(), MixMode::None);
    assert_eq!(y, vec![1.0, 0.0]);
    assert!(x.data().iter().all(|&v| v == 0.25));
}

#[test]
fn mixup_is_an_exact_convex_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let y = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let perm = [2, 0, 1];
    let lambda = 0.37;
    let (mut xm, mut ym) = (x.clone(), y.clone());
    mixup_with(&mut xm, &mut ym, &perm, lambda);
    let per = 18;
    for i in 0..3 {
        for k in 0..per {
            let want = lambda * x.data()[i * per + k] + (1.0 - lambda) * x.data()[perm[i] * per + k];
            assert!((xm.data()[i * per + k] - want).abs() < 1e-15);
        }
        for c in 0..2 {
            let want = lambda * y[i * 2 + c] + (1.0 - lambda) * y[perm[i] * 2 + c];
            assert!((ym[i * 2 + c] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn cutmix_pastes_the_box_and_mixes_by_area() {
    let x = Tensor::<f64>::from_fn(&[2, 1, 4, 4], |i| if i < 16 { 0.0 } else { 1.0 });
    let (mut xm, mut ym) = (x.clone(), vec![1.0, 0.0, 0.0, 1.0]);
    let lambda = cutmix_with(&mut xm, &mut ym, &[1, 0], (1, 1, 2, 3));
    assert_eq!(lambda, 1.0 - 6.0 / 16.0);
    let pasted: f64 = xm.data()[..16].iter().sum();
    assert_eq!(pasted, 6.0);
    assert_eq!(xm.data()[16 + 4 + 1], 0.0);
    assert_eq!(ym, vec![lambda, 1.0 - lambda, 1.0 - lambda, lambda]);
}

#[test]
fn cutmix_boxes_stay_inside_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..2000 {
        let (h, w) = (rng.random_range(1..50), rng.random_range(1..50));
        let lambda = rng.random_range(0.0..1.0);
        let (top, left, bh, bw) = cutmix_box(h, w, lambda, &mut rng);
        assert!(top + bh <= h && left + bw <= w);
        let r = (1.0 - lambda).sqrt();
        assert!(bh <= (h as f64 * r) as usize + 1 && bw <= (w as f64 * r) as usize + 1);
    }
}
