//! Batch-1 CPU latency and a naive-vs-optimized check of the rolling kernel.
//! Field names follow the published latency table: params, mean, P90,
//! throughput, threads.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{build_model, ModelConfig};
use crate::blocks::{rolling_features, rolling_features_naive, shift_set};
use crate::error::Result;
use crate::tensor::Tensor;

/// Reference row for context only; hardware-bound and never asserted.
pub const PUBLISHED_MEAN_MS: f64 = 20.02;
pub const PUBLISHED_P90_MS: f64 = 20.32;
pub const PUBLISHED_THROUGHPUT: f64 = 49.95;
pub const PUBLISHED_THREADS: usize = 16;
pub const KERNEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct LatencyStats {
    pub repeats: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub min_ms: f64,
    pub throughput_img_s: f64,
}

/// Nearest-rank percentile of already sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn latency_stats(mut samples_ms: Vec<f64>, warmup: usize) -> LatencyStats {
    samples_ms.sort_by(f64::total_cmp);
    let mean = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    LatencyStats {
        repeats: samples_ms.len(),
        warmup,
        mean_ms: mean,
        p90_ms: percentile(&samples_ms, 0.9),
        min_ms: samples_ms[0],
        throughput_img_s: 1000.0 / mean,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub shape: [usize; 4],
    pub shifts: Vec<usize>,
    pub naive_ms: f64,
    pub optimized_ms: f64,
    pub speedup: f64,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub equivalent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PublishedReference {
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub throughput_img_s: f64,
    pub threads: usize,
    pub note: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub input_size: usize,
    pub dim: usize,
    pub use_energy: bool,
    pub params: usize,
    pub threads: usize,
    pub dtype: &'static str,
    pub latency: LatencyStats,
    pub kernel: KernelReport,
    pub published_reference: PublishedReference,
}

fn time_ms<R>(f: impl FnOnce() -> R) -> (f64, R) {
    let t = Instant::now();
    let r = f();
    (t.elapsed().as_secs_f64() * 1e3, r)
}

/// Times the naive scalar loop and the plane-vectorized kernel on the same
/// random `u, v` and compares their outputs elementwise.
pub fn kernel_bench(dim: usize, side: usize, repeats: usize) -> Result<KernelReport> {
    let shape = [1, dim, side, side];
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b65726e);
    let u = Tensor::<f32>::uniform(&shape, -1.0, 1.0, &mut rng);
    let v = Tensor::<f32>::uniform(&shape, -1.0, 1.0, &mut rng);
    let shifts = shift_set(dim)?;
    let repeats = repeats.max(1);
    let (mut naive_ms, mut opt_ms) = (0.0, 0.0);
    let (mut naive, mut fast) = (None, None);
    for _ in 0..repeats {
        let (t, r) = time_ms(|| rolling_features_naive(&u, &v, &shifts));
        naive_ms += t;
        naive = Some(r?.0);
        let (t, r) = time_ms(|| rolling_features(&u, &v, &shifts));
        opt_ms += t;
        fast = Some(r?);
    }
    let (naive, fast) = (naive.expect("at least one repeat"), fast.expect("at least one repeat"));
    let max_abs_diff = naive
        .data()
        .iter()
        .zip(fast.data())
        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
        .fold(0.0, f64::max);
    let (naive_ms, optimized_ms) = (naive_ms / repeats as f64, opt_ms / repeats as f64);
    Ok(KernelReport {
        shape,
        shifts,
        naive_ms,
        optimized_ms,
        speedup: naive_ms / optimized_ms,
        max_abs_diff,
        tolerance: KERNEL_TOL,
        equivalent: naive.shape() == fast.shape() && max_abs_diff <= KERNEL_TOL,
    })
}

/// Eval-mode batch-1 forward latency in f32 plus the kernel check.
pub fn bench(cfg: &ModelConfig, repeats: usize, warmup: usize) -> Result<BenchReport> {
    let (model, params) = build_model::<f32>(cfg, 0)?;
    let s = cfg.input_size;
    let x = Tensor::<f32>::uniform(&[1, 3, s, s], -2.0, 2.0, &mut ChaCha8Rng::seed_from_u64(1));
    for _ in 0..warmup {
        model.predict(&params, &x)?;
    }
    let mut samples = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let (t, r) = time_ms(|| model.predict(&params, &x));
        r?;
        samples.push(t);
    }
    Ok(BenchReport {
        input_size: s,
        dim: cfg.dim,
        use_energy: cfg.use_energy,
        params: params.num_scalars(),
        threads: rayon::current_num_threads(),
        dtype: "f32",
        latency: latency_stats(samples, warmup),
        kernel: kernel_bench(cfg.dim, cfg.high_grid, 3)?,
        published_reference: PublishedReference {
            mean_ms: PUBLISHED_MEAN_MS,
            p90_ms: PUBLISHED_P90_MS,
            throughput_img_s: PUBLISHED_THROUGHPUT,
            threads: PUBLISHED_THREADS,
            note: "published PyTorch CPU figures; hardware-bound, context only",
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentile() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.9), 9.0);
        assert_eq!(percentile(&[5.0], 0.9), 5.0);
        let st = latency_stats(vec![4.0, 2.0], 0);
        assert_eq!((st.mean_ms, st.p90_ms, st.throughput_img_s), (3.0, 4.0, 1000.0 / 3.0));
    }
}
