use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, ADAM_BETAS, ADAM_EPS, MIN_LR};
use super::loss::{class_weights, smooth_targets};
use super::mix::{mix_batch, MixConfig};
use super::optim::{clip_global_norm, ema_update, AdamW, Schedule};
use crate::backbone::{save_checkpoint, CliffordM, Session};
use crate::data::{AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalBatch, MetricsReport};
use crate::nn::{Mode, ParamStore};
use crate::seed::derive_rng;
use crate::tensor::{Scalar, Tensor};

/// Fixed evaluation batch size; results do not depend on it.
pub const EVAL_BATCH: usize = 16;

/// Forward + backward on one micro-batch. `targets` are the final (mixed and
/// smoothed) `[B, C]` targets. The reverse pass is seeded with `scale`, so the
/// returned gradients are those of `scale · loss`; the loss itself is unscaled.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads<T: Scalar>(
    model: &CliffordM,
    params: &mut ParamStore<T>,
    images: Tensor<T>,
    targets: &[f64],
    weights: &[T],
    scale: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let b = images.shape()[0];
    let targets = Tensor::new(&[b, weights.len()], targets.iter().map(|&v| T::from_f64(v)).collect())?;
    let mut sess = Session::new(params);
    let loss = {
        let mut ctx = sess.ctx(params.bn_states_mut(), mode, rng);
        let x = ctx.tape.constant(images);
        let logits = model.forward(&mut ctx, x)?;
        ctx.tape.weighted_bce(logits, &targets, weights)?
    };
    let value = sess.tape.value(loss).data()[0].to_f64();
    let mut grads = sess.tape.backward_with(loss, Tensor::scalar(T::from_f64(scale)))?;
    let out = sess
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

/// Sums `1/k`-scaled gradients over `k` micro-batches. Returns the unscaled
/// per-micro-batch losses and the accumulated gradients.
pub fn accumulate_grads<T: Scalar>(
    model: &CliffordM,
    params: &mut ParamStore<T>,
    batches: Vec<(Tensor<T>, Vec<f64>)>,
    weights: &[T],
    mode: Mode,
    rngs: &mut [ChaCha8Rng],
) -> Result<(Vec<f64>, Vec<Tensor<T>>)> {
    let scale = 1.0 / batches.len() as f64;
    let mut acc: Option<Vec<Tensor<T>>> = None;
    let mut losses = Vec::with_capacity(batches.len());
    for ((images, targets), rng) in batches.into_iter().zip(rngs.iter_mut()) {
        let (loss, g) = loss_and_grads(model, params, images, &targets, weights, scale, mode, rng)?;
        losses.push(loss);
        match &mut acc {
            None => acc = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
        }
    }
    Ok((losses, acc.unwrap_or_default()))
}

/// Patience rule on a validation metric that should increase.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::NEG_INFINITY, best_epoch: None, since_best: 0 }
    }

    /// Records one epoch; returns `(improved, stop)`. NaN never improves.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = value > self.best;
        if improved {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_macro_auc: f64,
    pub val_f1opt: f64,
    pub val_f1_at_half: f64,
    pub best_val_auc: f64,
    pub skipped_steps: usize,
}

pub const HISTORY_HEADER: &str =
    "epoch,train_loss,lr,val_macro_auc,val_f1opt,val_f1_at_half,best_val_auc,skipped_steps";

pub fn history_csv(rows: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.lr, r.val_macro_auc, r.val_f1opt, r.val_f1_at_half, r.best_val_auc, r.skipped_steps
        );
    }
    s
}

/// Eval-mode scores (sigmoid of logits) and labels for `idx`.
pub fn score_split<T: Scalar>(
    model: &CliffordM,
    params: &ParamStore<T>,
    data: &Dataset,
    idx: &[usize],
    size: usize,
) -> Result<EvalBatch> {
    if idx.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut scores = Vec::with_capacity(idx.len() * data.num_classes);
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = model.predict(params, &data.eval_batch::<T>(chunk, size)?)?;
        scores.extend(logits.data().iter().map(|&z| z.to_f64().sigmoid()));
    }
    let labels = data.targets(idx).concat();
    EvalBatch::new(scores, labels, data.num_classes)
}

pub fn evaluate_split<T: Scalar>(
    model: &CliffordM,
    params: &ParamStore<T>,
    data: &Dataset,
    idx: &[usize],
    size: usize,
) -> Result<MetricsReport> {
    Ok(evaluate(&score_split(model, params, data, idx, size)?))
}

pub struct TrainOutcome<T> {
    pub model: CliffordM,
    /// EMA weights of the best validation epoch.
    pub best: ParamStore<T>,
    /// EMA weights after the final epoch.
    pub last: ParamStore<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_report: Option<MetricsReport>,
    pub class_weights: Vec<f64>,
    pub stopped_early: bool,
}

/// Header text that replays the run when fed back as a config file.
pub fn run_header(cfg: &RunConfig, num_params: usize, weights: &[f64], data: &Dataset) -> String {
    let mut s = String::from("# clifford-m training run\n");
    let _ = writeln!(s, "# parameters: {num_params}");
    let _ = writeln!(s, "# evaluation weights: ema (bn buffers copied from the live model)");
    let _ = writeln!(
        s,
        "# samples: train {} val {}",
        data.indices(Split::Train).len(),
        data.indices(Split::Val).len()
    );
    let w: Vec<String> = weights.iter().map(f64::to_string).collect();
    let _ = writeln!(s, "# class weights: {}", w.join(" "));
    s.push_str(&cfg.to_kv());
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full protocol. Each epoch runs `⌊n_train / (batch·accum)⌋` optimizer steps
/// over a fresh shuffle (the remainder is dropped), then scores the EMA
/// weights on the validation split. When `out` is given, `header.txt`,
/// `history.csv`, `best.ckpt`, `last.ckpt` and `val_metrics.json` are written
/// there.
pub fn train<T: Scalar>(cfg: &RunConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.num_classes != cfg.num_classes {
        return Err(Error::Config(format!("dataset has {} classes, config {}", data.num_classes, cfg.num_classes)));
    }
    let mcfg = cfg.model_config();
    let (model, mut params) = CliffordM::build::<T>(&mcfg, cfg.seed)?;
    let (train_idx, val_idx) = (data.indices(Split::Train), data.indices(Split::Val));
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Training("train and validation splits must both be non-empty".into()));
    }
    let group = cfg.batch_size * cfg.accum_steps;
    let steps_per_epoch = train_idx.len() / group;
    if steps_per_epoch == 0 {
        return Err(Error::Training(format!("{} training samples cannot fill one step of {group}", train_idx.len())));
    }
    let sched = Schedule {
        base: cfg.lr,
        min: MIN_LR,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let weights = class_weights(&data.targets(&train_idx), cfg.num_classes, cfg.weight_cap);
    let weights_t: Vec<T> = weights.iter().map(|&w| T::from_f64(w)).collect();
    let aug = AugmentConfig::new(cfg.input_size);
    let mix = MixConfig { mixup_alpha: cfg.mixup_alpha, cutmix_alpha: cfg.cutmix_alpha };
    let mut opt = AdamW::new(&params, ADAM_BETAS, ADAM_EPS, cfg.weight_decay);
    let mut ema = params.clone();
    let mut best = ema.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best_report = None;
    let (mut step, mut skipped, mut bad_in_a_row) = (0usize, 0usize, 0usize);
    let mut stopped_early = false;

    if let Some(dir) = out {
        write(&dir.join("header.txt"), &run_header(cfg, params.num_scalars(), &weights, data))?;
    }
    log::info!("training {} parameters, {steps_per_epoch} steps per epoch", params.num_scalars());

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut derive_rng(cfg.seed, "shuffle", &[epoch as u64]));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let mut lr = 0.0;
        for s in 0..steps_per_epoch {
            let mut batches = Vec::with_capacity(cfg.accum_steps);
            let mut rngs = Vec::with_capacity(cfg.accum_steps);
            for a in 0..cfg.accum_steps {
                let mb = (s * cfg.accum_steps + a) as u64;
                let idx = &order[mb as usize * cfg.batch_size..][..cfg.batch_size];
                let mut images = data.train_batch::<T>(idx, epoch, cfg.seed, &aug)?;
                let mut targets: Vec<f64> = data.targets(idx).concat().into_iter().map(f64::from).collect();
                if cfg.mix_enabled {
                    mix_batch(&mut images, &mut targets, &mut derive_rng(cfg.seed, "mix", &[epoch as u64, mb]), &mix)?;
                }
                batches.push((images, smooth_targets(&targets, cfg.smoothing)));
                rngs.push(derive_rng(cfg.seed, "stochastic", &[epoch as u64, mb]));
            }
            lr = sched.lr_at(step + 1);
            step += 1;
            match accumulate_grads(&model, &mut params, batches, &weights_t, Mode::Train, &mut rngs) {
                Ok((losses, mut grads)) if grads.iter().all(|g| g.all_finite()) => {
                    bad_in_a_row = 0;
                    loss_sum += losses.iter().sum::<f64>();
                    loss_n += losses.len();
                    clip_global_norm(&mut grads, cfg.grad_clip);
                    opt.update(&mut params, &grads, lr)?;
                    ema_update(&mut ema, &params, cfg.ema_decay);
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    skipped += 1;
                    bad_in_a_row += 1;
                    log::warn!("epoch {epoch} step {s}: non-finite loss or gradient, step skipped");
                    if bad_in_a_row >= 2 {
                        return Err(Error::Training(format!(
                            "non-finite loss on two consecutive steps (epoch {epoch}, step {s}); try a lower lr"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let report = evaluate_split(&model, &ema, data, &val_idx, cfg.input_size)?;
        let auc = report.macro_auc.unwrap_or(f64::NAN);
        let (improved, stop) = stopper.observe(epoch, auc);
        if improved {
            best = ema.clone();
            if let Some(dir) = out {
                save_checkpoint(&dir.join("best.ckpt"), &mcfg, &best)?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
                write(&dir.join("val_metrics.json"), &json)?;
            }
            best_report = Some(report.clone());
        }
        let rec = EpochRecord {
            epoch,
            train_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
            lr,
            val_macro_auc: auc,
            val_f1opt: report.macro_f1opt.unwrap_or(f64::NAN),
            val_f1_at_half: report.macro_f1_at_half.unwrap_or(f64::NAN),
            best_val_auc: stopper.best,
            skipped_steps: skipped,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} lr {:.3e} val auc {:.4} f1opt {:.4}",
            rec.train_loss,
            rec.lr,
            rec.val_macro_auc,
            rec.val_f1opt
        );
        history.push(rec);
        if let Some(dir) = out {
            write(&dir.join("history.csv"), &history_csv(&history))?;
        }
        if stop {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join("last.ckpt"), &mcfg, &ema)?;
    }
    Ok(TrainOutcome {
        model,
        best,
        last: ema,
        history,
        best_epoch: stopper.best_epoch,
        best_report,
        class_weights: weights,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnant_metric_stops_after_patience() {
        let mut es = EarlyStopping::new(30);
        let mut stop_at = None;
        for epoch in 1..=100 {
            let v = if epoch <= 7 { epoch as f64 / 10.0 } else { 0.1 };
            if es.observe(epoch, v).1 {
                stop_at = Some(epoch);
                break;
            }
        }
        assert_eq!((es.best_epoch, stop_at), (Some(7), Some(37)));
    }
}
