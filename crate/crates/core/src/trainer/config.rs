use std::path::Path;

use serde::Serialize;

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::kv::{parse_kv, parse_value};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const MIN_LR: f64 = 1e-7;
/// Grid sides of the two streams at full resolution.
pub const HIGH_GRID: usize = 28;
pub const LOW_GRID: usize = 14;

/// Everything that determines a training run. Serialized as flat
/// `key = value` text with exactly the keys in [`RunConfig::KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input_size: usize,
    pub dim: usize,
    pub num_self_blocks: usize,
    pub use_energy: bool,
    pub drop_path_max: f64,
    pub head_dropout: f64,
    pub num_classes: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub accum_steps: usize,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub smoothing: f64,
    pub weight_cap: f64,
    pub mix_enabled: bool,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_size: 448,
            dim: 96,
            num_self_blocks: 6,
            use_energy: true,
            drop_path_max: 0.2,
            head_dropout: 0.1,
            num_classes: 8,
            lr: 2e-4,
            weight_decay: 0.08,
            warmup_epochs: 10,
            epochs: 200,
            batch_size: 16,
            accum_steps: 2,
            grad_clip: 0.5,
            ema_decay: 0.9998,
            patience: 30,
            seed: 0,
            smoothing: 0.1,
            weight_cap: 15.0,
            mix_enabled: true,
            mixup_alpha: 0.3,
            cutmix_alpha: 1.0,
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 22] = [
        "input_size",
        "dim",
        "num_self_blocks",
        "use_energy",
        "drop_path_max",
        "head_dropout",
        "num_classes",
        "lr",
        "weight_decay",
        "warmup_epochs",
        "epochs",
        "batch_size",
        "accum_steps",
        "grad_clip",
        "ema_decay",
        "patience",
        "seed",
        "smoothing",
        "weight_cap",
        "mix_enabled",
        "mixup_alpha",
        "cutmix_alpha",
    ];

    /// Reduced run for a laptop CPU: 112 px inputs, D=32, three self blocks,
    /// 30 epochs. Optimizer, EMA and warmup horizons are shortened to match
    /// the much smaller number of optimizer steps.
    pub fn desk() -> Self {
        Self {
            input_size: 112,
            dim: 32,
            num_self_blocks: 3,
            lr: 2e-3,
            warmup_epochs: 2,
            epochs: 30,
            ema_decay: 0.99,
            ..Self::default()
        }
    }

    /// Architecture implied by the run: stem width 2·D, streams at 28/14
    /// clipped to the stem grid.
    pub fn model_config(&self) -> ModelConfig {
        let high = HIGH_GRID.min(ModelConfig::stem_grid(self.input_size));
        ModelConfig {
            input_size: self.input_size,
            dim: self.dim,
            stem_width: 2 * self.dim,
            num_self_blocks: self.num_self_blocks,
            use_energy: self.use_energy,
            drop_path_max: self.drop_path_max,
            head_dropout: self.head_dropout,
            num_classes: self.num_classes,
            high_grid: high,
            low_grid: (high * LOW_GRID / HIGH_GRID).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.grad_clip > 0.0) {
            return fail("lr and grad_clip must be positive, weight_decay non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.accum_steps == 0 || self.patience == 0 {
            return fail("epochs, batch_size, accum_steps and patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.ema_decay) || !(0.0..1.0).contains(&self.smoothing) {
            return fail("ema_decay and smoothing must lie in [0, 1)");
        }
        if self.weight_cap < 1.0 {
            return fail("weight_cap must be at least 1");
        }
        if self.mix_enabled && !(self.mixup_alpha > 0.0 && self.cutmix_alpha > 0.0) {
            return fail("mixup_alpha and cutmix_alpha must be positive");
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "input_size" => self.input_size = parse_value(key, v)?,
            "dim" => self.dim = parse_value(key, v)?,
            "num_self_blocks" => self.num_self_blocks = parse_value(key, v)?,
            "use_energy" => self.use_energy = parse_value(key, v)?,
            "drop_path_max" => self.drop_path_max = parse_value(key, v)?,
            "head_dropout" => self.head_dropout = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "accum_steps" => self.accum_steps = parse_value(key, v)?,
            "grad_clip" => self.grad_clip = parse_value(key, v)?,
            "ema_decay" => self.ema_decay = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "smoothing" => self.smoothing = parse_value(key, v)?,
            "weight_cap" => self.weight_cap = parse_value(key, v)?,
            "mix_enabled" => self.mix_enabled = parse_value(key, v)?,
            "mixup_alpha" => self.mixup_alpha = parse_value(key, v)?,
            "cutmix_alpha" => self.cutmix_alpha = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override string such as `epochs=5`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Starts from `base` and applies every key of a config text.
    pub fn from_kv_over(base: Self, text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = base;
        for (k, v) in parse_kv(text, origin)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        Self::from_kv_over(Self::default(), text, Path::new("<config>"))
    }

    pub fn to_kv(&self) -> String {
        let vals: [String; 22] = [
            self.input_size.to_string(),
            self.dim.to_string(),
            self.num_self_blocks.to_string(),
            self.use_energy.to_string(),
            self.drop_path_max.to_string(),
            self.head_dropout.to_string(),
            self.num_classes.to_string(),
            self.lr.to_string(),
            self.weight_decay.to_string(),
            self.warmup_epochs.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.accum_steps.to_string(),
            self.grad_clip.to_string(),
            self.ema_decay.to_string(),
            self.patience.to_string(),
            self.seed.to_string(),
            self.smoothing.to_string(),
            self.weight_cap.to_string(),
            self.mix_enabled.to_string(),
            self.mixup_alpha.to_string(),
            self.cutmix_alpha.to_string(),
        ];
        Self::KEYS.iter().zip(vals).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_and_unknown_keys() {
        let mut cfg = RunConfig::desk();
        cfg.lr = 0.1 + 0.2;
        assert_eq!(RunConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(RunConfig::from_kv("learning_rate = 1").is_err());
        assert!(cfg.clone().apply_override("epochs").is_err());
        let text = cfg.to_kv();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, RunConfig::KEYS);
    }

    #[test]
    fn derived_models() {
        let full = RunConfig::default().model_config();
        assert_eq!(full, ModelConfig::default());
        let desk = RunConfig::desk().model_config();
        assert_eq!((desk.stem_width, desk.high_grid, desk.low_grid), (64, 28, 14));
        desk.validate().unwrap();
    }
}
