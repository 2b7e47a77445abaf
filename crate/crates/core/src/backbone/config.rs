use serde::Serialize;

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{parse_kv, parse_value};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub dim: usize,
    pub stem_width: usize,
    pub num_self_blocks: usize,
    pub use_energy: bool,
    pub drop_path_max: f64,
    pub head_dropout: f64,
    pub num_classes: usize,
    pub high_grid: usize,
    pub low_grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 448,
            dim: 96,
            stem_width: 192,
            num_self_blocks: 6,
            use_energy: true,
            drop_path_max: 0.2,
            head_dropout: 0.1,
            num_classes: 8,
            high_grid: 28,
            low_grid: 14,
        }
    }
}

pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 4;
pub const STEM_PAD: usize = 3;

impl ModelConfig {
    /// Side of the stem output grid for an `s×s` input.
    pub fn stem_grid(s: usize) -> usize {
        (s + 2 * STEM_PAD - STEM_KERNEL) / STEM_STRIDE + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return fail(format!("input_size {} must be a positive multiple of 16", self.input_size));
        }
        if self.dim < 8 || !self.dim.is_multiple_of(4) {
            return fail(format!("dim {} must be a multiple of 4 and at least 8", self.dim));
        }
        if self.num_self_blocks == 0 {
            return fail("num_self_blocks must be at least 1".into());
        }
        if self.stem_width == 0 || self.num_classes == 0 {
            return fail("stem_width and num_classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_path_max) || !(0.0..1.0).contains(&self.head_dropout) {
            return fail("drop_path_max and head_dropout must lie in [0, 1)".into());
        }
        let g = Self::stem_grid(self.input_size);
        if self.low_grid == 0 || self.low_grid > self.high_grid || self.high_grid > g {
            return fail(format!(
                "grids must satisfy 1 <= low ({}) <= high ({}) <= stem grid ({g})",
                self.low_grid, self.high_grid
            ));
        }
        Ok(())
    }

    /// Drop-path rate of self block `i`: linear ramp from 0 to `drop_path_max`, inclusive.
    pub fn self_block_rate(&self, i: usize) -> f64 {
        if self.num_self_blocks == 1 {
            0.0
        } else {
            self.drop_path_max * i as f64 / (self.num_self_blocks - 1) as f64
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 10] = [
        "input_size",
        "dim",
        "stem_width",
        "num_self_blocks",
        "use_energy",
        "drop_path_max",
        "head_dropout",
        "num_classes",
        "high_grid",
        "low_grid",
    ];

    /// Key-value text; floats print in shortest round-trip form.
    pub fn to_kv(&self) -> String {
        format!(
            "input_size = {}\ndim = {}\nstem_width = {}\nnum_self_blocks = {}\nuse_energy = {}\n\
             drop_path_max = {}\nhead_dropout = {}\nnum_classes = {}\nhigh_grid = {}\nlow_grid = {}\n",
            self.input_size,
            self.dim,
            self.stem_width,
            self.num_self_blocks,
            self.use_energy,
            self.drop_path_max,
            self.head_dropout,
            self.num_classes,
            self.high_grid,
            self.low_grid
        )
    }

    /// Inverse of [`to_kv`](Self::to_kv). Every key is required.
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text, Path::new("<config>"))?;
        if let Some(k) = map.keys().find(|k| !Self::KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown model key {k}")));
        }
        let get = |k: &str| map.get(k).map(String::as_str).ok_or_else(|| Error::Config(format!("missing model key {k}")));
        let cfg = Self {
            input_size: parse_value("input_size", get("input_size")?)?,
            dim: parse_value("dim", get("dim")?)?,
            stem_width: parse_value("stem_width", get("stem_width")?)?,
            num_self_blocks: parse_value("num_self_blocks", get("num_self_blocks")?)?,
            use_energy: parse_value("use_energy", get("use_energy")?)?,
            drop_path_max: parse_value("drop_path_max", get("drop_path_max")?)?,
            head_dropout: parse_value("head_dropout", get("head_dropout")?)?,
            num_classes: parse_value("num_classes", get("num_classes")?)?,
            high_grid: parse_value("high_grid", get("high_grid")?)?,
            low_grid: parse_value("low_grid", get("low_grid")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
