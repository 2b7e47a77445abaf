//! Analytic parameter and FLOP accounting.
//!
//! Convolutions and the linear layer cost 2 FLOPs per multiply-accumulate plus
//! one per output element for a bias. Elementwise costs per element:
//!
//! | op | FLOPs |
//! |---|---|
//! | BN (inference, folded affine) | 2 |
//! | LN over channels | 7 |
//! | SiLU | 4 |
//! | sigmoid | 3 |
//! | add, sub, mul, layer scale | 1 |
//! | average pooling | 1 per input element |
//! | bilinear resize | 7 per output element |
//!
//! The rolling interaction costs `3·|S|·D` multiplies, `|S|·D` wedge
//! subtractions, and `|S|·D` SiLUs per pixel, plus `D` for the context
//! difference.

use serde::Serialize;

use super::config::{ModelConfig, STEM_KERNEL};
use crate::blocks::RollingConfig;
use crate::error::Result;

/// Published totals for the default configuration.
pub const PUBLISHED_PARAMS: u64 = 851_900;
pub const PUBLISHED_PARAMS_NO_ENERGY: u64 = 820_000;
pub const PUBLISHED_FLOPS: u64 = 3_327_000_000;
/// Closed form of the stem convolution at 448: `2·3·49·192·112²`.
pub const STEM_CONV_FLOPS_448: u64 = 708_083_712;

const BN: u64 = 2;
const LN: u64 = 7;
const SILU: u64 = 4;
const SIGMOID: u64 = 3;
const BILINEAR: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileEntry {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

/// Per-module parameters and FLOPs at one input size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub input_size: usize,
    pub entries: Vec<ProfileEntry>,
}

impl Profile {
    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn entry(&self, name: &str) -> Option<&ProfileEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries summed by leading path segment (`stem`, `self`, ...), in first-seen order.
    pub fn components(&self) -> Vec<ProfileEntry> {
        let mut out: Vec<ProfileEntry> = Vec::new();
        for e in &self.entries {
            let comp = e.name.split('.').next().unwrap_or(&e.name);
            match out.iter_mut().find(|c| c.name == comp) {
                Some(c) => {
                    c.params += e.params;
                    c.flops += e.flops;
                }
                None => out.push(ProfileEntry { name: comp.to_string(), params: e.params, flops: e.flops }),
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,params,flops\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.name, e.params, e.flops));
        }
        s.push_str(&format!("total,{},{}\n", self.total_params(), self.total_flops()));
        s
    }
}

#[derive(Default)]
struct Acc {
    params: u64,
    flops: u64,
}

impl Acc {
    /// `k×k` convolution over `pixels` output positions.
    fn conv(&mut self, cin: u64, cout: u64, k: u64, groups: u64, pixels: u64, bias: bool) {
        let macs = cout * (cin / groups) * k * k;
        self.params += macs + if bias { cout } else { 0 };
        self.flops += 2 * macs * pixels + if bias { cout * pixels } else { 0 };
    }

    fn bn(&mut self, c: u64, pixels: u64) {
        self.params += 2 * c;
        self.flops += BN * c * pixels;
    }

    fn ln(&mut self, c: u64, pixels: u64) {
        self.params += 2 * c;
        self.flops += LN * c * pixels;
    }

    fn elementwise(&mut self, per_element: u64, elements: u64) {
        self.flops += per_element * elements;
    }
}

fn push(entries: &mut Vec<ProfileEntry>, name: &str, acc: Acc) {
    entries.push(ProfileEntry { name: name.to_string(), params: acc.params, flops: acc.flops });
}

/// Shared tail of the cross and self blocks: rolling interaction, projection, gated fusion.
fn interaction_and_fusion(acc: &mut Acc, d: u64, pixels: u64) -> Result<()> {
    let rc = RollingConfig::from_dim(d as usize)?;
    let s = rc.shifts.len() as u64;
    acc.elementwise(1, d * pixels);
    acc.flops += rc.multiplies(pixels as usize) as u64;
    acc.elementwise(1 + SILU, s * d * pixels);
    acc.conv(2 * s * d, d, 1, 1, pixels, true);
    fusion(acc, d, pixels);
    Ok(())
}

/// Gate conv, sigmoid, gated sum, SiLU, layer scale and residual add.
fn fusion(acc: &mut Acc, d: u64, pixels: u64) {
    acc.conv(2 * d, d, 1, 1, pixels, true);
    acc.elementwise(SIGMOID + 1 + SILU + 1 + 1 + 1, d * pixels);
    acc.params += d;
}

pub fn profile(cfg: &ModelConfig, input_size: usize) -> Result<Profile> {
    let mut cfg = cfg.clone();
    cfg.input_size = input_size;
    cfg.validate()?;
    let g = ModelConfig::stem_grid(input_size) as u64;
    let (d, w) = (cfg.dim as u64, cfg.stem_width as u64);
    let stem_px = g * g;
    let high_px = (cfg.high_grid * cfg.high_grid) as u64;
    let low_px = (cfg.low_grid * cfg.low_grid) as u64;
    let mut entries = Vec::new();

    let mut a = Acc::default();
    a.conv(3, w, STEM_KERNEL as u64, 1, stem_px, false);
    push(&mut entries, "stem.conv", a);

    let mut a = Acc::default();
    a.bn(w, stem_px);
    a.elementwise(SILU, w * stem_px);
    push(&mut entries, "stem.bn", a);

    for stream in ["high", "low"] {
        let mut a = Acc::default();
        a.conv(w, d, 1, 1, stem_px, false);
        a.bn(d, stem_px);
        a.elementwise(SILU, d * stem_px);
        push(&mut entries, &format!("stem.proj_{stream}"), a);

        let mut a = Acc::default();
        a.conv(d, d, 3, d, stem_px, false);
        a.bn(d, stem_px);
        a.elementwise(SILU, d * stem_px);
        a.conv(d, d, 1, 1, stem_px, false);
        a.bn(d, stem_px);
        a.elementwise(SILU + 1, d * stem_px);
        push(&mut entries, &format!("stem.res_{stream}"), a);
    }

    let mut a = Acc::default();
    a.elementwise(2, d * stem_px);
    push(&mut entries, "stem.pool", a);

    let mut a = Acc::default();
    a.conv(d, d, 1, 1, low_px, false);
    a.bn(d, low_px);
    a.elementwise(BILINEAR, d * high_px);
    push(&mut entries, "align", a);

    let mut a = Acc::default();
    a.ln(d, high_px);
    a.ln(d, high_px);
    a.conv(d, d, 1, 1, high_px, true);
    a.conv(d, d, 3, d, high_px, false);
    a.bn(d, high_px);
    a.elementwise(SILU, d * high_px);
    interaction_and_fusion(&mut a, d, high_px)?;
    push(&mut entries, "cross", a);

    for i in 0..cfg.num_self_blocks {
        let mut a = Acc::default();
        a.ln(d, high_px);
        a.conv(d, d, 1, 1, high_px, true);
        a.conv(d, d, 3, d, high_px, false);
        a.conv(d, d, 3, d, high_px, false);
        a.bn(d, high_px);
        a.elementwise(SILU, d * high_px);
        interaction_and_fusion(&mut a, d, high_px)?;
        push(&mut entries, &format!("self.{i}"), a);
    }

    if cfg.use_energy {
        let mut a = Acc::default();
        a.elementwise(1, d * low_px);
        a.ln(d, 1);
        a.conv(d, d, 1, 1, 1, true);
        a.elementwise(SILU, d);
        a.ln(d, high_px);
        fusion(&mut a, d, high_px);
        push(&mut entries, "energy", a);
    }

    let mut a = Acc::default();
    a.elementwise(1, d * high_px);
    a.ln(d, 1);
    a.conv(d, cfg.num_classes as u64, 1, 1, 1, true);
    push(&mut entries, "head", a);

    Ok(Profile { input_size, entries })
}

/// Profile at the configured input size.
pub fn count_params(cfg: &ModelConfig) -> Result<Profile> {
    profile(cfg, cfg.input_size)
}

pub fn count_flops(cfg: &ModelConfig, input_size: usize) -> Result<Profile> {
    profile(cfg, input_size)
}
