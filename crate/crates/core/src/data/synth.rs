//! Procedural stand-in for a fundus dataset: each active label paints its own
//! color-distinct pattern onto a noisy fundus-like background.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use super::cmt::{cmt_write, AnyTensor};
use super::image::write_png;
use super::manifest::{write_manifest, Eye, SampleRecord};
use crate::error::{Error, Result};
use crate::seed::derive_rng;
use crate::tensor::Tensor;

pub const NUM_PATTERNS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub num_patients: usize,
    pub image_size: usize,
    /// Independent activation probability of each label.
    pub label_prior: Vec<f64>,
    /// Probability that a patient has both eyes; otherwise exactly one.
    pub both_eyes: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(num_patients: usize, image_size: usize, seed: u64) -> Self {
        Self {
            num_patients,
            image_size,
            label_prior: vec![0.3, 0.25, 0.2, 0.2, 0.15, 0.15, 0.2, 0.25],
            both_eyes: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_patients == 0 || self.image_size < 16 {
            return Err(Error::Config("synth needs patients and images of at least 16 px".into()));
        }
        if self.label_prior.len() != NUM_PATTERNS || self.label_prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("label_prior must hold {NUM_PATTERNS} probabilities")));
        }
        if !(0.0..=1.0).contains(&self.both_eyes) {
            return Err(Error::Config("both_eyes must be a probability".into()));
        }
        Ok(())
    }
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        let p = &mut self.px[y * self.size + x];
        for c in 0..3 {
            p[c] = p[c] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    fn each(&mut self, mut f: impl FnMut(f64, f64) -> Option<([f64; 3], f64)>) {
        let s = self.size;
        for y in 0..s {
            for x in 0..s {
                if let Some((color, a)) = f(x as f64 + 0.5, y as f64 + 0.5) {
                    self.blend(x, y, color, a);
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor<u8> {
        let s = self.size;
        let mut out = vec![0u8; 3 * s * s];
        for (i, p) in self.px.iter().enumerate() {
            for c in 0..3 {
                out[c * s * s + i] = p[c].round().clamp(0.0, 255.0) as u8;
            }
        }
        Tensor::new(&[3, s, s], out).expect("canvas shape")
    }
}

fn background(size: usize, rng: &mut impl Rng) -> Canvas {
    let c = size as f64 / 2.0;
    let r = size as f64 * 0.47;
    let px = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            let d = ((x - c).powi(2) + (y - c).powi(2)).sqrt() / r;
            let n = rng.random_range(-10.0..10.0);
            if d <= 1.0 {
                let shade = 1.0 - 0.35 * d * d;
                [175.0 * shade + n, 75.0 * shade + n, 35.0 * shade + n]
            } else {
                [8.0 + n.abs() * 0.3, 6.0, 6.0]
            }
        })
        .collect();
    Canvas { size, px }
}

/// Paints the pattern of label `k` at a random placement.
fn paint(canvas: &mut Canvas, k: usize, rng: &mut impl Rng) {
    let s = canvas.size as f64;
    let cx = s * rng.random_range(0.3..0.7);
    let cy = s * rng.random_range(0.3..0.7);
    let dist = move |x: f64, y: f64| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
    match k {
        0 => {
            let r = s * rng.random_range(0.08..0.14);
            canvas.each(|x, y| (dist(x, y) <= r).then_some(([255.0, 240.0, 160.0], 0.95)));
        }
        1 => {
            let r = s * rng.random_range(0.07..0.12);
            canvas.each(|x, y| {
                let t = 1.0 - dist(x, y) / r;
                (t > 0.0).then_some(([25.0, 15.0, 15.0], (2.0 * t).min(1.0)))
            });
        }
        2 => {
            let r = s * rng.random_range(0.15..0.25);
            let half = (s * 0.025).max(1.0);
            canvas.each(|x, y| ((dist(x, y) - r).abs() <= half).then_some(([60.0, 210.0, 90.0], 0.9)));
        }
        3 => {
            let half = s * 0.2;
            let period = (s / 18.0).max(3.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let (sn, cs) = theta.sin_cos();
            canvas.each(|x, y| {
                let inside = (x - cx).abs() <= half && (y - cy).abs() <= half;
                let phase = ((x - cx) * cs + (y - cy) * sn).rem_euclid(period);
                (inside && phase < period / 2.0).then_some(([70.0, 110.0, 255.0], 0.85))
            });
        }
        4 => {
            let half = s * 0.15;
            let cell = (s / 28.0).max(2.0);
            canvas.each(|x, y| {
                let inside = (x - cx).abs() <= half && (y - cy).abs() <= half;
                let parity = (((x - cx + half) / cell).floor() + ((y - cy + half) / cell).floor()) as i64 % 2 == 0;
                (inside && parity).then_some(([255.0, 60.0, 255.0], 0.9))
            });
        }
        5 => {
            let half = s * 0.18;
            canvas.each(|x, y| {
                let inside = (x - cx).abs() <= half && (y - cy).abs() <= half;
                let t = (x - cx + half) / (2.0 * half);
                inside.then_some(([0.0, 255.0, 255.0], 0.9 * t))
            });
        }
        6 => {
            let spread = s * 0.15;
            let dot = (s / 56.0).max(1.0);
            let dots: Vec<(f64, f64)> = (0..40)
                .map(|_| (cx + rng.random_range(-spread..spread), cy + rng.random_range(-spread..spread)))
                .collect();
            canvas.each(|x, y| {
                dots.iter().any(|&(dx, dy)| (x - dx).abs() <= dot && (y - dy).abs() <= dot).then_some(([255.0; 3], 0.95))
            });
        }
        7 => {
            let band = s * 0.06;
            canvas.each(|x, y| {
                let edge = x.min(y).min(s - x).min(s - y);
                (edge <= band).then_some(([150.0, 80.0, 220.0], 0.9))
            });
        }
        _ => unreachable!("pattern index checked by caller"),
    }
}

/// Renders one eye image for a label vector.
pub fn render_eye(labels: &[u8], size: usize, rng: &mut impl Rng) -> Tensor<u8> {
    let mut canvas = background(size, rng);
    for (k, _) in labels.iter().enumerate().filter(|(k, &l)| l == 1 && *k < NUM_PATTERNS) {
        paint(&mut canvas, k, rng);
    }
    canvas.into_tensor()
}

/// Patient records with their rendered images, in memory.
pub fn synth_samples(spec: &SynthSpec) -> Result<Vec<(SampleRecord, Vec<(Eye, Tensor<u8>)>)>> {
    spec.validate()?;
    let width = (spec.num_patients - 1).to_string().len().max(4);
    (0..spec.num_patients)
        .map(|i| {
            let mut rng = derive_rng(spec.seed, "synth-patient", &[i as u64]);
            let labels: Vec<u8> = spec.label_prior.iter().map(|&p| rng.random_bool(p) as u8).collect();
            let eyes = if rng.random_bool(spec.both_eyes) {
                vec![Eye::Left, Eye::Right]
            } else if rng.random_bool(0.5) {
                vec![Eye::Left]
            } else {
                vec![Eye::Right]
            };
            let id = format!("p{i:0width$}");
            let mut rec = SampleRecord { patient_id: id.clone(), left: None, right: None, labels };
            let mut images = Vec::new();
            for eye in eyes {
                let mut erng = derive_rng(spec.seed, "synth-eye", &[i as u64, eye as u64]);
                images.push((eye, render_eye(&rec.labels, spec.image_size, &mut erng)));
                let path = Some(PathBuf::from(format!("images/{id}_{}.png", eye.as_str())));
                match eye {
                    Eye::Left => rec.left = path,
                    Eye::Right => rec.right = path,
                }
            }
            Ok((rec, images))
        })
        .collect()
}

/// Writes `manifest.csv` and `images/<id>_<eye>.{png,cmt}` under `out`.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<Vec<SampleRecord>> {
    let samples = synth_samples(spec)?;
    let img_dir = out.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (rec, images) in samples {
        for (eye, img) in images {
            let stem = img_dir.join(format!("{}_{}", rec.patient_id, eye.as_str()));
            write_png(stem.with_extension("png"), &img)?;
            cmt_write(stem.with_extension("cmt"), &AnyTensor::U8(img))?;
        }
        records.push(rec);
    }
    let manifest = out.join("manifest.csv");
    std::fs::write(&manifest, write_manifest(&records)).map_err(|e| Error::io(&manifest, e))?;
    Ok(records)
}
