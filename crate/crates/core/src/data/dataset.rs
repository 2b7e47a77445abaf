use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::augment::{augment_train, eval_transform, AugmentConfig};
use super::cmt::cmt_read;
use super::image::{normalize, read_png};
use super::manifest::{parse_manifest, Eye, SampleRecord};
use super::split::{expand_eyes, patient_split, PatientSplit, Split};
use crate::error::{Error, Result};
use crate::seed::derive_rng;
use crate::tensor::{Scalar, Tensor};

/// A decoded image together with its patient metadata.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub patient_id: String,
    pub eye: Eye,
    pub path: PathBuf,
    pub labels: Vec<u8>,
    pub split: Split,
    pub image: Tensor<u8>,
}

/// All eye images of a manifest, preloaded as planar RGB bytes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<LoadedSample>,
    pub split: PatientSplit,
    pub num_classes: usize,
}

/// Reads `.png` or a u8 `.cmt` tensor of shape `[3, H, W]`.
pub fn load_image(path: &Path) -> Result<Tensor<u8>> {
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path)?,
        Some("cmt") => cmt_read(path)?.into_u8()?,
        _ => return Err(Error::Data(format!("{}: unsupported image extension", path.display()))),
    };
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::Data(format!("{}: expected a 3-channel image, got {:?}", path.display(), img.shape())));
    }
    Ok(img)
}

impl Dataset {
    /// Parses the manifest, splits patients and loads every image. Relative
    /// image paths resolve against the manifest's directory.
    pub fn load(manifest: &Path, ratio: f64, seed: u64) -> Result<Self> {
        let records = parse_manifest(manifest)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        Self::from_records(&records, base, ratio, seed)
    }

    pub fn from_records(records: &[SampleRecord], base: &Path, ratio: f64, seed: u64) -> Result<Self> {
        let num_classes = records.first().map_or(0, |r| r.labels.len());
        if num_classes == 0 {
            return Err(Error::Data("manifest has no samples".into()));
        }
        let split = patient_split(records, ratio, seed)?;
        let expanded = expand_eyes(records, &split)?;
        let samples = expanded
            .into_par_iter()
            .map(|s| {
                let path = if s.path.is_absolute() { s.path.clone() } else { base.join(&s.path) };
                let image = load_image(&path)?;
                Ok(LoadedSample { patient_id: s.patient_id, eye: s.eye, path, labels: s.labels, split: s.split, image })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, split, num_classes })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    /// Label matrix `[n, C]` for the given samples.
    pub fn targets(&self, idx: &[usize]) -> Vec<Vec<u8>> {
        idx.iter().map(|&i| self.samples[i].labels.clone()).collect()
    }

    fn stack<T: Scalar>(&self, idx: &[usize], size: usize, f: impl Fn(usize) -> Tensor<T> + Sync) -> Result<Tensor<T>> {
        let per = 3 * size * size;
        let planes: Vec<Tensor<T>> = idx.par_iter().map(|&i| f(i)).collect();
        let mut data = Vec::with_capacity(per * idx.len());
        for mut p in planes {
            normalize(&mut p);
            data.extend_from_slice(p.data());
        }
        Tensor::new(&[idx.len(), 3, size, size], data)
    }

    /// Augmented, normalized batch. Each sample draws from its own stream
    /// keyed by `(epoch, index)`, so results do not depend on batch layout.
    pub fn train_batch<T: Scalar>(&self, idx: &[usize], epoch: usize, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<T>> {
        self.stack(idx, cfg.size, |i| {
            let mut rng = derive_rng(seed, "augment", &[epoch as u64, i as u64]);
            augment_train(&self.samples[i].image, &mut rng, cfg)
        })
    }

    pub fn eval_batch<T: Scalar>(&self, idx: &[usize], size: usize) -> Result<Tensor<T>> {
        self.stack(idx, size, |i| eval_transform(&self.samples[i].image, size))
    }
}
