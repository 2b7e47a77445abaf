//! Patient-level stratified splitting and eye expansion.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::manifest::{Eye, SampleRecord};
use crate::error::{Error, Result};
use crate::seed::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split {other:?} (train|val)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    /// Strata too small to divide; their patients went to train.
    pub singleton_strata: Vec<usize>,
}

impl PatientSplit {
    pub fn assignment(&self) -> HashMap<&str, Split> {
        let train = self.train.iter().map(|p| (p.as_str(), Split::Train));
        train.chain(self.val.iter().map(|p| (p.as_str(), Split::Val))).collect()
    }
}

/// Elementwise max of every record's labels, per patient, ordered by id.
pub fn aggregate_labels(records: &[SampleRecord]) -> BTreeMap<&str, Vec<u8>> {
    let mut agg: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in records {
        let e = agg.entry(&r.patient_id).or_insert_with(|| vec![0; r.labels.len()]);
        for (a, &l) in e.iter_mut().zip(&r.labels) {
            *a = (*a).max(l);
        }
    }
    agg
}

/// Index of the first maximum.
pub fn stratum_key(labels: &[u8]) -> usize {
    let mut best = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l > labels[best] {
            best = i;
        }
    }
    best
}

/// Train share of a stratum of `n` patients: `round(ratio·n)`, half up.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 0.5).floor().min(n as f64) as usize
}

/// Stratified patient split. Patients are grouped by the arg-max of their
/// aggregated label vector; each stratum is sorted by id, shuffled with a
/// seed derived from `(seed, key)`, and cut at `round(ratio·n)`.
pub fn patient_split(records: &[SampleRecord], ratio: f64, seed: u64) -> Result<PatientSplit> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("split ratio {ratio} outside [0, 1]")));
    }
    let agg = aggregate_labels(records);
    if agg.len() < 2 {
        return Err(Error::Data(format!("need at least 2 patients to split, found {}", agg.len())));
    }
    let mut strata: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, labels) in &agg {
        strata.entry(stratum_key(labels)).or_default().push(id);
    }
    let mut split = PatientSplit { train: vec![], val: vec![], singleton_strata: vec![] };
    for (key, mut ids) in strata {
        if ids.len() == 1 {
            log::warn!("stratum {key} has a single patient; assigning it to train");
            split.singleton_strata.push(key);
            split.train.push(ids[0].to_string());
            continue;
        }
        let mut rng = derive_rng(seed, "split", &[key as u64]);
        ids.shuffle(&mut rng);
        let n_train = train_count(ids.len(), ratio);
        split.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split.val.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.val.sort();
    Ok(split)
}

/// One image with the labels and split of its patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedSample {
    pub patient_id: String,
    pub eye: Eye,
    pub path: PathBuf,
    pub labels: Vec<u8>,
    pub split: Split,
}

/// One sample per present eye, in record order, left before right.
pub fn expand_eyes(records: &[SampleRecord], split: &PatientSplit) -> Result<Vec<ExpandedSample>> {
    let assign = split.assignment();
    let mut out = Vec::new();
    for r in records {
        let tag = *assign
            .get(r.patient_id.as_str())
            .ok_or_else(|| Error::Data(format!("patient {} missing from split", r.patient_id)))?;
        for (eye, path) in r.eyes() {
            out.push(ExpandedSample {
                patient_id: r.patient_id.clone(),
                eye,
                path: path.to_path_buf(),
                labels: r.labels.clone(),
                split: tag,
            });
        }
    }
    Ok(out)
}
