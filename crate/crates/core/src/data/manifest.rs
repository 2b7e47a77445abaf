//! Patient manifest CSV: `patient_id,left,right,<label columns>`.
//!
//! Label columns follow the fixed order `N,D,G,C,A,H,M,O`; headers may name
//! them by code or as `L0..L7`. Empty eye cells mean the eye is absent.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LABEL_CODES: [&str; 8] = ["N", "D", "G", "C", "A", "H", "M", "O"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub patient_id: String,
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    pub labels: Vec<u8>,
}

impl SampleRecord {
    pub fn eyes(&self) -> impl Iterator<Item = (Eye, &Path)> {
        [(Eye::Left, &self.left), (Eye::Right, &self.right)]
            .into_iter()
            .filter_map(|(e, p)| p.as_deref().map(|p| (e, p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }
}

fn label_header_ok(i: usize, name: &str) -> bool {
    name == format!("L{i}") || LABEL_CODES.get(i).is_some_and(|c| *c == name)
}

/// Parses manifest text; `origin` only labels diagnostics.
pub fn parse_manifest_str(text: &str, origin: &Path) -> Result<Vec<SampleRecord>> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["patient_id", "left", "right"] {
        return Err(err(1, format!("header must start with patient_id,left,right; got {cols:?}")));
    }
    let num_labels = cols.len() - 3;
    if let Some((i, bad)) = cols[3..].iter().enumerate().find(|(i, n)| !label_header_ok(*i, n)) {
        return Err(err(1, format!("label column {i} named {bad:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != cols.len() {
            return Err(err(line, format!("expected {} fields, found {}", cols.len(), row.len())));
        }
        let id = row[0].trim();
        if id.is_empty() {
            return Err(err(line, "empty patient_id".into()));
        }
        let path = |s: &str| (!s.trim().is_empty()).then(|| PathBuf::from(s.trim()));
        let (left, right) = (path(&row[1]), path(&row[2]));
        if left.is_none() && right.is_none() {
            return Err(err(line, format!("patient {id} has no eye image")));
        }
        let labels = (0..num_labels)
            .map(|i| match row[3 + i].trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(err(line, format!("label {} must be 0 or 1, found {other:?}", cols[3 + i]))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SampleRecord { patient_id: id.to_string(), left, right, labels });
    }
    Ok(out)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, path)
}

pub fn write_manifest(records: &[SampleRecord]) -> String {
    let n = records.first().map_or(LABEL_CODES.len(), |r| r.labels.len());
    let mut s = String::from("patient_id,left,right");
    for i in 0..n {
        match LABEL_CODES.get(i) {
            Some(code) if n <= LABEL_CODES.len() => s.push_str(&format!(",{code}")),
            _ => s.push_str(&format!(",L{i}")),
        }
    }
    s.push('\n');
    let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    for r in records {
        s.push_str(&format!("{},{},{}", r.patient_id, p(&r.left), p(&r.right)));
        for l in &r.labels {
            s.push_str(&format!(",{l}"));
        }
        s.push('\n');
    }
    s
}
