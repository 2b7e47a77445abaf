//! Checkpoint archive: named CMT1 records plus the model config.
//!
//! ```text
//! "CMA1" | u32 entry count | entries: u32 name length, name (UTF-8), u64 record length, CMT1 record
//! ```
//!
//! Parameters are stored under their path names, BN buffers as
//! `<bn>.running_mean` / `<bn>.running_var`, and the config as UTF-8 bytes
//! under `__config__`.

use std::path::Path;

use super::config::ModelConfig;
use super::model::CliffordM;
use crate::data::{cmt_decode, cmt_encode, AnyTensor};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{DType, Scalar, Tensor};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"CMA1";
pub const CONFIG_ENTRY: &str = "__config__";

fn to_any<T: Scalar>(t: &Tensor<T>) -> AnyTensor {
    match T::DTYPE {
        DType::F32 => AnyTensor::F32(t.cast()),
        _ => AnyTensor::F64(t.cast()),
    }
}

fn from_any<T: Scalar>(name: &str, t: AnyTensor) -> Result<Tensor<T>> {
    match t {
        AnyTensor::F32(t) => Ok(t.cast()),
        AnyTensor::F64(t) => Ok(t.cast()),
        AnyTensor::U8(_) => Err(Error::Format(format!("{name}: parameter record has u8 dtype"))),
    }
}

/// Serializes the parameters, BN buffers and config of a model.
pub fn encode_checkpoint<T: Scalar>(cfg: &ModelConfig, params: &ParamStore<T>) -> Vec<u8> {
    let text = cfg.to_kv().into_bytes();
    let mut entries: Vec<(String, AnyTensor)> = vec![(
        CONFIG_ENTRY.to_string(),
        AnyTensor::U8(Tensor::new(&[text.len()], text).expect("1-d config")),
    )];
    for (name, _, t) in params.iter() {
        entries.push((name.to_string(), to_any(t)));
    }
    for (name, st) in params.bn_names().iter().zip(params.bn_states()) {
        entries.push((format!("{name}.running_mean"), to_any(&st.running_mean)));
        entries.push((format!("{name}.running_var"), to_any(&st.running_var)));
    }
    let mut out = ARCHIVE_MAGIC.to_vec();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let rec = cmt_encode(&t);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("archive truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes the raw `(name, tensor)` entries of an archive.
pub fn decode_archive(buf: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != ARCHIVE_MAGIC {
        return Err(Error::Format("not a checkpoint archive".into()));
    }
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let len = usize::try_from(r.u64()?).map_err(|_| Error::Format("record too large".into()))?;
        out.push((name, cmt_decode(r.take(len)?)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after archive", buf.len() - r.pos)));
    }
    Ok(out)
}

/// Rebuilds the model from the stored config and fills every parameter and
/// buffer by name. Missing, unknown or misshapen entries are errors.
pub fn decode_checkpoint<T: Scalar>(buf: &[u8]) -> Result<(CliffordM, ParamStore<T>)> {
    let mut entries = decode_archive(buf)?;
    let pos = entries
        .iter()
        .position(|(n, _)| n == CONFIG_ENTRY)
        .ok_or_else(|| Error::Format("archive has no config entry".into()))?;
    let bytes = entries.swap_remove(pos).1.into_u8()?;
    let text = String::from_utf8(bytes.data().to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let cfg = ModelConfig::from_kv(&text)?;
    let (model, mut params) = CliffordM::build::<T>(&cfg, 0)?;
    let expected = params.len() + 2 * params.bn_states().len();
    if entries.len() != expected {
        return Err(Error::Format(format!("archive holds {} tensors, model needs {expected}", entries.len())));
    }
    let bn_names: Vec<String> = params.bn_names().to_vec();
    for (name, t) in entries {
        let value = from_any::<T>(&name, t)?;
        let slot = if let Some(id) = params.find(&name) {
            params.get_mut(id)
        } else {
            let (bn, field) = name
                .rsplit_once('.')
                .ok_or_else(|| Error::Format(format!("unknown entry {name}")))?;
            let i = bn_names.iter().position(|b| b == bn).ok_or_else(|| Error::Format(format!("unknown entry {name}")))?;
            let st = &mut params.bn_states_mut()[i];
            match field {
                "running_mean" => &mut st.running_mean,
                "running_var" => &mut st.running_var,
                _ => return Err(Error::Format(format!("unknown entry {name}"))),
            }
        };
        if slot.shape() != value.shape() {
            return Err(Error::Format(format!("{name}: shape {:?} != {:?}", value.shape(), slot.shape())));
        }
        *slot = value;
    }
    Ok((model, params))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, cfg: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CliffordM, ParamStore<T>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
