//! The full Clifford-M network: stem, cross-scale fusion, self blocks,
//! optional energy gate and head, plus its profiler and checkpoint format.

mod checkpoint;
mod config;
mod model;
mod profile;
mod stem;

pub use checkpoint::{
    decode_archive, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ARCHIVE_MAGIC, CONFIG_ENTRY,
};
pub use config::{ModelConfig, STEM_KERNEL, STEM_PAD, STEM_STRIDE};
pub use model::{build_model, CliffordM, Features, Head, Session};
pub use profile::{
    count_flops, count_params, profile, Profile, ProfileEntry, PUBLISHED_FLOPS, PUBLISHED_PARAMS, PUBLISHED_PARAMS_NO_ENERGY,
    STEM_CONV_FLOPS_448,
};
pub use stem::{Align, ConvBnAct, DwResidual, SimpleStem};
