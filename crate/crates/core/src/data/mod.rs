//! Manifest parsing, patient-level splitting, augmentation, the synthetic
//! dataset and the CMT1 tensor container.

mod augment;
mod cmt;
mod dataset;
mod image;
mod manifest;
mod split;
mod synth;

pub use augment::{augment_train, eval_transform, sample_crop, AugmentConfig, CropBox, CROP_ATTEMPTS};
pub use cmt::{cmt_decode, cmt_encode, cmt_read, cmt_write, AnyTensor, MAGIC};
pub use dataset::{load_image, Dataset, LoadedSample};
pub use image::{normalize, read_png, to_unit, write_png, IMAGENET_MEAN, IMAGENET_STD};
pub use manifest::{parse_manifest, parse_manifest_str, write_manifest, Eye, SampleRecord, LABEL_CODES};
pub use split::{
    aggregate_labels, expand_eyes, patient_split, stratum_key, train_count, ExpandedSample, PatientSplit, Split,
};
pub use synth::{render_eye, synth_generate, synth_samples, SynthSpec, NUM_PATTERNS};
