//! 8-bit PNG I/O and conversion to normalized float planes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel RGB statistics used for input normalization.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Decodes a PNG into a planar `3×H×W` u8 tensor. Gray is replicated, alpha dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<u8>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let bad = |e: png::DecodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::Data(format!("{}: unsupported color type {other:?}", path.display()))),
    };
    let mut out = vec![0u8; 3 * h * w];
    for y in 0..h {
        let row = &buf[y * info.line_size..][..w * channels];
        for x in 0..w {
            let px = &row[x * channels..][..channels];
            for c in 0..3 {
                out[(c * h + y) * w + x] = if channels < 3 { px[0] } else { px[c] };
            }
        }
    }
    Tensor::new(&[3, h, w], out)
}

/// Encodes a planar `3×H×W` u8 tensor as an RGB PNG.
pub fn write_png(path: impl AsRef<Path>, img: &Tensor<u8>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = match img.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::shape("write_png", format!("expected 3xHxW, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::shape("write_png", format!("expected 3 channels, got {c}")));
    }
    let mut px = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                px[(y * w + x) * 3 + ch] = img.data()[(ch * h + y) * w + x];
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(bad)?;
    writer.write_image_data(&px).map_err(bad)?;
    writer.finish().map_err(bad)
}

/// `u8` planes to floats in `[0, 1]`.
pub fn to_unit<T: Scalar>(img: &Tensor<u8>) -> Tensor<T> {
    img.map(|v| T::from_f64(v as f64 / 255.0))
}

/// `(x − mean_c) / std_c` per channel of a `3×H×W` tensor, in place.
pub fn normalize<T: Scalar>(img: &mut Tensor<T>) {
    let plane = img.len() / 3;
    for (c, p) in img.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (T::from_f64(IMAGENET_MEAN[c]), T::from_f64(IMAGENET_STD[c]));
        for v in p {
            *v = (*v - m) / s;
        }
    }
}
