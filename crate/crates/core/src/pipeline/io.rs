//! On-disk formats: lossless PNG for sRGB images and raw little-endian
//! `f64` arrays with a JSON sidecar for everything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::bayer::{BayerPattern, RawMosaic};
use crate::error::{Error, Result};
use crate::noise::NoiseParams;
use crate::tensor::Tensor;

/// Decodes an 8- or 16-bit image to a 3-channel tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 65535.0))
}

/// Writes a 3-channel tensor as a 16-bit PNG, clamping to `[0, 1]`.
pub fn write_png16(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = img.shape();
    if c != 3 {
        return Err(Error::Dimension(format!("PNG output needs 3 channels, got {c}")));
    }
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Rgb(std::array::from_fn(|ch| {
            (img.at(ch, y as usize, x as usize).clamp(0.0, 1.0) * 65535.0).round() as u16
        }))
    });
    ensure_parent(path)?;
    let tmp = temp_path(path);
    buf.save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Sidecar metadata of an array file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Set for single-channel mosaics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<BayerPattern>,
    /// Nominal black and white level of the stored values.
    pub value_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
}

impl ArrayMeta {
    pub fn for_tensor(t: &Tensor) -> Self {
        ArrayMeta {
            channels: t.channels(),
            height: t.height(),
            width: t.width(),
            pattern: None,
            value_range: [0.0, 1.0],
            noise: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let tmp = temp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_bytes(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_array(path: &Path, t: &Tensor, meta: &ArrayMeta) -> Result<()> {
    if (meta.channels, meta.height, meta.width) != t.shape() {
        return Err(Error::Dimension("array metadata does not match the tensor shape".into()));
    }
    write_atomic(path, &f64_bytes(t.data()))?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_array(path: &Path) -> Result<(Tensor, ArrayMeta)> {
    let side = sidecar_path(path);
    let meta_bytes = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ArrayMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Data(format!("bad metadata {}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = f64_from_bytes(&bytes, path)?;
    let t = Tensor::from_vec(meta.channels, meta.height, meta.width, values)
        .map_err(|_| Error::Data(format!("{} does not match its metadata", path.display())))?;
    Ok((t, meta))
}

pub fn write_raw(path: &Path, raw: &RawMosaic, noise: Option<NoiseParams>) -> Result<()> {
    let meta = ArrayMeta {
        pattern: Some(raw.pattern()),
        noise,
        ..ArrayMeta::for_tensor(raw.data())
    };
    write_array(path, raw.data(), &meta)
}

/// Reads a mosaic; odd dimensions are center-cropped to even.
pub fn read_raw(path: &Path) -> Result<(RawMosaic, ArrayMeta)> {
    let (t, meta) = read_array(path)?;
    let pattern = meta
        .pattern
        .ok_or_else(|| Error::Data(format!("{} has no Bayer pattern in its metadata", path.display())))?;
    Ok((RawMosaic::ingest(t, pattern)?, meta))
}
