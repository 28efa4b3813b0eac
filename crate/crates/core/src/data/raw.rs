//! Raw image files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SFIM"  u32 count  u32 height  u32 width  u32 num_classes
//! count·height·width u8 pixels, row-major, image after image
//! count u8 labels
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::matrix::Matrix2D;
use crate::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"SFIM";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Parses an in-memory image file; `path` only labels errors.
pub fn read_images_raw(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if bytes.len() < 20 {
        return Err(format_err(path, "truncated header"));
    }
    if bytes[..4] != IMAGE_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (count, height, width, k) = (field(0), field(1), field(2), field(3));
    if k == 0 || k > 256 {
        return Err(format_err(path, format!("class count {k} outside 1..=256")));
    }
    let pixels = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| format_err(path, "header sizes overflow"))?;
    let expected = 20 + pixels + count;
    if bytes.len() < expected {
        return Err(format_err(path, format!("truncated: {} bytes, header implies {expected}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(format_err(path, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let data = bytes[20..20 + pixels].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = bytes[20 + pixels..].iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(format_err(path, format!("label {bad} outside [0, {k})")));
    }
    Dataset::plain(Matrix2D::from_vec(count, height * width, data)?, labels, k)
}

pub fn load_images_raw(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_images_raw(&bytes, path)
}

/// Writes `ds` as `height × width` images; pixels are rounded from `[0, 1]`.
pub fn write_images_raw(ds: &Dataset, height: usize, width: usize, path: &Path) -> Result<()> {
    if height * width != ds.num_features() {
        return Err(Error::shape(format!("{height}x{width} images need {} features", ds.num_features())));
    }
    if ds.num_classes > 256 {
        return Err(Error::InvalidArgument("at most 256 classes fit in a u8 label".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&IMAGE_MAGIC)?;
    for v in [ds.len(), height, width, ds.num_classes] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    let pixels: Vec<u8> = ds.x.as_slice().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&pixels)?;
    let labels: Vec<u8> = ds.labels.iter().map(|&l| l as u8).collect();
    out.write_all(&labels)?;
    out.flush()?;
    Ok(())
}
