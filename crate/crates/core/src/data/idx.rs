//! IDX (MNIST-style) binary files: big-endian, magic-checked.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const OP: &str = "data::load_idx";

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        op: OP,
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, "truncated header"))
}

/// Parse an in-memory image/label pair. Pixels are scaled by 1/255.
pub fn read_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(0, format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let dim = rows * cols;
    let body = &images[16..];
    if body.len() < count * dim {
        return Err(format_err(
            16 + body.len(),
            format!("image data truncated: need {} bytes", count * dim),
        ));
    }

    let lmagic = be_u32(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(format_err(0, format!("label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let lcount = be_u32(labels, 4)? as usize;
    if lcount != count {
        return Err(format_err(4, format!("{lcount} labels for {count} images")));
    }
    let lbody = &labels[8..];
    if lbody.len() < count {
        return Err(format_err(8 + lbody.len(), "label data truncated"));
    }

    let features = Array2::from_shape_fn((count, dim), |(i, j)| body[i * dim + j] as f64 / 255.0);
    let labels: Vec<usize> = lbody[..count].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, Some(labels), class_count, "idx")
}

pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(image_path).map_err(|e| Error::io(OP, image_path, e))?;
    let labels = std::fs::read(label_path).map_err(|e| Error::io(OP, label_path, e))?;
    Ok(read_idx(&images, &labels)?.with_provenance(format!("idx:{}", image_path.display())))
}

#[cfg(test)]
pub(crate) fn encode_idx(pixels: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend((pixels.len() as u32).to_be_bytes());
    img.extend(rows.to_be_bytes());
    img.extend(cols.to_be_bytes());
    for p in pixels {
        img.extend(p);
    }
    let mut lab = Vec::new();
    lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    (img, lab)
}
