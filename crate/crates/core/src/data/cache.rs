//! Flat dataset cache, little-endian, same conventions as the weight files:
//! `u32 version, u32 rows, u32 cols, u32 classes, u32 has_labels,
//! f64 × rows·cols, u32 × rows (labels, if present)`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const VERSION: u32 = 1;
const OP: &str = "data::read_dataset";

pub fn write_dataset<W: Write>(ds: &Dataset, out: &mut W) -> std::io::Result<()> {
    let header = [
        VERSION,
        ds.len() as u32,
        ds.dim() as u32,
        ds.class_count() as u32,
        u32::from(ds.labels().is_some()),
    ];
    for h in header {
        out.write_all(&h.to_le_bytes())?;
    }
    for v in ds.features().iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    if let Some(labels) = ds.labels() {
        for &y in labels {
            out.write_all(&(y as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut input: R, provenance: &str) -> Result<Dataset> {
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8]| -> Result<()> {
        input.read_exact(buf).map_err(|_| Error::Format {
            op: OP,
            offset,
            msg: "truncated dataset cache".into(),
        })?;
        offset += buf.len() as u64;
        Ok(())
    };
    let mut word = [0u8; 4];
    let mut header = [0u32; 5];
    for h in header.iter_mut() {
        take(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let [version, rows, cols, classes, has_labels] = header.map(|h| h as usize);
    if version != VERSION as usize {
        return Err(Error::Format {
            op: OP,
            offset: 0,
            msg: format!("unsupported dataset cache version {version}"),
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    let mut dword = [0u8; 8];
    for _ in 0..rows * cols {
        take(&mut dword)?;
        values.push(f64::from_le_bytes(dword));
    }
    let labels = if has_labels == 1 {
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            take(&mut word)?;
            labels.push(u32::from_le_bytes(word) as usize);
        }
        Some(labels)
    } else {
        None
    };
    let features = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::invalid_input(OP, e.to_string()))?;
    Dataset::new(features, labels, classes, provenance)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).map_err(|e| Error::io("data::save_dataset", path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io("data::save_dataset", path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(OP, path, e))?;
    read_dataset(std::io::BufReader::new(file), &format!("cache:{}", path.display()))
}
