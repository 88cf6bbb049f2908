//! Flat little-endian weight files.
//!
//! ```text
//! u32 format version, u32 layer count
//! per layer: u32 in, u32 out, u32 activation tag,
//!            f64 × (out·in) weights (row-major), f64 × out bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

const OP_READ: &str = "nn::read_net";

pub fn write_net<W: Write>(net: &DenseNet, out: &mut W) -> std::io::Result<()> {
    out.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        out.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        out.write_all(&layer.activation.tag().to_le_bytes())?;
        for w in layer.weights.iter() {
            out.write_all(&w.to_le_bytes())?;
        }
        for b in layer.bias.iter() {
            out.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            op: OP_READ,
            offset: self.offset,
            msg: format!("truncated weight file ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            op: OP_READ,
            offset: self.offset,
            msg: msg.into(),
        }
    }
}

pub fn read_net<R: Read>(input: R) -> Result<DenseNet> {
    let mut cur = Cursor {
        inner: input,
        offset: 0,
    };
    let version = cur.u32()?;
    if version != WEIGHT_FORMAT_VERSION {
        return Err(cur.err(format!("unsupported weight format version {version}")));
    }
    let count = cur.u32()? as usize;
    if count == 0 {
        return Err(cur.err("weight file declares zero layers"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let fan_in = cur.u32()? as usize;
        let fan_out = cur.u32()? as usize;
        let tag = cur.u32()?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| cur.err(format!("unknown activation tag {tag}")))?;
        let mut weights = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            weights.push(cur.f64()?);
        }
        let mut bias = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            bias.push(cur.f64()?);
        }
        let weights = Array2::from_shape_vec((fan_out, fan_in), weights)
            .map_err(|e| cur.err(e.to_string()))?;
        layers.push(Layer {
            weights,
            bias: Array1::from(bias),
            activation,
        });
    }
    let mut rest = [0u8; 1];
    if cur.inner.read(&mut rest).map_err(|e| cur.err(e.to_string()))? != 0 {
        return Err(cur.err("trailing bytes after last layer"));
    }
    DenseNet::new(layers)
}

pub fn save_net(net: &DenseNet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io("nn::save_net", path, e))?;
    let mut out = BufWriter::new(file);
    write_net(net, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("nn::save_net", path, e))
}

pub fn load_net(path: &Path) -> Result<DenseNet> {
    let file = File::open(path).map_err(|e| Error::io("nn::load_net", path, e))?;
    read_net(BufReader::new(file))
}
