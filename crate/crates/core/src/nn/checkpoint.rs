//! Little-endian binary encoding of networks.
//!
//! Network block layout:
//!
//! | field        | type                         |
//! |--------------|------------------------------|
//! | magic        | `b"DVFM"`                    |
//! | version      | `u32` (currently 1)          |
//! | input dim    | `u32`                        |
//! | layer count  | `u32`                        |
//! | per layer    | `in u32`, `out u32`, `has_norm u8`, weight `f64 × out·in` (row-major), bias `f64 × out`, then gain and shift `f64 × out` each when `has_norm = 1` |
//!
//! Values are written as raw IEEE-754 bits, so a round trip is bit-exact.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::matrix::Matrix;
use super::mlp::{DenseLayer, LayerNorm, Mlp};
use crate::error::{Error, Result};

pub const MLP_MAGIC: [u8; 4] = *b"DVFM";
pub const MLP_VERSION: u32 = 1;

// Sanity bound against corrupt headers.
const MAX_DIM: u32 = 1 << 24;

pub(crate) fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out).map_err(io_err)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(out)
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v).map_err(io_err)
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(io_err)
}

pub fn read_dim<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = read_u32(r)?;
    if v > MAX_DIM {
        return Err(Error::Checkpoint(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    if &buf != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn write_mlp<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    w.write_all(&MLP_MAGIC).map_err(io_err)?;
    write_u32(w, MLP_VERSION)?;
    write_u32(w, net.input_dim() as u32)?;
    write_u32(w, net.layers().len() as u32)?;
    for layer in net.layers() {
        write_u32(w, layer.in_dim() as u32)?;
        write_u32(w, layer.out_dim() as u32)?;
        w.write_u8(layer.norm.is_some() as u8).map_err(io_err)?;
        write_f64s(w, layer.weight.values())?;
        write_f64s(w, &layer.bias)?;
        if let Some(n) = &layer.norm {
            write_f64s(w, &n.gain)?;
            write_f64s(w, &n.shift)?;
        }
    }
    Ok(())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    expect_magic(r, &MLP_MAGIC)?;
    let version = read_u32(r)?;
    if version != MLP_VERSION {
        return Err(Error::Checkpoint(format!("unsupported network version {version}")));
    }
    let input_dim = read_dim(r, "input dim")?;
    let count = read_dim(r, "layer count")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let inp = read_dim(r, "layer input")?;
        let out = read_dim(r, "layer output")?;
        let has_norm = r.read_u8().map_err(io_err)? != 0;
        let weight = Matrix::from_vec(out, inp, read_f64s(r, out * inp)?)?;
        let bias = read_f64s(r, out)?;
        let norm = if has_norm {
            Some(LayerNorm {
                gain: read_f64s(r, out)?,
                shift: read_f64s(r, out)?,
            })
        } else {
            None
        };
        layers.push(DenseLayer { weight, bias, norm });
    }
    Mlp::from_layers(input_dim, layers)
}
