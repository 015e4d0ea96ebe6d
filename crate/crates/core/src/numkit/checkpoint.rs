//! Flat little-endian parameter files.
//!
//! Layout of one network block:
//!
//! ```text
//! b"FMLP"            4 bytes magic
//! version: u32       currently 1
//! n_dims: u32        number of entries in layer_dims
//! layer_dims: u32 x n_dims
//! for each layer l:  weight (dims[l] x dims[l+1], row-major f64)
//!                    bias   (dims[l+1] f64)
//! ```
//!
//! A file may hold several blocks back to back (a run stores all of its
//! networks in one file, in a fixed order).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numkit::mlp::{Linear, Mlp};

pub const MAGIC: &[u8; 4] = b"FMLP";
pub const VERSION: u32 = 1;

pub fn write_mlp<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.dims().len() as u32).to_le_bytes())?;
    for &d in net.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for s in net.param_slices() {
        for v in s {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = read_u32(r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let dims = (0..n).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n - 1);
    for w in dims.windows(2) {
        let weight = Array2::from_shape_vec((w[0], w[1]), read_f64s(r, w[0] * w[1])?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = Array1::from(read_f64s(r, w[1])?);
        layers.push(Linear { weight, bias });
    }
    Mlp::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(path: &Path, nets: &[&Mlp]) -> Result<()> {
    let mut buf = Vec::new();
    for net in nets {
        write_mlp(&mut buf, net)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Mlp>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let mut cur = std::io::Cursor::new(bytes.as_slice());
    let mut nets = Vec::new();
    while (cur.position() as usize) < bytes.len() {
        nets.push(read_mlp(&mut cur)?);
    }
    Ok(nets)
}
