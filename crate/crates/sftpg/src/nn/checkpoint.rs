//! Binary checkpoints for [`MlpNet`].
//!
//! Self-describing flat file, all multi-byte values little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MLPC"
//! 4       1     format version, currently 1
//! 5       1     activation tag: 0 softplus, 1 relu, 2 leaky relu
//! 6       2     reserved, zero
//! 8       8     leaky-relu negative slope as f64 (0.0 for other activations)
//! 16      4     input_dim  (u32)
//! 20      4     output_dim (u32)
//! 24      4     time_embed_dim (u32)
//! 28      4     number of hidden layers H (u32)
//! 32      4*H   hidden layer widths (u32 each)
//! ...     8     parameter count (u64)
//! ...     8*N   parameters as f64, layer-major: per layer the weight matrix
//!               row-major (fan_in x fan_out), then the bias row
//! ```
//!
//! Loading validates the magic, version, activation tag, parameter count
//! against the declared architecture, and that every parameter is finite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{Activation, MlpNet, MlpSpec};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"MLPC";
const VERSION: u8 = 1;

pub fn save_mlp(path: &Path, net: &MlpNet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    let (tag, slope) = match net.spec.activation {
        Activation::Softplus => (0u8, 0.0),
        Activation::Relu => (1u8, 0.0),
        Activation::LeakyRelu(s) => (2u8, s),
    };
    w.write_all(&[tag, 0, 0])?;
    w.write_all(&slope.to_le_bytes())?;
    w.write_all(&(net.spec.input_dim as u32).to_le_bytes())?;
    w.write_all(&(net.spec.output_dim as u32).to_le_bytes())?;
    w.write_all(&(net.spec.time_embed_dim as u32).to_le_bytes())?;
    w.write_all(&(net.spec.hidden_dims.len() as u32).to_le_bytes())?;
    for &h in &net.spec.hidden_dims {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for &p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<MlpNet> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = read_u8(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let tag = read_u8(&mut r)?;
    let mut reserved = [0u8; 2];
    r.read_exact(&mut reserved)?;
    let slope = read_f64(&mut r)?;
    let activation = match tag {
        0 => Activation::Softplus,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu(slope),
        _ => {
            return Err(Error::Checkpoint(format!(
                "{}: unknown activation tag {tag}",
                path.display()
            )))
        }
    };
    let input_dim = read_u32(&mut r)? as usize;
    let output_dim = read_u32(&mut r)? as usize;
    let time_embed_dim = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    if n_hidden > 1024 {
        return Err(Error::Checkpoint(format!(
            "{}: implausible hidden layer count {n_hidden}",
            path.display()
        )));
    }
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(read_u32(&mut r)? as usize);
    }
    let spec = MlpSpec {
        input_dim,
        hidden_dims,
        output_dim,
        activation,
        time_embed_dim,
    };
    spec.validate()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let count = read_u64(&mut r)? as usize;
    if count != spec.param_count() {
        return Err(Error::Checkpoint(format!(
            "{}: parameter count {count} does not match architecture ({} expected)",
            path.display(),
            spec.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let p = read_f64(&mut r)?;
        if !p.is_finite() {
            return Err(Error::Checkpoint(format!(
                "{}: non-finite parameter",
                path.display()
            )));
        }
        params.push(p);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after parameters",
            path.display()
        )));
    }
    Ok(MlpNet { spec, params })
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
