//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        5 bytes   "SFLX1"
//! layer_count  u32       L
//! dims         (L+1) x u32  [input, hidden.., classes]
//! per layer l = 0..L:
//!     weight   n_out*n_in x f64, row-major (n_out, n_in)
//!     bias     n_out x f64
//! ```
//!
//! Nothing may follow the last bias block.

use std::io::{Read, Write};

use super::{Architecture, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SFLX1";

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let arch = params.arch();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(arch.num_layers() as u32).to_le_bytes())?;
    for &d in arch.dims() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    // flat layout already is [W_0, b_0, W_1, b_1, ..]
    for v in params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        reason: reason.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| bad("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let layers = read_u32(&mut input)? as usize;
    if layers == 0 || layers > 1024 {
        return Err(bad(format!("implausible layer count {layers}")));
    }
    let mut dims = Vec::with_capacity(layers + 1);
    for _ in 0..=layers {
        dims.push(read_u32(&mut input)? as usize);
    }
    let arch = Architecture::new(dims).map_err(|e| bad(e.to_string()))?;
    let mut values = Vec::with_capacity(arch.param_count());
    let mut b = [0u8; 8];
    for _ in 0..arch.param_count() {
        input
            .read_exact(&mut b)
            .map_err(|_| bad("truncated parameter block"))?;
        values.push(f64::from_le_bytes(b));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    ModelParams::from_values(arch, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let params = ModelParams::init(arch, 11);
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"SFLX1");
        assert_eq!(buf.len(), 5 + 4 + 3 * 4 + params.len() * 8);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn header_bytes_are_little_endian() {
        let params = ModelParams::zeros(Architecture::new(vec![1, 2]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();
        assert_eq!(&buf[5..9], &[1, 0, 0, 0]);
        assert_eq!(&buf[9..13], &[1, 0, 0, 0]);
        assert_eq!(&buf[13..17], &[2, 0, 0, 0]);
    }

    #[test]
    fn rejects_corruption() {
        let params = ModelParams::init(Architecture::new(vec![2, 2]).unwrap(), 1);
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(read_checkpoint(wrong_magic.as_slice()).is_err());

        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_checkpoint(trailing.as_slice()).is_err());
    }
}
