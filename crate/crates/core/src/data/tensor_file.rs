//! The SCT1 tensor file format.
//!
//! Layout: bytes 0-3 ASCII `SCT1`; byte 4 dtype code (0x01 = f32
//! little-endian, 0x02 = f64 little-endian); byte 5 rank `r` (<= 8); then
//! `r` u32 little-endian dims; then the row-major payload. The f64 dtype
//! exists so checkpoints can round-trip training state bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SCT1";
const DTYPE_F32: u8 = 0x01;
const DTYPE_F64: u8 = 0x02;
const MAX_RANK: usize = 8;

fn encode(t: &Tensor, dtype: u8) -> Result<Vec<u8>> {
    if t.rank() > MAX_RANK {
        return Err(ScanError::data(format!("tensor rank {} exceeds format maximum {MAX_RANK}", t.rank())));
    }
    for (&dim, _) in t.shape().iter().zip(0..) {
        if dim == 0 {
            return Err(ScanError::data("tensor files cannot hold zero-sized dims".to_string()));
        }
        if dim > u32::MAX as usize {
            return Err(ScanError::data(format!("dim {dim} exceeds u32 range")));
        }
    }
    let elem = if dtype == DTYPE_F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + elem * t.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    out.push(t.rank() as u8);
    for &dim in t.shape() {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    match dtype {
        DTYPE_F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DTYPE_F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        other => return Err(ScanError::data(format!("unknown dtype code 0x{other:02x}"))),
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| ScanError::io(path, e))?;
    file.write_all(bytes).map_err(|e| ScanError::io(path, e))
}

/// Writes `t` with the f32 payload dtype (the interchange default).
pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &encode(t, DTYPE_F32)?)
}

/// Writes `t` with the f64 payload dtype (bit-exact; used by checkpoints).
pub fn write_tensor_file_f64(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &encode(t, DTYPE_F64)?)
}

/// Reads either dtype back into an f64 tensor.
pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| ScanError::io(path, e))?;
    let ctx = path.display();
    if bytes.len() < 6 {
        return Err(ScanError::data(format!("{ctx}: file too short for an SCT1 header")));
    }
    if &bytes[0..4] != MAGIC {
        return Err(ScanError::data(format!(
            "{ctx}: bad magic {:02x?}, expected {:02x?} (\"SCT1\")",
            &bytes[0..4],
            MAGIC
        )));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(ScanError::data(format!("{ctx}: rank {rank} exceeds format maximum {MAX_RANK}")));
    }
    let header_len = 6 + 4 * rank;
    if bytes.len() < header_len {
        return Err(ScanError::data(format!("{ctx}: truncated header ({} bytes)", bytes.len())));
    }
    let mut shape = Vec::with_capacity(rank);
    for r in 0..rank {
        let off = 6 + 4 * r;
        let dim = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        if dim == 0 {
            return Err(ScanError::data(format!("{ctx}: dim {r} is zero")));
        }
        shape.push(dim);
    }
    let count: usize = shape.iter().product();
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(ScanError::data(format!("{ctx}: unknown dtype code 0x{other:02x}"))),
    };
    let expected = header_len + count * elem;
    if bytes.len() != expected {
        return Err(ScanError::data(format!(
            "{ctx}: payload truncated or padded: header declares {count} values \
             ({expected} bytes total), file has {} bytes",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    match dtype {
        DTYPE_F32 => {
            for i in 0..count {
                let off = header_len + 4 * i;
                data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64);
            }
        }
        _ => {
            for i in 0..count {
                let off = header_len + 8 * i;
                data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")));
            }
        }
    }
    Tensor::from_vec(shape, data)
}
