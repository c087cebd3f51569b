//! HMT: a batch of equally shaped heatmap stacks.
//!
//! Layout (little-endian):
//! - magic `b"HMT1"`
//! - `N`, `C`, `H`, `W` as `u32`
//! - `N·C·H·W` `f32` values, instance-major, then channel, row, column.
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write, so a
//! stack read from a file writes back to identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use heatpose_core::HeatmapStack;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"HMT1";
pub const HEADER_LEN: usize = 20;

pub fn write_hmt<W: Write>(mut out: W, stacks: &[HeatmapStack]) -> Result<()> {
    let dims = match stacks.first() {
        Some(s) => s.dims(),
        None => (0, 0, 0),
    };
    if let Some(bad) = stacks.iter().find(|s| s.dims() != dims) {
        return Err(Error::format(format!(
            "stacks must share dims: {dims:?} vs {:?}",
            bad.dims()
        )));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::format(format!("dimension {v} exceeds u32")));
    let mut buf = Vec::with_capacity(HEADER_LEN + stacks.len() * dims.0 * dims.1 * dims.2 * 4);
    buf.extend_from_slice(MAGIC);
    for d in [stacks.len(), dims.0, dims.1, dims.2] {
        buf.extend_from_slice(&to_u32(d)?.to_le_bytes());
    }
    for s in stacks {
        for &v in s.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_hmt<R: Read>(mut input: R) -> Result<Vec<HeatmapStack>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_hmt(&bytes)
}

pub fn parse_hmt(bytes: &[u8]) -> Result<Vec<HeatmapStack>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("HMT header truncated at {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad HMT magic {:?}", &bytes[..4])));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, c, h, w) = (field(0), field(1), field(2), field(3));
    let plane = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("HMT dims overflow"))?;
    let expected = n
        .checked_mul(plane)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format("HMT dims overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "HMT payload is {} bytes, {n}x{c}x{h}x{w} needs {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let mut stacks = Vec::with_capacity(n);
    for chunk in values.chunks_exact(plane.max(1)).take(n) {
        stacks.push(HeatmapStack::new(c, h, w, chunk.to_vec())?);
    }
    Ok(stacks)
}

pub fn save_hmt(path: impl AsRef<Path>, stacks: &[HeatmapStack]) -> Result<()> {
    let mut buf = Vec::new();
    write_hmt(&mut buf, stacks)?;
    fsutil::write(path, &buf)
}

pub fn load_hmt(path: impl AsRef<Path>) -> Result<Vec<HeatmapStack>> {
    parse_hmt(&fsutil::read(path)?)
}
