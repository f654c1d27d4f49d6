//! `VOXB` binary voxel container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VOXB"
//! 4       1     version (0x01)
//! 5       12    dx, dy, dz as u32 little-endian
//! 17      ...   ceil(dx*dy*dz / 8) bytes, x-fastest, MSB first
//! ```
//!
//! Pad bits after the last voxel must be zero.

use std::fs;
use std::path::Path;

use super::Reader;
use crate::data::VoxelGrid;
use crate::error::{format_err, Result};

pub const VOXB_MAGIC: &[u8; 4] = b"VOXB";
pub const VOXB_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 17;

pub fn encode_voxb(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let dims = grid.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + grid.len().div_ceil(8));
    out.extend_from_slice(VOXB_MAGIC);
    out.push(VOXB_VERSION);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| format_err(5, format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for chunk in grid.occupancy().chunks(8) {
        let mut byte = 0u8;
        for (i, &v) in chunk.iter().enumerate() {
            if v {
                byte |= 0x80 >> i;
            }
        }
        out.push(byte);
    }
    Ok(out)
}

pub fn decode_voxb(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != VOXB_MAGIC {
        return Err(format_err(0, format!("bad magic {magic:02x?}, expected \"VOXB\"")));
    }
    let version = r.u8("version")?;
    if version != VOXB_VERSION {
        return Err(format_err(4, format!("unsupported version {version:#04x}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u32("dimensions")? as usize;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(5, "voxel count overflows"))?;
    let payload_len = n.div_ceil(8);
    let payload = r.take(payload_len, "payload")?;
    if r.remaining() != 0 {
        return Err(format_err(
            r.pos(),
            format!("{} trailing bytes after payload", r.remaining()),
        ));
    }
    if n % 8 != 0 {
        let last = payload[payload_len - 1];
        let pad_mask = 0xffu8 >> (n % 8);
        if last & pad_mask != 0 {
            return Err(format_err(
                (HEADER_LEN + payload_len - 1) as u64,
                format!("nonzero pad bits {:#04x}", last & pad_mask),
            ));
        }
    }
    let occupancy = (0..n).map(|i| payload[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    VoxelGrid::from_occupancy(dims, occupancy)
}

pub fn write_voxb(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    fs::write(path, encode_voxb(grid)?)?;
    Ok(())
}

pub fn read_voxb(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    decode_voxb(&fs::read(path)?)
}
